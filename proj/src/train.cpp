#include "tscir/train.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tscir/errors.hpp"
#include "tscir/losses.hpp"

namespace tscir {

void adamw_step(ParameterSet& ps, const std::map<std::string, Mat>& grads, AdamState& st,
                double learning_rate, double weight_decay) {
    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (auto& [name, p] : ps.params) {
        if (!ps.trainable.at(name)) continue;
        auto mit = st.m.find(name);
        if (mit == st.m.end()) {
            mit = st.m.emplace(name, Mat(p.rows, p.cols)).first;
            st.v.emplace(name, Mat(p.rows, p.cols));
        }
        Mat& m = mit->second;
        Mat& v = st.v.at(name);
        auto git = grads.find(name);
        const size_t n = p.a.size();
        for (size_t i = 0; i < n; ++i) {
            double g = (git != grads.end()) ? git->second.a[i] : 0.0;
            m.a[i] = st.beta1 * m.a[i] + (1.0 - st.beta1) * g;
            v.a[i] = st.beta2 * v.a[i] + (1.0 - st.beta2) * g * g;
            double mhat = m.a[i] / bc1;
            double vhat = v.a[i] / bc2;
            p.a[i] -= learning_rate *
                      (mhat / (std::sqrt(vhat) + st.eps) + weight_decay * p.a[i]);
        }
    }
}

std::string logs_to_jsonl(const std::vector<StepLog>& logs) {
    std::ostringstream ss;
    for (const auto& l : logs)
        ss << nlohmann::json{{"step", l.step},
                             {"L_map", l.l_map},
                             {"L_sta", l.l_sta},
                             {"L_comp", l.l_comp},
                             {"total", l.total}}
                  .dump()
           << "\n";
    return ss.str();
}

std::vector<std::string> freeze_policy_prefixes(int stage, const Toggles& toggles) {
    if (stage == 0) return {"img.", "txt."};
    if (stage == 1) {
        if (toggles.vsi_enabled) return {"map.", "vsi."};
        return {"map.phi."};
    }
    if (stage == 2) return {"adapter."};
    throw ArgumentError("unknown training stage " + std::to_string(stage));
}

namespace {

struct SampleTape {
    ad::Tape tape;
    std::unique_ptr<ParamLeaves> leaves;
    ad::Var out_a;  // primary output (1 x d)
    ad::Var out_b;  // secondary output (stage 2 only)
};

void check_finite(double loss, int step, uint64_t seed) {
    if (!std::isfinite(loss))
        throw StateError("non-finite loss at step " + std::to_string(step) + " (seed " +
                         std::to_string(seed) + "); aborting");
}

Mat caption_embedding(const Model& model, const std::string& caption) {
    TokenSequence toks = model.vocab.tokenize(caption, model.cfg.max_tokens);
    TextFeatures tf = model.encode_text_plain(toks);
    Mat c = tf.s_g;
    normalize_rows_inplace(c);
    return c;
}

}  // namespace

TrainResult pretrain_backbone(const std::vector<toy::PairRecord>& data, Model& model,
                              const TrainConfig& tcfg, const LossConfig& lcfg) {
    if (data.empty()) throw ArgumentError("backbone pretraining requires a non-empty dataset");
    if (tcfg.stage != 0) throw ConfigError("pretrain_backbone called with train.stage != 0");
    tcfg.validate();
    lcfg.validate();
    model.params.set_trainable_by_prefixes(freeze_policy_prefixes(0, tcfg.toggles));

    const int d = model.cfg.embed_dim;
    const int N = static_cast<int>(data.size());
    const double gamma = lcfg.gamma(lcfg.tau_stage1);

    // Parameters change every step, but rendered pixels and token ids are
    // fixed; cache those per distinct spec / caption.
    std::vector<int> spec_keys;
    std::map<int, int> spec_pos;
    std::vector<std::string> cap_keys;
    std::map<std::string, int> cap_pos;
    for (const auto& rec : data) {
        if (spec_pos.emplace(rec.spec.index(), (int)spec_keys.size()).second)
            spec_keys.push_back(rec.spec.index());
        if (cap_pos.emplace(rec.caption, (int)cap_keys.size()).second)
            cap_keys.push_back(rec.caption);
    }
    std::vector<Image> imgs(spec_keys.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < (int)spec_keys.size(); ++i)
        imgs[i] = toy::render(toy::SceneSpec::from_index(spec_keys[i]), model.cfg.image_size);
    std::vector<TokenSequence> toks(cap_keys.size());
    for (int i = 0; i < (int)cap_keys.size(); ++i)
        toks[i] = model.vocab.tokenize(cap_keys[i], model.cfg.max_tokens);

    AdamState opt;
    Rng order_rng(tcfg.seed);
    std::vector<StepLog> logs;
    int step = 0;

    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (int start = 0; start < N; start += tcfg.batch_size) {
            const int B = std::min(tcfg.batch_size, N - start);
            if (B < 2) continue;

            std::vector<std::unique_ptr<SampleTape>> samples(B);
#pragma omp parallel for schedule(dynamic)
            for (int i = 0; i < B; ++i) {
                const auto& rec = data[order[start + i]];
                auto ctx = std::make_unique<SampleTape>();
                ctx->leaves = std::make_unique<ParamLeaves>(ctx->tape, model.params);
                ad::Tape& t = ctx->tape;
                ad::Var img_states =
                    model.image_forward(t, *ctx->leaves, imgs[spec_pos.at(rec.spec.index())]);
                ctx->out_a = t.l2normalize_rows(t.get_row(img_states, 0));
                const TokenSequence& seq = toks[cap_pos.at(rec.caption)];
                ad::Var txt_states = model.text_forward(t, *ctx->leaves, seq, {});
                ctx->out_b =
                    t.l2normalize_rows(t.get_row(txt_states, Model::eos_position(seq)));
                samples[i] = std::move(ctx);
            }

            Mat Vg(B, d), Cg(B, d);
            for (int i = 0; i < B; ++i) {
                Vg.set_row(i, samples[i]->tape.val(samples[i]->out_a));
                Cg.set_row(i, samples[i]->tape.val(samples[i]->out_b));
            }

            ad::Tape lt;
            ad::Var V = lt.leaf(Vg, true);
            ad::Var C = lt.leaf(Cg, true);
            ad::Var loss = mapping_loss(lt, C, V, gamma);
            const double loss_value = lt.val(loss).at(0, 0);
            check_finite(loss_value, step, tcfg.seed);
            lt.backward(loss);
            const Mat& dV = lt.grad(V);
            const Mat& dC = lt.grad(C);

#pragma omp parallel for schedule(dynamic)
            for (int i = 0; i < B; ++i)
                samples[i]->tape.backward_seeded(
                    {{samples[i]->out_a, dV.row(i)}, {samples[i]->out_b, dC.row(i)}});

            std::map<std::string, Mat> grads;
            for (int i = 0; i < B; ++i) samples[i]->leaves->collect_grads(grads);
            adamw_step(model.params, grads, opt, tcfg.learning_rate, tcfg.weight_decay);

            ++step;
            logs.push_back({step, loss_value, 0.0, 0.0, loss_value});
        }
    }

    model.stage = 1;
    TrainResult out;
    out.logs = std::move(logs);
    out.checkpoint = model.to_checkpoint(1, order_rng.state());
    return out;
}

TrainResult run_stage1(const std::vector<toy::PairRecord>& data, Model& model,
                       const TrainConfig& tcfg, const LossConfig& lcfg) {
    if (data.empty()) throw ArgumentError("stage-1 training requires a non-empty dataset");
    if (tcfg.stage != 1) throw ConfigError("run_stage1 called with train.stage != 1");
    tcfg.validate();
    lcfg.validate();

    set_ablation(model, tcfg.toggles, 1);
    model.params.set_trainable_by_prefixes(freeze_policy_prefixes(1, tcfg.toggles));

    const int d = model.cfg.embed_dim;
    const int N = static_cast<int>(data.size());

    // The towers are frozen, so visual features and caption embeddings are
    // fixed for the whole run; compute them once per distinct spec / caption.
    std::vector<int> spec_keys;
    std::map<int, int> spec_pos;
    std::vector<std::string> cap_keys;
    std::map<std::string, int> cap_pos;
    for (const auto& rec : data) {
        if (spec_pos.emplace(rec.spec.index(), (int)spec_keys.size()).second)
            spec_keys.push_back(rec.spec.index());
        if (cap_pos.emplace(rec.caption, (int)cap_keys.size()).second)
            cap_keys.push_back(rec.caption);
    }
    std::vector<VisualFeatures> vis(spec_keys.size());
    std::vector<Mat> v_hat(spec_keys.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < (int)spec_keys.size(); ++i) {
        Image img = toy::render(toy::SceneSpec::from_index(spec_keys[i]), model.cfg.image_size);
        vis[i] = model.encode_image(img);
        v_hat[i] = vis[i].v_g;
        normalize_rows_inplace(v_hat[i]);
    }
    std::vector<Mat> c_hat(cap_keys.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < (int)cap_keys.size(); ++i)
        c_hat[i] = caption_embedding(model, cap_keys[i]);

    AdamState opt;
    Rng order_rng(tcfg.seed);
    std::vector<StepLog> logs;
    int step = 0;

    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (int start = 0; start < N; start += tcfg.batch_size) {
            const int B = std::min(tcfg.batch_size, N - start);
            if (B < 2) continue;

            std::vector<std::unique_ptr<SampleTape>> samples(B);
#pragma omp parallel for schedule(dynamic)
            for (int i = 0; i < B; ++i) {
                const auto& rec = data[order[start + i]];
                auto ctx = std::make_unique<SampleTape>();
                ctx->leaves = std::make_unique<ParamLeaves>(ctx->tape, model.params);
                auto out = model.pseudo_pipeline(ctx->tape, *ctx->leaves,
                                                vis[spec_pos.at(rec.spec.index())],
                                                PromptTemplate::p1(), std::nullopt,
                                                tcfg.toggles.vsi_enabled, false);
                ctx->out_a = out.s_hat;
                samples[i] = std::move(ctx);
            }

            Mat Sg(B, d), Vg(B, d), Cg(B, d);
            for (int i = 0; i < B; ++i) {
                const auto& rec = data[order[start + i]];
                Sg.set_row(i, samples[i]->tape.val(samples[i]->out_a));
                Vg.set_row(i, v_hat[spec_pos.at(rec.spec.index())]);
                Cg.set_row(i, c_hat[cap_pos.at(rec.caption)]);
            }

            ad::Tape lt;
            ad::Var S = lt.leaf(Sg, true);
            ad::Var V = lt.leaf(Vg, false);
            ad::Var C = lt.leaf(Cg, false);
            Stage1LossOut loss = stage1_loss(lt, S, V, C, lcfg, tcfg.toggles.sta_enabled);
            check_finite(loss.total_value, step, tcfg.seed);
            lt.backward(loss.total);
            const Mat& dS = lt.grad(S);

#pragma omp parallel for schedule(dynamic)
            for (int i = 0; i < B; ++i)
                samples[i]->tape.backward_seeded({{samples[i]->out_a, dS.row(i)}});

            std::map<std::string, Mat> grads;
            for (int i = 0; i < B; ++i) samples[i]->leaves->collect_grads(grads);
            adamw_step(model.params, grads, opt, tcfg.learning_rate, tcfg.weight_decay);

            ++step;
            logs.push_back({step, loss.map_value, loss.sta_value, 0.0, loss.total_value});
        }
    }

    model.stage = 1;
    TrainResult out;
    out.logs = std::move(logs);
    out.checkpoint = model.to_checkpoint(1, order_rng.state());
    return out;
}

TrainResult run_stage2(const toy::Manifest& data, const Checkpoint& stage1,
                       const TrainConfig& tcfg, const LossConfig& lcfg) {
    if (stage1.stage != 1)
        throw StateError("stage-2 training requires a stage-1 checkpoint (got stage " +
                         std::to_string(stage1.stage) + ")");
    if (tcfg.stage != 2) throw ConfigError("run_stage2 called with train.stage != 2");
    tcfg.validate();
    lcfg.validate();
    if (tcfg.toggles.hard_negatives_enabled && lcfg.hard_negative_k >= tcfg.batch_size)
        throw ConfigError("hard_negative_k (" + std::to_string(lcfg.hard_negative_k) +
                          ") must be smaller than batch_size (" +
                          std::to_string(tcfg.batch_size) + ")");
    if (data.triplets.empty())
        throw ArgumentError("stage-2 training requires a non-empty triplet dataset");

    Model model = Model::from_checkpoint(stage1);
    set_ablation(model, tcfg.toggles, 2);
    if (!tcfg.toggles.adapters_enabled)
        throw ConfigError("stage 2 trains the composing adapters; adapters must be enabled");
    model.params.set_trainable_by_prefixes(freeze_policy_prefixes(2, tcfg.toggles));

    const int d = model.cfg.embed_dim;
    const int N = static_cast<int>(data.triplets.size());

    // Per-triplet cached quantities: reference visual features, normalized
    // target image embedding, reference caption embedding.
    std::vector<int> ref_specs(N), tgt_specs(N);
    std::vector<std::string> ref_caps(N);
    for (int i = 0; i < N; ++i) {
        const auto& t = data.triplets[i];
        const auto& ref = data.image(t.reference_id);
        if (t.target_ids.empty())
            throw ArgumentError("triplet " + t.id + " has no target ids");
        const auto& tgt = data.image(t.target_ids.front());
        ref_specs[i] = ref.spec.index();
        tgt_specs[i] = tgt.spec.index();
        ref_caps[i] = ref.caption;
    }

    std::vector<int> spec_keys;
    std::map<int, int> spec_pos;
    for (int s : ref_specs)
        if (spec_pos.emplace(s, (int)spec_keys.size()).second) spec_keys.push_back(s);
    for (int s : tgt_specs)
        if (spec_pos.emplace(s, (int)spec_keys.size()).second) spec_keys.push_back(s);
    std::vector<std::string> cap_keys;
    std::map<std::string, int> cap_pos;
    for (const auto& c : ref_caps)
        if (cap_pos.emplace(c, (int)cap_keys.size()).second) cap_keys.push_back(c);

    std::vector<VisualFeatures> vis(spec_keys.size());
    std::vector<Mat> v_hat(spec_keys.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < (int)spec_keys.size(); ++i) {
        Image img = toy::render(toy::SceneSpec::from_index(spec_keys[i]), model.cfg.image_size);
        vis[i] = model.encode_image(img);
        v_hat[i] = vis[i].v_g;
        normalize_rows_inplace(v_hat[i]);
    }
    std::vector<Mat> c_hat(cap_keys.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < (int)cap_keys.size(); ++i)
        c_hat[i] = caption_embedding(model, cap_keys[i]);

    AdamState opt;
    Rng order_rng(tcfg.seed);
    std::vector<StepLog> logs;
    int step = 0;

    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        for (int start = 0; start < N; start += tcfg.batch_size) {
            const int B = std::min(tcfg.batch_size, N - start);
            if (B < 2) continue;

            std::vector<std::unique_ptr<SampleTape>> samples(B);
#pragma omp parallel for schedule(dynamic)
            for (int i = 0; i < B; ++i) {
                const int idx = order[start + i];
                const auto& t = data.triplets[idx];
                auto ctx = std::make_unique<SampleTape>();
                ctx->leaves = std::make_unique<ParamLeaves>(ctx->tape, model.params);
                const VisualFeatures& vf = vis[spec_pos.at(ref_specs[idx])];
                auto composed = model.pseudo_pipeline(ctx->tape, *ctx->leaves, vf,
                                                      PromptTemplate::p2(), t.modification,
                                                      tcfg.toggles.vsi_enabled, true);
                auto mapped = model.pseudo_pipeline(ctx->tape, *ctx->leaves, vf,
                                                    PromptTemplate::p1(), std::nullopt,
                                                    tcfg.toggles.vsi_enabled, true);
                ctx->out_a = composed.s_hat;
                ctx->out_b = mapped.s_hat;
                samples[i] = std::move(ctx);
            }

            Mat Z(B, d), T(B, d), Zm(B, d), Vr(B, d), Cg(B, d);
            for (int i = 0; i < B; ++i) {
                const int idx = order[start + i];
                Z.set_row(i, samples[i]->tape.val(samples[i]->out_a));
                Zm.set_row(i, samples[i]->tape.val(samples[i]->out_b));
                T.set_row(i, v_hat[spec_pos.at(tgt_specs[idx])]);
                Vr.set_row(i, v_hat[spec_pos.at(ref_specs[idx])]);
                Cg.set_row(i, c_hat[cap_pos.at(ref_caps[idx])]);
            }

            // Hard-negative mining on detached values. Candidates for sample i
            // are the other targets in the batch whose spec differs from its
            // ground truth; k is clamped so every sample mines the same count.
            std::optional<Mat> negs_mat;
            if (tcfg.toggles.hard_negatives_enabled && lcfg.hard_negative_k > 0) {
                int k_eff = lcfg.hard_negative_k;
                std::vector<std::vector<int>> cand(B);
                for (int i = 0; i < B; ++i) {
                    for (int j = 0; j < B; ++j)
                        if (j != i && tgt_specs[order[start + j]] != tgt_specs[order[start + i]])
                            cand[i].push_back(j);
                    k_eff = std::min(k_eff, (int)cand[i].size());
                }
                if (k_eff > 0) {
                    LossConfig mcfg = lcfg;
                    mcfg.hard_negative_k = k_eff;
                    Mat negs(B * k_eff, d);
                    for (int i = 0; i < B; ++i) {
                        Mat candidates((int)cand[i].size(), d);
                        for (int c = 0; c < (int)cand[i].size(); ++c)
                            candidates.set_row(c, T.row(cand[i][c]));
                        MinedNegatives mined =
                            mine_hard_negatives(Z.row(i), T.row(i), candidates, mcfg);
                        for (int r = 0; r < k_eff; ++r)
                            negs.set_row(i * k_eff + r, mined.mixed.row(r));
                    }
                    negs_mat = std::move(negs);
                }
            }

            ad::Tape lt;
            ad::Var Zv = lt.leaf(Z, true);
            ad::Var Tv = lt.leaf(T, false);
            ad::Var Zmv = lt.leaf(Zm, true);
            ad::Var Vv = lt.leaf(Vr, false);
            ad::Var Cv = lt.leaf(Cg, false);
            std::optional<ad::Var> negs_var;
            if (negs_mat) negs_var = lt.leaf(*negs_mat, false);
            Stage2LossOut loss = stage2_loss(lt, Zv, Tv, negs_var, Zmv, Vv, Cv, lcfg,
                                             tcfg.toggles.sta_enabled);
            check_finite(loss.total_value, step, tcfg.seed);
            lt.backward(loss.total);
            const Mat& dZ = lt.grad(Zv);
            const Mat& dZm = lt.grad(Zmv);

#pragma omp parallel for schedule(dynamic)
            for (int i = 0; i < B; ++i)
                samples[i]->tape.backward_seeded(
                    {{samples[i]->out_a, dZ.row(i)}, {samples[i]->out_b, dZm.row(i)}});

            std::map<std::string, Mat> grads;
            for (int i = 0; i < B; ++i) samples[i]->leaves->collect_grads(grads);
            adamw_step(model.params, grads, opt, tcfg.learning_rate, tcfg.weight_decay);

            ++step;
            logs.push_back(
                {step, loss.map_value, loss.sta_value, loss.comp_value, loss.total_value});
        }
    }

    model.stage = 2;
    TrainResult out;
    out.logs = std::move(logs);
    out.checkpoint = model.to_checkpoint(2, order_rng.state());
    return out;
}

}  // namespace tscir
