// Acceptance harness: one pass/fail line per criterion, exit 0 iff all pass.
//
// Criteria 1-6 and 10 are property checks against independent oracles.
// Criteria 7-9 rerun the fixed toy benchmark (512 stage-I pairs, 1024
// triplets, 256-image gallery, d=64, 2+2 layers, 3 seeds); every margin below
// was pre-registered from a reference run of this same binary and the whole
// pipeline is deterministic, so the comparison is exact.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tscir/errors.hpp"
#include "tscir/losses.hpp"
#include "tscir/model.hpp"
#include "tscir/retrieval.hpp"
#include "tscir/rng.hpp"
#include "tscir/toydata.hpp"
#include "tscir/train.hpp"

using namespace tscir;

namespace {

int g_failed_checks = 0;

#define EXPECT(cond)                                                              \
    do {                                                                          \
        if (!(cond)) {                                                            \
            ++g_failed_checks;                                                    \
            std::cout << "    check failed at line " << __LINE__ << ": " << #cond \
                      << "\n";                                                    \
        }                                                                         \
    } while (0)

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (auto& x : m.a) x = rng.normal() * scale;
    return m;
}

Mat random_unit_rows(int r, int c, Rng& rng) {
    Mat m = random_mat(r, c, rng);
    normalize_rows_inplace(m);
    return m;
}

// ---- independent brute-force loss references (triple loops, no shared code
// with src/losses.cpp) ----

double ref_infonce(const Mat& U, const Mat& O, double gamma) {
    const int B = U.rows;
    double loss = 0;
    for (int i = 0; i < B; ++i) {
        double denom = 0;
        for (int j = 0; j < B; ++j) denom += std::exp(gamma * dot_rows(U, i, O, j));
        loss += -std::log(std::exp(gamma * dot_rows(U, i, O, i)) / denom);
    }
    return loss / B;
}

double ref_soft_alignment(const Mat& V, const Mat& S, const Mat& C, double gamma) {
    const int B = V.rows;
    double loss = 0;
    for (int i = 0; i < B; ++i) {
        std::vector<double> p(B), q(B);
        double zp = 0, zq = 0;
        for (int j = 0; j < B; ++j) {
            p[j] = std::exp(gamma * dot_rows(V, i, C, j));
            q[j] = std::exp(gamma * dot_rows(S, i, C, j));
            zp += p[j];
            zq += q[j];
        }
        for (int j = 0; j < B; ++j)
            loss += p[j] / zp * (std::log(p[j] / zp) - std::log(std::max(q[j] / zq, 1e-12)));
    }
    return loss / B;
}

double ref_composed(const Mat& Z, const Mat& T, const Mat* N, int k, double gamma) {
    const int B = Z.rows;
    double t2i = 0;
    for (int i = 0; i < B; ++i) {
        double denom = 0;
        for (int j = 0; j < B; ++j) denom += std::exp(gamma * dot_rows(Z, i, T, j));
        for (int l = 0; l < k; ++l) denom += std::exp(gamma * dot_rows(Z, i, *N, i * k + l));
        t2i += -std::log(std::exp(gamma * dot_rows(Z, i, T, i)) / denom);
    }
    double i2t = 0;
    for (int i = 0; i < B; ++i) {
        double denom = 0;
        for (int j = 0; j < B; ++j) denom += std::exp(gamma * dot_rows(T, i, Z, j));
        i2t += -std::log(std::exp(gamma * dot_rows(T, i, Z, i)) / denom);
    }
    return t2i / B + i2t / B;
}

ModelConfig small_config(uint64_t seed, int d = 8) {
    ModelConfig cfg;
    cfg.embed_dim = d;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.max_tokens = 16;
    cfg.num_layers_img = 1;
    cfg.num_layers_txt = 2;
    cfg.num_heads = 2;
    cfg.latent_dim = 4;
    cfg.adapter_dim = 4;
    cfg.seed = seed;
    return cfg;
}

// Central finite differences on every parameter whose name starts with any of
// the given prefixes; `forward` re-evaluates the scalar from scratch.
bool fd_params_match(Model& m, const std::vector<std::string>& prefixes,
                     const std::function<double()>& forward,
                     const std::map<std::string, Mat>& analytic, double tol) {
    const double h = 1e-5;
    bool ok = true;
    for (auto& [name, p] : m.params.params) {
        bool selected = false;
        for (const auto& pre : prefixes) selected = selected || name.rfind(pre, 0) == 0;
        if (!selected) continue;
        auto it = analytic.find(name);
        // Sample a handful of coordinates per tensor to keep runtime bounded.
        size_t stride = std::max<size_t>(1, p.a.size() / 6);
        for (size_t i = 0; i < p.a.size(); i += stride) {
            double save = p.a[i];
            p.a[i] = save + h;
            double up = forward();
            p.a[i] = save - h;
            double down = forward();
            p.a[i] = save;
            double fd = (up - down) / (2 * h);
            double an = it == analytic.end() ? 0.0 : it->second.a[i];
            double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
            if (std::fabs(fd - an) / denom > tol) {
                std::cout << "    fd mismatch " << name << "[" << i << "]: analytic=" << an
                          << " fd=" << fd << "\n";
                ok = false;
            }
        }
    }
    return ok;
}

double median3(double a, double b, double c) {
    std::vector<double> v{a, b, c};
    std::sort(v.begin(), v.end());
    return v[1];
}

// ---------------------------------------------------------------------------
// criterion 1: loss-oracle equivalence, 1000 random batches
// ---------------------------------------------------------------------------
bool criterion1() {
    Rng rng(1001);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        int B = 2 + (int)rng.below(7);   // <= 8
        int d = 2 + (int)rng.below(15);  // <= 16
        double gamma = 1.0 / (0.02 + rng.uniform() * 0.2);
        Mat U = random_unit_rows(B, d, rng), O = random_unit_rows(B, d, rng);
        Mat C = random_unit_rows(B, d, rng);
        int k = (int)rng.below(4);
        Mat N = random_unit_rows(B * std::max(k, 1), d, rng);

        ad::Tape t;
        double got_c = t.val(contrastive_loss(t, t.leaf(U), t.leaf(O), gamma)).at(0, 0);
        double got_s =
            t.val(soft_alignment_loss(t, t.leaf(U), t.leaf(O), t.leaf(C), gamma)).at(0, 0);
        std::optional<ad::Var> negs;
        if (k > 0) negs = t.leaf(N);
        double got_z = t.val(composed_loss(t, t.leaf(U), t.leaf(O), negs, gamma)).at(0, 0);

        worst = std::max(worst, std::fabs(got_c - ref_infonce(U, O, gamma)));
        worst = std::max(worst, std::fabs(got_s - ref_soft_alignment(U, O, C, gamma)));
        worst = std::max(worst, std::fabs(got_z - ref_composed(U, O, k ? &N : nullptr, k, gamma)));
    }
    std::cout << "    worst |loss - oracle| over 1000 batches: " << worst << "\n";
    return worst <= 1e-9;
}

// ---------------------------------------------------------------------------
// criterion 2: finite-difference gradient suite
// ---------------------------------------------------------------------------
bool criterion2() {
    const double tol = 1e-4, h = 1e-6;
    bool ok = true;
    Rng rng(2002);

    // Losses: gradients w.r.t. raw (pre-normalization) inputs, FD on the same
    // scalar. Covers contrastive, mapping, soft-alignment, composed.
    for (int which = 0; which < 4; ++which) {
        int B = 3, d = 6, k = 2;
        Mat A = random_mat(B, d, rng), Bm = random_mat(B, d, rng), C = random_mat(B, d, rng);
        Mat N = random_mat(B * k, d, rng);
        double gamma = 10.0;
        auto value_and_grads = [&](bool want_grads, std::vector<Mat>* grads) {
            ad::Tape t;
            ad::Var a = t.leaf(A, want_grads), b = t.leaf(Bm, want_grads);
            ad::Var c = t.leaf(C, want_grads), n = t.leaf(N, want_grads);
            ad::Var an = t.l2normalize_rows(a), bn = t.l2normalize_rows(b);
            ad::Var cn = t.l2normalize_rows(c), nn = t.l2normalize_rows(n);
            ad::Var loss;
            switch (which) {
                case 0: loss = contrastive_loss(t, an, bn, gamma); break;
                case 1: loss = mapping_loss(t, an, bn, gamma); break;
                case 2: loss = soft_alignment_loss(t, an, bn, cn, gamma); break;
                default: loss = composed_loss(t, an, bn, nn, gamma); break;
            }
            if (want_grads) {
                t.backward(loss);
                *grads = {t.grad(a), t.grad(b), t.grad(c), t.grad(n)};
            }
            return t.val(loss).at(0, 0);
        };
        std::vector<Mat> grads;
        value_and_grads(true, &grads);
        Mat* inputs[4] = {&A, &Bm, &C, &N};
        for (int m = 0; m < 4; ++m) {
            for (size_t i = 0; i < inputs[m]->a.size(); i += 3) {
                double save = inputs[m]->a[i];
                inputs[m]->a[i] = save + h;
                double up = value_and_grads(false, nullptr);
                inputs[m]->a[i] = save - h;
                double down = value_and_grads(false, nullptr);
                inputs[m]->a[i] = save;
                double fd = (up - down) / (2 * h);
                double an = grads[m].empty() ? 0.0 : grads[m].a[i];
                double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
                if (std::fabs(fd - an) / denom > tol) {
                    std::cout << "    loss " << which << " input " << m << "[" << i
                              << "]: analytic=" << an << " fd=" << fd << "\n";
                    ok = false;
                }
            }
        }
    }

    // vsi_inject parameters.
    {
        Model m = Model::init(small_config(77));
        for (auto& [name, p] : m.params.params)
            if (name.rfind("vsi.", 0) == 0)
                for (auto& x : p.a) x = rng.normal() * 0.3;
        int layer = m.cfg.vsi_layers.front();
        const int L = 5;
        Mat states = random_mat(L, m.cfg.embed_dim, rng);
        Mat vbar = random_mat(m.cfg.num_patches(), m.cfg.embed_dim, rng);
        m.params.set_trainable_by_prefixes({"vsi."});
        auto forward = [&]() {
            ad::Tape t;
            t.grad_enabled = false;
            ParamLeaves P(t, m.params);
            ad::Var out = m.vsi_inject(t, P, layer, t.leaf(states), 1, t.leaf(vbar), 3);
            return t.val(t.sum_all(t.hadamard(out, out))).at(0, 0);
        };
        std::map<std::string, Mat> analytic;
        {
            ad::Tape t;
            ParamLeaves P(t, m.params);
            ad::Var out = m.vsi_inject(t, P, layer, t.leaf(states), 1, t.leaf(vbar), 3);
            t.backward(t.sum_all(t.hadamard(out, out)));
            P.collect_grads(analytic);
        }
        ok = fd_params_match(m, {"vsi."}, forward, analytic, tol) && ok;
    }

    // adapter_forward parameters.
    {
        Model m = Model::init(small_config(78));
        for (auto& [name, p] : m.params.params)
            if (name.rfind("adapter.", 0) == 0)
                for (auto& x : p.a) x = rng.normal() * 0.3;
        int layer = m.cfg.adapter_layers.front();
        Mat states = random_mat(4, m.cfg.embed_dim, rng);
        m.params.set_trainable_by_prefixes({"adapter."});
        auto forward = [&]() {
            ad::Tape t;
            t.grad_enabled = false;
            ParamLeaves P(t, m.params);
            ad::Var out = m.adapter_forward(t, P, layer, t.leaf(states));
            return t.val(t.sum_all(t.hadamard(out, out))).at(0, 0);
        };
        std::map<std::string, Mat> analytic;
        {
            ad::Tape t;
            ParamLeaves P(t, m.params);
            ad::Var out = m.adapter_forward(t, P, layer, t.leaf(states));
            t.backward(t.sum_all(t.hadamard(out, out)));
            P.collect_grads(analytic);
        }
        ok = fd_params_match(m, {"adapter."}, forward, analytic, tol) && ok;
    }
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 3: identity at initialization, bit-exact, 100 inputs
// ---------------------------------------------------------------------------
bool criterion3() {
    Model m = Model::init(small_config(303));
    Rng rng(304);
    const char* mods[] = {"change color to red", "make the shape a square and move it to the top",
                          "set size to small"};
    for (int trial = 0; trial < 100; ++trial) {
        Image img(m.cfg.image_size, m.cfg.image_size);
        for (auto& p : img.px) p = rng.uniform();
        VisualFeatures vf = m.encode_image(img);
        bool p2 = trial % 2 == 0;
        PromptTemplate tmpl = p2 ? PromptTemplate::p2() : PromptTemplate::p1();
        std::optional<std::string> mod;
        if (p2) mod = mods[trial % 3];
        TextFeatures on = m.encode_with_pseudo(vf, tmpl, mod, true, true);
        TextFeatures off = m.encode_with_pseudo(vf, tmpl, mod, false, false);
        if (on.s_g.a != off.s_g.a || on.S.a != off.S.a) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// criterion 4: locality of VSI and of stage-II training
// ---------------------------------------------------------------------------
bool criterion4() {
    bool ok = true;
    // (a) vsi_inject touches only the pseudo row, 200 random trials.
    Model m = Model::init(small_config(404));
    int layer = m.cfg.vsi_layers.front();
    Rng rng(405);
    for (int trial = 0; trial < 200; ++trial) {
        for (auto& [name, p] : m.params.params)
            if (name.rfind("vsi.", 0) == 0)
                for (auto& x : p.a) x = rng.normal();
        int L = 3 + (int)rng.below(6);
        int slot = (int)rng.below(L), summary = (int)rng.below(L);
        Mat states = random_mat(L, m.cfg.embed_dim, rng);
        Mat vbar = random_mat(m.cfg.num_patches(), m.cfg.embed_dim, rng);
        ad::Tape t;
        ParamLeaves P(t, m.params);
        Mat out = t.val(m.vsi_inject(t, P, layer, t.leaf(states), slot, t.leaf(vbar), summary));
        for (int r = 0; r < L; ++r)
            if (r != slot)
                for (int c = 0; c < m.cfg.embed_dim; ++c)
                    if (out.at(r, c) != states.at(r, c)) ok = false;
    }

    // (b) stage-II training alters only adapter parameters (bitwise diff).
    ModelConfig cfg = small_config(406, 16);
    Model model = Model::init(cfg);
    TrainConfig t1;
    t1.stage = 1;
    t1.epochs = 1;
    t1.batch_size = 4;
    t1.toggles.adapters_enabled = false;
    t1.toggles.hard_negatives_enabled = false;
    LossConfig lc;
    lc.hard_negative_k = 2;
    auto pairs = toy::generate_pairs(8, 33);
    Checkpoint ck1 = run_stage1(pairs, model, t1, lc).checkpoint;

    toy::TripletGenOptions opts;
    opts.gallery_size = 16;
    toy::Manifest trips = toy::generate_triplets(12, 44, opts);
    TrainConfig t2 = t1;
    t2.stage = 2;
    t2.toggles.adapters_enabled = true;
    t2.toggles.hard_negatives_enabled = true;
    Checkpoint ck2 = run_stage2(trips, ck1, t2, lc).checkpoint;

    bool adapters_moved = false;
    for (const auto& [name, p] : ck2.params.params) {
        bool same = p.a == ck1.params.at(name).a;
        if (name.rfind("adapter.", 0) == 0)
            adapters_moved = adapters_moved || !same;
        else if (!same)
            ok = false;
    }
    return ok && adapters_moved;
}

// ---------------------------------------------------------------------------
// criterion 5: hard-negative interpolation properties
// ---------------------------------------------------------------------------
bool criterion5() {
    bool ok = true;
    LossConfig cfg;
    cfg.hard_negative_k = 3;
    Rng rng(505);

    for (int trial = 0; trial < 500; ++trial) {
        int d = 3 + (int)rng.below(6), C = 3 + (int)rng.below(8);
        Mat z = random_unit_rows(1, d, rng), tg = random_unit_rows(1, d, rng);
        Mat cand = random_unit_rows(C, d, rng);
        MinedNegatives mn = mine_hard_negatives(z, tg, cand, cfg);
        for (double b : mn.beta) ok = ok && b >= 0.0 && b <= cfg.beta_clamp_max + 1e-15;
        // Collinearity: each mixed row lies in span(t_gt, t_i).
        for (int i = 0; i < mn.mixed.rows; ++i) {
            Mat ti = cand.row(mn.indices[i]);
            // Residual after projecting onto the (t_gt, t_i) plane.
            Mat u1 = tg;
            double n1 = row_norm(u1, 0);
            for (auto& x : u1.a) x /= n1;
            double proj = dot_rows(ti, 0, u1, 0);
            Mat u2 = ti;
            for (int c = 0; c < d; ++c) u2.at(0, c) -= proj * u1.at(0, c);
            double n2 = row_norm(u2, 0);
            double res2 = dot_rows(mn.mixed, i, mn.mixed, i) -
                          dot_rows(mn.mixed, i, u1, 0) * dot_rows(mn.mixed, i, u1, 0);
            if (n2 > 1e-8) {
                for (auto& x : u2.a) x /= n2;
                res2 -= dot_rows(mn.mixed, i, u2, 0) * dot_rows(mn.mixed, i, u2, 0);
            }
            ok = ok && std::fabs(res2) < 1e-9;
        }
    }

    // Degenerate-range rule: equal t_gt-similarities => beta = 0.5 everywhere.
    {
        int d = 4;
        Mat z = random_unit_rows(1, d, rng), tg = random_unit_rows(1, d, rng);
        Mat cand(3, d);
        Mat base = random_unit_rows(1, d, rng);
        for (int i = 0; i < 3; ++i) cand.set_row(i, base);
        MinedNegatives mn = mine_hard_negatives(z, tg, cand, cfg);
        for (double b : mn.beta) ok = ok && b == cfg.beta_degenerate_value;
    }

    // Worked example: t_gt-sims {0.9, 0.5, 0.1} -> min-max [1.0, 0.5, 0.0],
    // clamped to [0.9, 0.5, 0.0].
    {
        auto unit2 = [](double x) { return Mat::row_vector({x, std::sqrt(1.0 - x * x)}); };
        Mat tg = Mat::row_vector({1.0, 0.0});
        Mat z = Mat::row_vector({1.0, 0.0});
        Mat cand(3, 2);
        cand.set_row(0, unit2(0.9));
        cand.set_row(1, unit2(0.5));
        cand.set_row(2, unit2(0.1));
        MinedNegatives mn = mine_hard_negatives(z, tg, cand, cfg);
        ok = ok && mn.beta.size() == 3 && mn.beta[0] == 0.9 && mn.beta[1] == 0.5 &&
             mn.beta[2] == 0.0;
    }

    // k exceeding the candidate count is an argument error.
    {
        Mat z = random_unit_rows(1, 4, rng), tg = random_unit_rows(1, 4, rng);
        Mat cand = random_unit_rows(2, 4, rng);
        bool threw = false;
        try {
            mine_hard_negatives(z, tg, cand, cfg);
        } catch (const ArgumentError&) {
            threw = true;
        }
        ok = ok && threw;
    }
    return ok;
}

// ---------------------------------------------------------------------------
// criterion 6: metric oracles
// ---------------------------------------------------------------------------
bool criterion6() {
    bool ok = true;
    Rng rng(606);
    auto idname = [](int i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "g%04d", i);
        return std::string(buf);
    };
    for (int trial = 0; trial < 1000; ++trial) {
        int G = 3 + (int)rng.below(12), Q = 1 + (int)rng.below(5), K = 1 + (int)rng.below(G);
        std::vector<QueryResult> results;
        GroundTruth gt;
        for (int q = 0; q < Q; ++q) {
            QueryResult r;
            r.query_id = "q" + std::to_string(q);
            for (int i = 0; i < G; ++i) r.ranked_ids.push_back(idname(i));
            rng.shuffle(r.ranked_ids);
            int ntargets = 1 + (int)rng.below(3);
            std::set<std::string> targets;
            while ((int)targets.size() < ntargets) targets.insert(idname((int)rng.below(G)));
            gt[r.query_id] = targets;
            results.push_back(std::move(r));
        }
        double want_recall = 0, want_map = 0;
        for (const auto& r : results) {
            const auto& targets = gt.at(r.query_id);
            bool hit = false;
            int hits = 0;
            double ap = 0;
            for (int i = 0; i < K; ++i)
                if (targets.count(r.ranked_ids[i])) {
                    hit = true;
                    ap += (double)++hits / (i + 1);
                }
            want_recall += hit;
            want_map += ap / std::min<int>((int)targets.size(), K);
        }
        ok = ok && std::fabs(recall_at_k(results, gt, K) - want_recall / Q) < 1e-12;
        ok = ok && std::fabs(map_at_k(results, gt, K) - want_map / Q) < 1e-12;
    }
    // AP worked example: targets at ranks 1 and 4, K=5 -> (1/1 + 2/4)/2 = 0.75.
    QueryResult r;
    r.query_id = "q";
    r.ranked_ids = {"t1", "x1", "x2", "t2", "x3"};
    GroundTruth gt{{"q", {"t1", "t2"}}};
    ok = ok && std::fabs(map_at_k({r}, gt, 5) - 0.75) < 1e-12;
    return ok;
}

// ---------------------------------------------------------------------------
// criteria 7-9: fixed toy benchmark
// ---------------------------------------------------------------------------
struct ToyBench {
    // per-config, per-seed R@1 on the held-out eval split
    std::map<std::string, std::vector<double>> r1;
    double med(const std::string& k) const {
        const auto& v = r1.at(k);
        return median3(v[0], v[1], v[2]);
    }
};

ToyBench run_toy_benchmark() {
    // Pre-registered benchmark configuration. Do not tweak without re-running
    // the reference and updating the margins below.
    ModelConfig mc;
    mc.embed_dim = 64;
    mc.image_size = 32;
    mc.patch_size = 8;
    mc.max_tokens = 24;
    mc.num_layers_img = 2;
    mc.num_layers_txt = 2;
    mc.num_heads = 4;
    mc.latent_dim = 32;
    mc.adapter_dim = 16;

    mc.seed = 1;

    LossConfig lc;
    lc.tau_stage1 = 0.05;
    lc.tau_stage2 = 0.05;
    lc.alpha = 0.2;
    lc.hard_negative_k = 8;

    // Stage 0: contrastive backbone pretraining on a disjoint caption corpus.
    // Captions drop attributes at random, so the tower's global feature is
    // deliberately lossy and composed queries must rely on injected detail.
    TrainConfig t0;
    t0.stage = 0;
    t0.learning_rate = 3e-3;
    t0.weight_decay = 0.0;
    t0.batch_size = 32;
    t0.epochs = 100;
    t0.seed = 1;

    TrainConfig t1;
    t1.stage = 1;
    t1.learning_rate = 3e-3;
    t1.weight_decay = 0.0;
    t1.batch_size = 32;
    t1.epochs = 40;
    t1.toggles.adapters_enabled = false;
    t1.toggles.hard_negatives_enabled = false;

    TrainConfig t2;
    t2.stage = 2;
    t2.learning_rate = 0.01;
    t2.weight_decay = 0.0;
    t2.batch_size = 32;
    t2.epochs = 20;

    auto prep = toy::generate_pairs(1024, 404, /*partial_captions=*/true);
    auto pairs = toy::generate_pairs(512, 101);
    toy::TripletGenOptions gen;
    gen.gallery_size = 256;
    toy::Manifest trips = toy::generate_triplets(1024, 202, gen);
    toy::Manifest evalset = toy::generate_triplets(4096, 9999, gen);

    Model backbone = Model::init(mc);
    Checkpoint ckPre = pretrain_backbone(prep, backbone, t0, lc).checkpoint;

    auto eval_r1 = [&](const Checkpoint& ck, bool vsi, bool adapters) {
        Model m = Model::from_checkpoint(ck);
        m.toggles.vsi_enabled = vsi;
        m.toggles.adapters_enabled = adapters;
        m.toggles.hard_negatives_enabled = false;
        return evaluate_cir(m, evalset, {1}).recall.at(1);
    };

    ToyBench out;
    for (uint64_t seed : {1, 2, 3}) {
        auto stage1_run = [&](bool vsi, bool sta, double alpha) {
            Model m = Model::from_checkpoint(ckPre);
            TrainConfig t = t1;
            t.seed = seed;
            t.toggles.vsi_enabled = vsi;
            t.toggles.sta_enabled = sta;
            LossConfig l = lc;
            l.alpha = alpha;
            return run_stage1(pairs, m, t, l).checkpoint;
        };
        Checkpoint ckA = stage1_run(false, false, 0.2);  // baseline
        Checkpoint ckB = stage1_run(true, false, 0.2);   // +VSI (== alpha 0)
        Checkpoint ckC = stage1_run(true, true, 0.2);    // full stage I
        Checkpoint ckE = stage1_run(true, true, 0.6);    // alpha 0.6

        auto stage2_run = [&](const Checkpoint& base, bool hn) {
            TrainConfig t = t2;
            t.seed = seed;
            t.toggles.hard_negatives_enabled = hn;
            return run_stage2(trips, base, t, lc).checkpoint;
        };
        Checkpoint ckF = stage2_run(ckC, true);   // stage I+II
        Checkpoint ckG = stage2_run(ckC, false);  // adapters, no hard negatives
        Checkpoint ckH = stage2_run(ckPre, true);  // stage II only (no stage-I training)

        out.r1["baseline"].push_back(eval_r1(ckA, false, false));
        out.r1["vsi"].push_back(eval_r1(ckB, true, false));
        out.r1["stage1"].push_back(eval_r1(ckC, true, false));
        out.r1["alpha06"].push_back(eval_r1(ckE, true, false));
        out.r1["stage12"].push_back(eval_r1(ckF, true, true));
        out.r1["no_hn"].push_back(eval_r1(ckG, true, true));
        out.r1["stage2only"].push_back(eval_r1(ckH, true, true));
    }

    std::cout << "    toy benchmark R@1 (seeds 1,2,3 | median):\n";
    for (const auto& [k, v] : out.r1) {
        std::cout << "      " << k << ":";
        for (double x : v) std::cout << " " << x;
        std::cout << " | " << out.med(k) << "\n";
    }
    return out;
}

// Pre-registered margins, set to roughly half the gaps observed in the
// reference run (medians over seeds {1,2,3}, composed R@1 on 4096 queries:
// baseline 0.0220, +VSI 0.0237, stage I 0.0249, +adapters 0.0413,
// stage I+II 0.0461, stage II only 0.0100, alpha=0.6 0.0198).
constexpr double kMarginStage12OverStage1 = 0.010;
constexpr double kMarginStage1OverBaseline = 0.001;
constexpr double kMarginStage12OverStage2Only = 0.020;

bool criterion7(const ToyBench& tb) {
    double f = tb.med("stage12"), c = tb.med("stage1"), a = tb.med("baseline");
    double h = tb.med("stage2only");
    bool ok = f > c + kMarginStage12OverStage1 && c > a + kMarginStage1OverBaseline &&
              h + kMarginStage12OverStage2Only < f;
    return ok;
}

bool criterion8(const ToyBench& tb) {
    std::vector<double> ladder = {tb.med("baseline"), tb.med("vsi"), tb.med("stage1"),
                                  tb.med("no_hn"), tb.med("stage12")};
    int ties = 0;
    for (size_t i = 1; i < ladder.size(); ++i) {
        if (ladder[i] < ladder[i - 1]) return false;
        if (ladder[i] == ladder[i - 1]) ++ties;
    }
    return ties <= 1;
}

bool criterion9(const ToyBench& tb) {
    // alpha = 0 removes the soft-alignment term, i.e. the "vsi" configuration.
    return tb.med("stage1") >= tb.med("vsi") && tb.med("stage1") >= tb.med("alpha06");
}

// ---------------------------------------------------------------------------
// criterion 10: determinism
// ---------------------------------------------------------------------------
std::string slurp(const std::string& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

bool criterion10() {
    bool ok = true;
    // Two identical stage-1 runs -> bit-identical checkpoint files.
    auto run_once = [&](const std::string& path) {
        ModelConfig cfg = small_config(1010, 16);
        Model m = Model::init(cfg);
        TrainConfig t;
        t.stage = 1;
        t.epochs = 2;
        t.batch_size = 8;
        t.seed = 7;
        t.toggles.adapters_enabled = false;
        t.toggles.hard_negatives_enabled = false;
        LossConfig lc;
        auto pairs = toy::generate_pairs(32, 55);
        save_checkpoint(path, run_stage1(pairs, m, t, lc).checkpoint);
    };
    run_once("acc_det_1.ck");
    run_once("acc_det_2.ck");
    std::string b1 = slurp("acc_det_1.ck"), b2 = slurp("acc_det_2.ck");
    ok = ok && !b1.empty() && b1 == b2;
    std::remove("acc_det_1.ck");
    std::remove("acc_det_2.ck");

    // Manifests reproduce bytewise from (n, seed).
    toy::write_pairs("acc_det_p1.jsonl", toy::generate_pairs(40, 9));
    toy::write_pairs("acc_det_p2.jsonl", toy::generate_pairs(40, 9));
    ok = ok && slurp("acc_det_p1.jsonl") == slurp("acc_det_p2.jsonl");
    std::remove("acc_det_p1.jsonl");
    std::remove("acc_det_p2.jsonl");

    toy::TripletGenOptions opts;
    opts.gallery_size = 32;
    toy::write_manifest("acc_det_t1.jsonl", toy::generate_triplets(20, 9, opts));
    toy::write_manifest("acc_det_t2.jsonl", toy::generate_triplets(20, 9, opts));
    ok = ok && slurp("acc_det_t1.jsonl") == slurp("acc_det_t2.jsonl");
    std::remove("acc_det_t1.jsonl");
    std::remove("acc_det_t2.jsonl");
    return ok;
}

}  // namespace

int main() {
    struct Entry {
        int num;
        const char* name;
        std::function<bool()> fn;
    };

    ToyBench tb;
    bool bench_ok = true;
    std::string bench_err;

    std::vector<Entry> entries = {
        {1, "loss-oracle equivalence (1000 random batches, 1e-9)", criterion1},
        {2, "finite-difference gradient suite (rel err < 1e-4)", criterion2},
        {3, "identity at init (VSI + adapters, bit-exact, 100 inputs)", criterion3},
        {4, "locality (VSI pseudo-row only; stage II adapters only)", criterion4},
        {5, "hard-negative interpolation properties", criterion5},
        {6, "metric oracles (1000 instances, AP example)", criterion6},
        {7, "toy ordering: stage I+II > stage I > baseline; stage II-only < I+II",
         [&] { return bench_ok && criterion7(tb); }},
        {8, "toy component ladder monotone (at most one tie)",
         [&] { return bench_ok && criterion8(tb); }},
        {9, "alpha sensitivity: 0.2 >= {0, 0.6}", [&] { return bench_ok && criterion9(tb); }},
        {10, "determinism (bit-identical reruns, bytewise manifests)", criterion10},
    };

    // Run the shared toy benchmark once, up front.
    auto bench_start = std::chrono::steady_clock::now();
    try {
        tb = run_toy_benchmark();
    } catch (const std::exception& e) {
        bench_ok = false;
        bench_err = e.what();
        std::cout << "    toy benchmark failed to run: " << bench_err << "\n";
    }
    double bench_secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - bench_start).count();
    std::cout << "    toy benchmark wall time: " << bench_secs << " s\n";

    bool all = true;
    for (auto& e : entries) {
        bool pass = false;
        try {
            pass = e.fn();
        } catch (const std::exception& ex) {
            std::cout << "    criterion " << e.num << " threw: " << ex.what() << "\n";
        }
        all = all && pass;
        std::printf("criterion %2d: %s  %s\n", e.num, pass ? "PASS" : "FAIL", e.name);
    }
    if (g_failed_checks) std::cout << g_failed_checks << " sub-checks failed\n";
    return all ? 0 : 1;
}
