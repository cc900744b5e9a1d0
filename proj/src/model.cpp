#include "tscir/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tscir/errors.hpp"

namespace tscir {

ad::Var ParamLeaves::operator()(const std::string& name) {
    auto it = leaves.find(name);
    if (it != leaves.end()) return it->second;
    bool needs = all_grads || ps.trainable.at(name);
    ad::Var v = tape.leaf(ps.at(name), needs);
    leaves.emplace(name, v);
    return v;
}

void ParamLeaves::collect_grads(std::map<std::string, Mat>& out) const {
    for (const auto& [name, var] : leaves) {
        if (!tape.needs(var)) continue;
        const Mat& g = tape.grad(var);
        auto it = out.find(name);
        if (it == out.end()) {
            out.emplace(name, g);
        } else {
            for (size_t i = 0; i < g.a.size(); ++i) it->second.a[i] += g.a[i];
        }
    }
}

namespace {

Mat normal_mat(Rng& rng, int r, int c, double std_dev = 0.02) {
    Mat m(r, c);
    for (double& x : m.a) x = rng.normal() * std_dev;
    return m;
}

void add_block_params(ParameterSet& ps, Rng& rng, const std::string& prefix, int d, int hidden) {
    ps.add(prefix + ".ln1.g", Mat::row_vector(std::vector<double>(d, 1.0)));
    ps.add(prefix + ".ln1.b", Mat(1, d));
    for (const char* w : {"wq", "wk", "wv", "wo"})
        ps.add(prefix + ".attn." + w, normal_mat(rng, d, d));
    for (const char* b : {"bq", "bk", "bv", "bo"}) ps.add(prefix + ".attn." + b, Mat(1, d));
    ps.add(prefix + ".ln2.g", Mat::row_vector(std::vector<double>(d, 1.0)));
    ps.add(prefix + ".ln2.b", Mat(1, d));
    ps.add(prefix + ".mlp.w1", normal_mat(rng, d, hidden));
    ps.add(prefix + ".mlp.b1", Mat(1, hidden));
    ps.add(prefix + ".mlp.w2", normal_mat(rng, hidden, d));
    ps.add(prefix + ".mlp.b2", Mat(1, d));
}

}  // namespace

Model Model::init(const ModelConfig& cfg_in) {
    Model m;
    m.cfg = cfg_in;
    m.cfg.finalize();
    const ModelConfig& cfg = m.cfg;
    if (cfg.vocab_size < m.vocab.size())
        throw ConfigError("vocab_size " + std::to_string(cfg.vocab_size) +
                          " smaller than grammar vocabulary " + std::to_string(m.vocab.size()));

    Rng rng(cfg.seed);
    const int d = cfg.embed_dim;
    const int hidden = d * cfg.mlp_ratio;
    const int patch_dim = cfg.patch_size * cfg.patch_size * 3;
    ParameterSet& ps = m.params;

    ps.add("img.patch_embed.w", normal_mat(rng, patch_dim, d));
    ps.add("img.patch_embed.b", Mat(1, d));
    ps.add("img.cls", normal_mat(rng, 1, d));
    ps.add("img.pos", normal_mat(rng, cfg.num_patches() + 1, d));
    for (int l = 1; l <= cfg.num_layers_img; ++l)
        add_block_params(ps, rng, "img.layer" + std::to_string(l), d, hidden);
    ps.add("img.ln_f.g", Mat::row_vector(std::vector<double>(d, 1.0)));
    ps.add("img.ln_f.b", Mat(1, d));

    ps.add("txt.tok", normal_mat(rng, cfg.vocab_size, d));
    ps.add("txt.pos", normal_mat(rng, cfg.max_tokens, d));
    for (int l = 1; l <= cfg.num_layers_txt; ++l)
        add_block_params(ps, rng, "txt.layer" + std::to_string(l), d, hidden);
    ps.add("txt.ln_f.g", Mat::row_vector(std::vector<double>(d, 1.0)));
    ps.add("txt.ln_f.b", Mat(1, d));

    // Mapping network and patch projection (Stage-I trainable).
    for (int i = 1; i <= 3; ++i) {
        ps.add("map.phi.w" + std::to_string(i), normal_mat(rng, d, d), true);
        ps.add("map.phi.b" + std::to_string(i), Mat(1, d), true);
    }
    ps.add("map.patch.conv.w", normal_mat(rng, 9 * d, d), true);
    ps.add("map.patch.conv.b", Mat(1, d), true);
    ps.add("map.patch.proj.w", normal_mat(rng, d, d), true);
    ps.add("map.patch.proj.b", Mat(1, d), true);

    // VSI blocks; psi_u starts at zero so each block is the identity.
    for (int l : cfg.vsi_layers) {
        std::string p = "vsi.layer" + std::to_string(l);
        for (const char* proj : {"psi_v", "psi_w", "psi_g"}) {
            ps.add(p + "." + proj + ".w", normal_mat(rng, d, cfg.latent_dim), true);
            ps.add(p + "." + proj + ".b", Mat(1, cfg.latent_dim), true);
        }
        for (const char* w : {"wq", "wk", "wv"})
            ps.add(p + ".attn." + w, normal_mat(rng, cfg.latent_dim, cfg.latent_dim), true);
        ps.add(p + ".psi_u.w", Mat(cfg.latent_dim, d), true);
        ps.add(p + ".psi_u.b", Mat(1, d), true);
    }

    // Composing adapters; up-projection starts at zero (identity at init).
    for (int l : cfg.adapter_layers) {
        std::string p = "adapter.layer" + std::to_string(l);
        ps.add(p + ".down.w", normal_mat(rng, d, cfg.adapter_dim));
        ps.add(p + ".down.b", Mat(1, cfg.adapter_dim));
        ps.add(p + ".up.w", Mat(cfg.adapter_dim, d));
        ps.add(p + ".up.b", Mat(1, d));
    }

    // Default trainability is the Stage-I policy; training loops reset it.
    return m;
}

Model Model::from_checkpoint(const Checkpoint& ck) {
    Model m;
    m.cfg = ck.config;
    m.cfg.finalize();
    m.params = ck.params;
    m.stage = ck.stage;
    return m;
}

Checkpoint Model::to_checkpoint(int stage_tag, const Rng::State& rng) const {
    Checkpoint ck;
    ck.stage = stage_tag;
    ck.config = cfg;
    ck.params = params;
    ck.rng = rng;
    return ck;
}

Mat patchify(const Image& img, int patch_size) {
    const int gy = img.h / patch_size, gx = img.w / patch_size;
    Mat out(gy * gx, patch_size * patch_size * 3);
    for (int py = 0; py < gy; ++py)
        for (int px = 0; px < gx; ++px) {
            int r = py * gx + px;
            int c = 0;
            for (int y = 0; y < patch_size; ++y)
                for (int x = 0; x < patch_size; ++x)
                    for (int ch = 0; ch < 3; ++ch)
                        out.at(r, c++) = img.at(py * patch_size + y, px * patch_size + x, ch);
        }
    return out;
}

int Model::eos_position(const TokenSequence& tokens) {
    for (int i = 0; i < tokens.length(); ++i)
        if (tokens.token_ids[i] == TOK_EOS) return i;
    throw ArgumentError("token sequence has no EOS");
}

ad::Var Model::transformer_block(ad::Tape& t, ParamLeaves& P, const std::string& prefix,
                                 ad::Var x, const Mat* attn_mask) const {
    const int d = cfg.embed_dim;
    const int heads = cfg.num_heads;
    const int dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    ad::Var h = t.layernorm(x, P(prefix + ".ln1.g"), P(prefix + ".ln1.b"));
    ad::Var q = t.add_rowvec(t.matmul(h, P(prefix + ".attn.wq")), P(prefix + ".attn.bq"));
    ad::Var k = t.add_rowvec(t.matmul(h, P(prefix + ".attn.wk")), P(prefix + ".attn.bk"));
    ad::Var v = t.add_rowvec(t.matmul(h, P(prefix + ".attn.wv")), P(prefix + ".attn.bv"));

    std::vector<ad::Var> head_outs;
    for (int hd = 0; hd < heads; ++hd) {
        ad::Var qh = t.slice_cols(q, hd * dh, (hd + 1) * dh);
        ad::Var kh = t.slice_cols(k, hd * dh, (hd + 1) * dh);
        ad::Var vh = t.slice_cols(v, hd * dh, (hd + 1) * dh);
        ad::Var scores = t.scale(t.matmul_nt(qh, kh), scale);
        ad::Var attn = t.softmax_rows(scores, attn_mask);
        head_outs.push_back(t.matmul(attn, vh));
    }
    ad::Var concat = heads == 1 ? head_outs[0] : t.concat_cols(head_outs);
    ad::Var attn_out =
        t.add_rowvec(t.matmul(concat, P(prefix + ".attn.wo")), P(prefix + ".attn.bo"));
    x = t.add(x, attn_out);

    ad::Var h2 = t.layernorm(x, P(prefix + ".ln2.g"), P(prefix + ".ln2.b"));
    ad::Var m1 = t.gelu(t.add_rowvec(t.matmul(h2, P(prefix + ".mlp.w1")), P(prefix + ".mlp.b1")));
    ad::Var m2 = t.add_rowvec(t.matmul(m1, P(prefix + ".mlp.w2")), P(prefix + ".mlp.b2"));
    return t.add(x, m2);
}

ad::Var Model::image_forward(ad::Tape& t, ParamLeaves& P, const Image& img) const {
    if (img.h != cfg.image_size || img.w != cfg.image_size)
        throw ConfigError("image dimensions " + std::to_string(img.h) + "x" +
                          std::to_string(img.w) + " do not match configured image_size " +
                          std::to_string(cfg.image_size));
    Mat patches = patchify(img, cfg.patch_size);
    ad::Var pv = t.leaf(std::move(patches), false);
    ad::Var x = t.add_rowvec(t.matmul(pv, P("img.patch_embed.w")), P("img.patch_embed.b"));
    ad::Var withcls = t.concat_rows({P("img.cls"), x});
    ad::Var pos = t.slice_rows(P("img.pos"), 0, cfg.num_patches() + 1);
    x = t.add(withcls, pos);
    for (int l = 1; l <= cfg.num_layers_img; ++l)
        x = transformer_block(t, P, "img.layer" + std::to_string(l), x, nullptr);
    return t.layernorm(x, P("img.ln_f.g"), P("img.ln_f.b"));
}

ad::Var Model::map_to_pseudo(ad::Tape& t, ParamLeaves& P, ad::Var v_g) const {
    ad::Var h = t.add_rowvec(t.matmul(v_g, P("map.phi.w1")), P("map.phi.b1"));
    if (!cfg.phi_linear) h = t.gelu(h);
    h = t.add_rowvec(t.matmul(h, P("map.phi.w2")), P("map.phi.b2"));
    if (!cfg.phi_linear) h = t.gelu(h);
    return t.add_rowvec(t.matmul(h, P("map.phi.w3")), P("map.phi.b3"));
}

ad::Var Model::project_patches(ad::Tape& t, ParamLeaves& P, ad::Var V) const {
    ad::Var conv =
        t.conv3x3_grid(V, P("map.patch.conv.w"), P("map.patch.conv.b"), cfg.patch_grid());
    return t.add_rowvec(t.matmul(conv, P("map.patch.proj.w")), P("map.patch.proj.b"));
}

ad::Var Model::vsi_inject(ad::Tape& t, ParamLeaves& P, int layer_index, ad::Var states,
                          std::optional<int> pseudo_slot, ad::Var vbar,
                          std::optional<int> summary_pos, bool* no_op_flag) const {
    if (!pseudo_slot) {
        if (no_op_flag) *no_op_flag = true;
        return states;
    }
    if (no_op_flag) *no_op_flag = false;
    std::string p = "vsi.layer" + std::to_string(layer_index);

    ad::Var s_w = t.get_row(states, *pseudo_slot);
    ad::Var h_w = t.add_rowvec(t.matmul(s_w, P(p + ".psi_w.w")), P(p + ".psi_w.b"));
    ad::Var query_in = h_w;
    if (summary_pos) {
        ad::Var s_g = t.get_row(states, *summary_pos);
        ad::Var h_g = t.add_rowvec(t.matmul(s_g, P(p + ".psi_g.w")), P(p + ".psi_g.b"));
        query_in = t.add(h_w, h_g);
    }
    ad::Var H_v = t.add_rowvec(t.matmul(vbar, P(p + ".psi_v.w")), P(p + ".psi_v.b"));

    ad::Var q = t.matmul(query_in, P(p + ".attn.wq"));
    ad::Var K = t.matmul(H_v, P(p + ".attn.wk"));
    ad::Var Vv = t.matmul(H_v, P(p + ".attn.wv"));
    double scale = 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim));
    ad::Var attn = t.softmax_rows(t.scale(t.matmul_nt(q, K), scale));
    ad::Var c = t.matmul(attn, Vv);

    ad::Var up = t.add_rowvec(t.matmul(c, P(p + ".psi_u.w")), P(p + ".psi_u.b"));
    ad::Var new_row = t.add(up, s_w);
    return t.set_row(states, *pseudo_slot, new_row);
}

ad::Var Model::adapter_forward(ad::Tape& t, ParamLeaves& P, int layer_index,
                               ad::Var states) const {
    std::string p = "adapter.layer" + std::to_string(layer_index);
    ad::Var h = t.add_rowvec(t.matmul(states, P(p + ".down.w")), P(p + ".down.b"));
    if (!cfg.adapter_linear) h = t.gelu(h);
    ad::Var up = t.add_rowvec(t.matmul(h, P(p + ".up.w")), P(p + ".up.b"));
    return t.add(states, up);
}

ad::Var Model::text_forward(ad::Tape& t, ParamLeaves& P, const TokenSequence& tokens,
                            const TextForwardOpts& opts) const {
    const int L = tokens.length();
    if (L > cfg.max_tokens)
        throw ArgumentError("token sequence length " + std::to_string(L) +
                            " exceeds max_tokens " + std::to_string(cfg.max_tokens));
    if (L < 1) throw ArgumentError("empty token sequence");

    ad::Var E = t.embed_rows(P("txt.tok"), tokens.token_ids);
    if (opts.pseudo_row) {
        if (!tokens.pseudo_slot) throw ArgumentError("pseudo row given but no pseudo slot");
        E = t.set_row(E, *tokens.pseudo_slot, *opts.pseudo_row);
    }
    ad::Var pos = t.slice_rows(P("txt.pos"), 0, L);
    ad::Var x = t.add(E, pos);

    // PAD keys are masked out with -inf so appended padding cannot perturb
    // any attended position.
    Mat mask;
    const Mat* mask_ptr = nullptr;
    bool any_pad = std::any_of(tokens.attention_mask.begin(), tokens.attention_mask.end(),
                               [](uint8_t m) { return m == 0; });
    if (any_pad) {
        mask = Mat(L, L);
        for (int r = 0; r < L; ++r)
            for (int c = 0; c < L; ++c)
                if (!tokens.attention_mask[c])
                    mask.at(r, c) = -std::numeric_limits<double>::infinity();
        mask_ptr = &mask;
    }

    std::optional<int> summary = eos_position(tokens);
    for (int l = 1; l <= cfg.num_layers_txt; ++l) {
        x = transformer_block(t, P, "txt.layer" + std::to_string(l), x, mask_ptr);
        bool vsi_here = opts.use_vsi && opts.vbar &&
                        std::count(cfg.vsi_layers.begin(), cfg.vsi_layers.end(), l) > 0;
        if (vsi_here) x = vsi_inject(t, P, l, x, tokens.pseudo_slot, *opts.vbar, summary);
        bool adapter_here = opts.use_adapters &&
                            std::count(cfg.adapter_layers.begin(), cfg.adapter_layers.end(), l) > 0;
        if (adapter_here) x = adapter_forward(t, P, l, x);
    }
    return t.layernorm(x, P("txt.ln_f.g"), P("txt.ln_f.b"));
}

Model::PipelineOut Model::pseudo_pipeline(ad::Tape& t, ParamLeaves& P, const VisualFeatures& vis,
                                          const PromptTemplate& tmpl,
                                          const std::optional<std::string>& modification,
                                          bool use_vsi, bool use_adapters) const {
    PipelineOut out;
    out.tokens = expand_template(tmpl, modification, vocab, cfg.max_tokens);

    ad::Var v_g = t.leaf(vis.v_g, false);
    ad::Var w = map_to_pseudo(t, P, v_g);

    TextForwardOpts opts;
    opts.pseudo_row = w;
    opts.use_vsi = use_vsi;
    opts.use_adapters = use_adapters;
    if (use_vsi && !cfg.vsi_layers.empty()) {
        ad::Var V = t.leaf(vis.V, false);
        opts.vbar = project_patches(t, P, V);
    }
    out.S = text_forward(t, P, out.tokens, opts);
    ad::Var s_g = t.get_row(out.S, eos_position(out.tokens));
    out.s_hat = t.l2normalize_rows(s_g);
    return out;
}

VisualFeatures Model::encode_image(const Image& img) const {
    ad::Tape t;
    t.grad_enabled = false;
    ParamLeaves P(t, params);
    ad::Var states = image_forward(t, P, img);
    const Mat& S = t.val(states);
    VisualFeatures vf;
    vf.v_g = S.row(0);
    vf.V = Mat(cfg.num_patches(), cfg.embed_dim);
    for (int r = 0; r < cfg.num_patches(); ++r)
        for (int c = 0; c < cfg.embed_dim; ++c) vf.V.at(r, c) = S.at(r + 1, c);
    return vf;
}

TextFeatures Model::encode_text_plain(const TokenSequence& tokens) const {
    ad::Tape t;
    t.grad_enabled = false;
    ParamLeaves P(t, params);
    TextForwardOpts opts;  // no pseudo, no VSI, no adapters
    ad::Var S = text_forward(t, P, tokens, opts);
    TextFeatures tf;
    tf.S = t.val(S);
    tf.s_g = tf.S.row(eos_position(tokens));
    if (tokens.pseudo_slot) tf.s_w = tf.S.row(*tokens.pseudo_slot);
    return tf;
}

TextFeatures Model::encode_with_pseudo(const VisualFeatures& vis, const PromptTemplate& tmpl,
                                       const std::optional<std::string>& modification,
                                       bool use_vsi, bool use_adapters) const {
    ad::Tape t;
    t.grad_enabled = false;
    ParamLeaves P(t, params);
    PipelineOut out = pseudo_pipeline(t, P, vis, tmpl, modification, use_vsi, use_adapters);
    TextFeatures tf;
    tf.S = t.val(out.S);
    tf.s_g = tf.S.row(eos_position(out.tokens));
    if (out.tokens.pseudo_slot) tf.s_w = tf.S.row(*out.tokens.pseudo_slot);
    return tf;
}

std::map<std::string, size_t> Model::parameter_group_counts() const {
    std::map<std::string, size_t> counts;
    for (const auto& [name, m] : params.params) {
        std::string group = name.substr(0, name.find('.'));
        counts[group] += m.size();
    }
    return counts;
}

void set_ablation(Model& model, const Toggles& toggles, int stage) {
    if (stage == 1 && toggles.adapters_enabled)
        throw ConfigError("composing adapters cannot be enabled during stage 1");
    if (stage == 1 && toggles.hard_negatives_enabled)
        throw ConfigError("hard negatives are a stage-2 mechanism");
    model.toggles = toggles;
}

}  // namespace tscir
