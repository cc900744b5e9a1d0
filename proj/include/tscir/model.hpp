#pragma once

#include <map>
#include <optional>
#include <string>

#include "tscir/autograd.hpp"
#include "tscir/config.hpp"
#include "tscir/params.hpp"
#include "tscir/tokenizer.hpp"

namespace tscir {

struct Image {
    int h = 0, w = 0;
    std::vector<double> px;  // h*w*3 row-major, rgb in [0,1]

    Image() = default;
    Image(int hh, int ww) : h(hh), w(ww), px(static_cast<size_t>(hh) * ww * 3, 0.0) {}
    double& at(int y, int x, int c) { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    double at(int y, int x, int c) const { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
};

struct VisualFeatures {
    Mat v_g;  // 1 x d
    Mat V;    // m x d
};

struct TextFeatures {
    Mat S;    // L x d final-layer states
    Mat s_g;  // 1 x d, state at the EOS position
    Mat s_w;  // 1 x d, state at pseudo_slot (empty when absent)
};

// Binds tape leaves to named parameters, creating each leaf once per tape.
// Trainable parameters (or all, with all_grads) get gradient storage.
struct ParamLeaves {
    ad::Tape& tape;
    const ParameterSet& ps;
    bool all_grads = false;
    std::map<std::string, ad::Var> leaves;

    ParamLeaves(ad::Tape& t, const ParameterSet& p, bool all = false)
        : tape(t), ps(p), all_grads(all) {}
    ad::Var operator()(const std::string& name);
    // Adds each leaf's gradient into out[name].
    void collect_grads(std::map<std::string, Mat>& out) const;
};

class Model {
public:
    ModelConfig cfg;
    ParameterSet params;
    Vocabulary vocab;
    Toggles toggles;
    int stage = 0;  // 0 = freshly initialized, 1/2 = per loaded checkpoint

    static Model init(const ModelConfig& cfg);
    static Model from_checkpoint(const Checkpoint& ck);
    Checkpoint to_checkpoint(int stage_tag, const Rng::State& rng) const;

    // ---- tape-level forwards (gradients flow) ----

    // Returns final image-tower states, (m+1) x d; row 0 is the [CLS] state.
    ad::Var image_forward(ad::Tape& t, ParamLeaves& P, const Image& img) const;

    ad::Var map_to_pseudo(ad::Tape& t, ParamLeaves& P, ad::Var v_g) const;
    ad::Var project_patches(ad::Tape& t, ParamLeaves& P, ad::Var V) const;

    struct TextForwardOpts {
        std::optional<ad::Var> pseudo_row;  // spliced at tokens.pseudo_slot
        std::optional<ad::Var> vbar;        // projected patches for VSI
        bool use_vsi = false;
        bool use_adapters = false;
    };
    // Returns final text states L x d (after the final layernorm).
    ad::Var text_forward(ad::Tape& t, ParamLeaves& P, const TokenSequence& tokens,
                         const TextForwardOpts& opts) const;

    // VSI cross-attention applied to one layer's states; replaces only the
    // pseudo_slot row. no_op_flag reports the absent-slot identity case.
    ad::Var vsi_inject(ad::Tape& t, ParamLeaves& P, int layer_index, ad::Var states,
                       std::optional<int> pseudo_slot, ad::Var vbar,
                       std::optional<int> summary_pos, bool* no_op_flag = nullptr) const;

    ad::Var adapter_forward(ad::Tape& t, ParamLeaves& P, int layer_index, ad::Var states) const;

    struct PipelineOut {
        ad::Var s_hat;  // 1 x d, unit-normalized summary feature
        ad::Var S;      // L x d
        TokenSequence tokens;
    };
    // Full pseudo-token pipeline from precomputed visual features.
    PipelineOut pseudo_pipeline(ad::Tape& t, ParamLeaves& P, const VisualFeatures& vis,
                                const PromptTemplate& tmpl,
                                const std::optional<std::string>& modification, bool use_vsi,
                                bool use_adapters) const;

    // ---- no-grad conveniences ----
    VisualFeatures encode_image(const Image& img) const;
    TextFeatures encode_text_plain(const TokenSequence& tokens) const;
    TextFeatures encode_with_pseudo(const VisualFeatures& vis, const PromptTemplate& tmpl,
                                    const std::optional<std::string>& modification,
                                    bool use_vsi, bool use_adapters) const;

    static int eos_position(const TokenSequence& tokens);

    // Analytic per-group scalar counts, keyed by prefix.
    std::map<std::string, size_t> parameter_group_counts() const;

private:
    ad::Var transformer_block(ad::Tape& t, ParamLeaves& P, const std::string& prefix,
                              ad::Var x, const Mat* attn_mask) const;
};

// Validates toggle consistency for a stage and applies them to the model.
void set_ablation(Model& model, const Toggles& toggles, int stage);

Mat patchify(const Image& img, int patch_size);

}  // namespace tscir
