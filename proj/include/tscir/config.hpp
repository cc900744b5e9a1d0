#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tscir {

struct ModelConfig {
    int embed_dim = 64;
    int image_size = 32;
    int patch_size = 8;
    int max_tokens = 24;
    int num_layers_img = 2;
    int num_layers_txt = 2;
    int num_heads = 4;
    int vocab_size = 64;
    std::vector<int> vsi_layers;      // 1-based text-encoder layer indices
    std::vector<int> adapter_layers;  // 1-based text-encoder layer indices
    int adapter_dim = 16;
    int latent_dim = 32;
    int mlp_ratio = 4;
    uint64_t seed = 0;
    // Test-only switches: bypass the nonlinearity in the mapping network /
    // adapters so exact linear-algebra identities hold.
    bool phi_linear = false;
    bool adapter_linear = false;

    int num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
    int patch_grid() const { return image_size / patch_size; }

    // Validates invariants; fills vsi/adapter layer defaults when empty by
    // scaling the 12-layer defaults {5,8,11} and {2,4,6,8,10,12} to the
    // configured depth.
    void finalize();
};

std::vector<int> scale_layer_indices(const std::vector<int>& base12, int depth);

enum class LogitConvention { DivideByTau, MultiplyByTau };

struct LossConfig {
    double tau_stage1 = 0.05;
    double tau_stage2 = 0.07;
    LogitConvention logit_convention = LogitConvention::DivideByTau;
    double alpha = 0.2;
    int hard_negative_k = 20;
    double beta_clamp_max = 0.9;
    double beta_degenerate_value = 0.5;

    double gamma(double tau) const {
        return logit_convention == LogitConvention::DivideByTau ? 1.0 / tau : tau;
    }
    void validate() const;
};

struct Toggles {
    bool vsi_enabled = true;
    bool sta_enabled = true;
    bool adapters_enabled = true;
    bool hard_negatives_enabled = true;
};

struct TrainConfig {
    int stage = 1;
    double learning_rate = 1e-4;
    double weight_decay = 0.1;
    int batch_size = 32;
    int epochs = 10;
    uint64_t seed = 0;
    Toggles toggles;
    void validate() const;
};

struct RunConfig {
    ModelConfig model;
    LossConfig loss;
    TrainConfig train;
};

// Flat key=value text file ('#' comments, blank lines allowed). Unknown keys
// are rejected.
RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text);

}  // namespace tscir
