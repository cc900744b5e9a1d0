#include "tscir/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tscir/errors.hpp"

namespace tscir {

std::vector<int> scale_layer_indices(const std::vector<int>& base12, int depth) {
    std::vector<int> out;
    for (int i : base12) {
        int scaled = static_cast<int>(std::lround(static_cast<double>(i) * depth / 12.0));
        scaled = std::clamp(scaled, 1, depth);
        if (out.empty() || out.back() != scaled) out.push_back(scaled);
    }
    return out;
}

void ModelConfig::finalize() {
    if (embed_dim <= 0) throw ConfigError("embed_dim must be positive");
    if (num_heads <= 0 || embed_dim % num_heads != 0)
        throw ConfigError("embed_dim must be divisible by num_heads");
    if (patch_size <= 0 || image_size % patch_size != 0)
        throw ConfigError("patch_size must divide image_size");
    if (max_tokens < 2) throw ConfigError("max_tokens must be at least 2");
    if (num_layers_img < 1 || num_layers_txt < 1) throw ConfigError("encoder depth must be >= 1");
    if (adapter_dim < 1 || latent_dim < 1) throw ConfigError("projection widths must be >= 1");
    int g = patch_grid();
    if (g * g != num_patches()) throw ConfigError("patch count must form a square grid");

    if (vsi_layers.empty()) vsi_layers = scale_layer_indices({5, 8, 11}, num_layers_txt);
    if (adapter_layers.empty())
        adapter_layers = scale_layer_indices({2, 4, 6, 8, 10, 12}, num_layers_txt);
    for (auto* layers : {&vsi_layers, &adapter_layers}) {
        std::sort(layers->begin(), layers->end());
        layers->erase(std::unique(layers->begin(), layers->end()), layers->end());
        for (int i : *layers)
            if (i < 1 || i > num_layers_txt)
                throw ConfigError("layer index " + std::to_string(i) +
                                  " outside text-encoder depth");
    }
}

void LossConfig::validate() const {
    if (tau_stage1 <= 0 || tau_stage2 <= 0) throw ConfigError("temperature must be positive");
    if (alpha < 0) throw ConfigError("alpha must be >= 0");
    if (beta_clamp_max < 0 || beta_clamp_max > 1)
        throw ConfigError("beta_clamp_max must be within [0,1]");
    if (hard_negative_k < 0) throw ConfigError("hard_negative_k must be >= 0");
}

void TrainConfig::validate() const {
    if (stage != 0 && stage != 1 && stage != 2)
        throw ConfigError("stage must be 0 (backbone pretraining), 1 or 2");
    if (learning_rate < 0) throw ConfigError("learning_rate must be >= 0");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2 for contrastive training");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
}

namespace {

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) out.push_back(std::stoi(tok));
    }
    return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw ConfigError("invalid boolean for key '" + key + "': " + v);
}

}  // namespace

RunConfig parse_run_config_text(const std::string& text) {
    RunConfig rc;
    bool adapters_set = false, hn_set = false;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            auto b = s.find_first_not_of(" \t");
            auto e = s.find_last_not_of(" \t");
            s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
        };
        trim(key);
        trim(val);

        auto& m = rc.model;
        auto& l = rc.loss;
        auto& t = rc.train;
        if (key == "embed_dim") m.embed_dim = std::stoi(val);
        else if (key == "image_size") m.image_size = std::stoi(val);
        else if (key == "patch_size") m.patch_size = std::stoi(val);
        else if (key == "max_tokens") m.max_tokens = std::stoi(val);
        else if (key == "num_layers_img") m.num_layers_img = std::stoi(val);
        else if (key == "num_layers_txt") m.num_layers_txt = std::stoi(val);
        else if (key == "num_heads") m.num_heads = std::stoi(val);
        else if (key == "vocab_size") m.vocab_size = std::stoi(val);
        else if (key == "vsi_layers") m.vsi_layers = parse_int_list(val);
        else if (key == "adapter_layers") m.adapter_layers = parse_int_list(val);
        else if (key == "adapter_dim") m.adapter_dim = std::stoi(val);
        else if (key == "latent_dim") m.latent_dim = std::stoi(val);
        else if (key == "mlp_ratio") m.mlp_ratio = std::stoi(val);
        else if (key == "phi_linear") m.phi_linear = parse_bool(val, key);
        else if (key == "adapter_linear") m.adapter_linear = parse_bool(val, key);
        else if (key == "tau_stage1") l.tau_stage1 = std::stod(val);
        else if (key == "tau_stage2") l.tau_stage2 = std::stod(val);
        else if (key == "logit_convention") {
            if (val == "divide_by_tau") l.logit_convention = LogitConvention::DivideByTau;
            else if (val == "multiply_by_tau") l.logit_convention = LogitConvention::MultiplyByTau;
            else throw ConfigError("invalid logit_convention: " + val);
        }
        else if (key == "alpha") l.alpha = std::stod(val);
        else if (key == "hard_negative_k") l.hard_negative_k = std::stoi(val);
        else if (key == "beta_clamp_max") l.beta_clamp_max = std::stod(val);
        else if (key == "beta_degenerate_value") l.beta_degenerate_value = std::stod(val);
        else if (key == "stage") t.stage = std::stoi(val);
        else if (key == "learning_rate") t.learning_rate = std::stod(val);
        else if (key == "weight_decay") t.weight_decay = std::stod(val);
        else if (key == "batch_size") t.batch_size = std::stoi(val);
        else if (key == "epochs") t.epochs = std::stoi(val);
        else if (key == "seed") {
            t.seed = std::stoull(val);
            m.seed = t.seed;
        }
        else if (key == "vsi_enabled") t.toggles.vsi_enabled = parse_bool(val, key);
        else if (key == "sta_enabled") t.toggles.sta_enabled = parse_bool(val, key);
        else if (key == "adapters_enabled") {
            t.toggles.adapters_enabled = parse_bool(val, key);
            adapters_set = true;
        }
        else if (key == "hard_negatives_enabled") {
            t.toggles.hard_negatives_enabled = parse_bool(val, key);
            hn_set = true;
        }
        else throw ConfigError("unknown key '" + key + "' at line " + std::to_string(lineno));
    }
    // Stage 1 has no adapters or hard negatives unless the config says so
    // explicitly (which is then rejected downstream as contradictory).
    if (rc.train.stage == 1) {
        if (!adapters_set) rc.train.toggles.adapters_enabled = false;
        if (!hn_set) rc.train.toggles.hard_negatives_enabled = false;
    }
    rc.model.finalize();
    rc.loss.validate();
    rc.train.validate();
    return rc;
}

RunConfig parse_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ArgumentError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_run_config_text(ss.str());
}

}  // namespace tscir
