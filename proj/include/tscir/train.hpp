#pragma once

#include <map>
#include <string>
#include <vector>

#include "tscir/config.hpp"
#include "tscir/losses.hpp"
#include "tscir/model.hpp"
#include "tscir/toydata.hpp"

namespace tscir {

// Decoupled-weight-decay adaptive moment optimizer (AdamW) over the
// trainable subset of a ParameterSet.
struct AdamState {
    std::map<std::string, Mat> m, v;
    int64_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};
void adamw_step(ParameterSet& ps, const std::map<std::string, Mat>& grads, AdamState& st,
                double learning_rate, double weight_decay);

struct StepLog {
    int step = 0;
    double l_map = 0, l_sta = 0, l_comp = 0, total = 0;
};
std::string logs_to_jsonl(const std::vector<StepLog>& logs);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<StepLog> logs;
};

// Trainable parameter-name prefixes per stage (honoring ablation toggles).
// Stage 0 is backbone pretraining; stages 1/2 keep the towers frozen.
std::vector<std::string> freeze_policy_prefixes(int stage, const Toggles& toggles);

// Contrastive pretraining of the dual-encoder backbone on image-caption
// pairs. This plays the role of the pretrained frozen backbone the two-stage
// recipe builds on: after this run the towers are frozen for both stages.
// Uses tau_stage1 for the logit scale; requires tcfg.stage == 0. The returned
// checkpoint is stage-tagged 1 (ready for stage-1 training).
TrainResult pretrain_backbone(const std::vector<toy::PairRecord>& data, Model& model,
                              const TrainConfig& tcfg, const LossConfig& lcfg);

// Stage I: image-caption pairs; trains the mapping network, patch projection
// and VSI blocks against the frozen towers. Mutates `model` in place.
TrainResult run_stage1(const std::vector<toy::PairRecord>& data, Model& model,
                       const TrainConfig& tcfg, const LossConfig& lcfg);

// Stage II: triplets; loads a stage-1 checkpoint and trains only the
// composing adapters.
TrainResult run_stage2(const toy::Manifest& data, const Checkpoint& stage1,
                       const TrainConfig& tcfg, const LossConfig& lcfg);

}  // namespace tscir
