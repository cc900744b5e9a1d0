#pragma once

#include <optional>
#include <vector>

#include "tscir/autograd.hpp"
#include "tscir/config.hpp"

namespace tscir {

// Throws ContractViolation if any row deviates from unit L2 norm by > 1e-6.
void check_unit_rows(const Mat& m, const char* what);

// InfoNCE over a batch: rows of U are queries, rows of O candidates, the
// diagonal is positive. gamma is the logit scale (1/tau or tau, per config).
ad::Var contrastive_loss(ad::Tape& t, ad::Var U, ad::Var O, double gamma);

// Symmetric contrastive alignment of text summaries and image features.
ad::Var mapping_loss(ad::Tape& t, ad::Var S, ad::Var V, double gamma);

// KL between the image->caption and text->caption similarity distributions,
// averaged over the batch. Q is floored at 1e-12 before the log.
ad::Var soft_alignment_loss(ad::Tape& t, ad::Var Vg, ad::Var Sg, ad::Var Cg, double gamma);

struct Stage1LossOut {
    ad::Var total;
    double map_value = 0, sta_value = 0, total_value = 0;
};
Stage1LossOut stage1_loss(ad::Tape& t, ad::Var Sg, ad::Var Vg, ad::Var Cg, const LossConfig& cfg,
                          bool sta_enabled = true);

struct MinedNegatives {
    Mat mixed;                  // k x d, unit rows
    std::vector<double> beta;   // k, each within [0, beta_clamp_max]
    std::vector<int> indices;   // selected candidate rows, by descending z-similarity
};
// Top-k selection by z-similarity over candidate rows (ground truth already
// excluded by the caller), then interpolation toward the ground truth with
// min-max-normalized mixing weights.
MinedNegatives mine_hard_negatives(const Mat& z_row, const Mat& t_gt_row, const Mat& candidates,
                                   const LossConfig& cfg);

// Symmetric contrastive loss between composed features Z and targets T; the
// text->image direction's denominators are augmented with per-sample mined
// negatives (negs is (B*k) x d; pass an invalid Var for k = 0).
ad::Var composed_loss(ad::Tape& t, ad::Var Z, ad::Var T, std::optional<ad::Var> negs,
                      double gamma);

struct Stage2LossOut {
    ad::Var total;
    double comp_value = 0, map_value = 0, sta_value = 0, total_value = 0;
};
Stage2LossOut stage2_loss(ad::Tape& t, ad::Var Zc, ad::Var Tg, std::optional<ad::Var> negs,
                          ad::Var Zmg, ad::Var Vref, ad::Var Cg, const LossConfig& cfg,
                          bool sta_enabled = true);

}  // namespace tscir
