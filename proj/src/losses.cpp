#include "tscir/losses.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>

#include "tscir/errors.hpp"
#include "tscir/kernels.hpp"

namespace tscir {

namespace {
constexpr double kQFloor = 1e-12;

Mat row_softmax(const Mat& logits) {
    Mat p(logits.rows, logits.cols);
    for (int i = 0; i < logits.rows; ++i) {
        double mx = logits.at(i, 0);
        for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, logits.at(i, j));
        double z = 0;
        for (int j = 0; j < logits.cols; ++j) {
            p.at(i, j) = std::exp(logits.at(i, j) - mx);
            z += p.at(i, j);
        }
        for (int j = 0; j < logits.cols; ++j) p.at(i, j) /= z;
    }
    return p;
}

double diag_cross_entropy(const Mat& logits) {
    double loss = 0;
    for (int i = 0; i < logits.rows; ++i) {
        double mx = logits.at(i, 0);
        for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, logits.at(i, j));
        double z = 0;
        for (int j = 0; j < logits.cols; ++j) z += std::exp(logits.at(i, j) - mx);
        loss += std::log(z) + mx - logits.at(i, i);
    }
    return loss / logits.rows;
}

Mat scalar_mat(double v) {
    Mat m(1, 1);
    m.at(0, 0) = v;
    return m;
}
}  // namespace

void check_unit_rows(const Mat& m, const char* what) {
    for (int r = 0; r < m.rows; ++r) {
        double n = row_norm(m, r);
        if (std::fabs(n - 1.0) > 1e-6)
            throw ContractViolation(std::string(what) + " row " + std::to_string(r) +
                                    " is not unit-normalized (norm " + std::to_string(n) + ")");
    }
}

ad::Var contrastive_loss(ad::Tape& t, ad::Var U, ad::Var O, double gamma) {
    const Mat& Um = t.val(U);
    const Mat& Om = t.val(O);
    if (!Um.same_shape(Om)) throw ArgumentError("contrastive loss needs equal shapes");
    if (Um.rows < 1) throw ArgumentError("contrastive loss needs B >= 1");
    check_unit_rows(Um, "contrastive U");
    check_unit_rows(Om, "contrastive O");

    Mat logits = kernels::matmul_nt(Um, Om);
    for (double& x : logits.a) x *= gamma;
    double loss = diag_cross_entropy(logits);
    Mat P = row_softmax(logits);

    ad::Var r = t.make_node(scalar_mat(loss), t.needs(U) || t.needs(O), nullptr);
    if (t.needs(r)) {
        t.nodes[r.id].back = [U, O, r, P, gamma](ad::Tape& tp) {
            double g = tp.grad(r).at(0, 0);
            const int B = P.rows;
            Mat G = P;  // (P - I) * gamma * g / B
            for (int i = 0; i < B; ++i) G.at(i, i) -= 1.0;
            for (double& x : G.a) x *= gamma * g / B;
            if (tp.needs(U)) tp.accumulate(U, kernels::matmul(G, tp.val(O)));
            if (tp.needs(O)) tp.accumulate(O, kernels::matmul_tn(G, tp.val(U)));
        };
    }
    return r;
}

ad::Var mapping_loss(ad::Tape& t, ad::Var S, ad::Var V, double gamma) {
    return t.add(contrastive_loss(t, S, V, gamma), contrastive_loss(t, V, S, gamma));
}

ad::Var soft_alignment_loss(ad::Tape& t, ad::Var Vg, ad::Var Sg, ad::Var Cg, double gamma) {
    const Mat& Vm = t.val(Vg);
    const Mat& Sm = t.val(Sg);
    const Mat& Cm = t.val(Cg);
    if (!Vm.same_shape(Sm) || !Vm.same_shape(Cm))
        throw ArgumentError("soft alignment loss needs three equal-shape matrices");
    check_unit_rows(Vm, "soft alignment v_g");
    check_unit_rows(Sm, "soft alignment s_g");
    check_unit_rows(Cm, "soft alignment c_g");

    Mat pl = kernels::matmul_nt(Vm, Cm);
    Mat ql = kernels::matmul_nt(Sm, Cm);
    for (double& x : pl.a) x *= gamma;
    for (double& x : ql.a) x *= gamma;
    Mat P = row_softmax(pl);
    Mat Q = row_softmax(ql);

    const int B = P.rows;
    double loss = 0;
    for (int i = 0; i < B; ++i)
        for (int j = 0; j < B; ++j) {
            double q = std::max(Q.at(i, j), kQFloor);
            loss += P.at(i, j) * (std::log(P.at(i, j)) - std::log(q));
        }
    loss /= B;

    ad::Var r =
        t.make_node(scalar_mat(loss), t.needs(Vg) || t.needs(Sg) || t.needs(Cg), nullptr);
    if (t.needs(r)) {
        t.nodes[r.id].back = [Vg, Sg, Cg, r, P, Q, gamma](ad::Tape& tp) {
            double g = tp.grad(r).at(0, 0);
            const int Bb = P.rows;
            // Gradient w.r.t. the Q logits: floored entries contribute no
            // log-derivative, so the usual (Q - P) picks up a mask.
            Mat dQl(Bb, Bb);
            for (int i = 0; i < Bb; ++i) {
                double s = 0;
                for (int j = 0; j < Bb; ++j)
                    if (Q.at(i, j) >= kQFloor) s += P.at(i, j);
                for (int j = 0; j < Bb; ++j) {
                    double unfloored = Q.at(i, j) >= kQFloor ? P.at(i, j) : 0.0;
                    dQl.at(i, j) = (Q.at(i, j) * s - unfloored) * g / Bb;
                }
            }
            // Gradient w.r.t. the P logits.
            Mat dPl(Bb, Bb);
            for (int i = 0; i < Bb; ++i) {
                double mean = 0;
                std::vector<double> g0(Bb);
                for (int j = 0; j < Bb; ++j) {
                    double q = std::max(Q.at(i, j), kQFloor);
                    g0[j] = std::log(P.at(i, j)) - std::log(q);
                    mean += P.at(i, j) * g0[j];
                }
                for (int j = 0; j < Bb; ++j)
                    dPl.at(i, j) = P.at(i, j) * (g0[j] - mean) * g / Bb;
            }
            if (tp.needs(Sg)) {
                Mat dS = kernels::matmul(dQl, tp.val(Cg));
                for (double& x : dS.a) x *= gamma;
                tp.accumulate(Sg, dS);
            }
            if (tp.needs(Vg)) {
                Mat dV = kernels::matmul(dPl, tp.val(Cg));
                for (double& x : dV.a) x *= gamma;
                tp.accumulate(Vg, dV);
            }
            if (tp.needs(Cg)) {
                Mat dC = kernels::matmul_tn(dQl, tp.val(Sg));
                Mat dCp = kernels::matmul_tn(dPl, tp.val(Vg));
                for (size_t i = 0; i < dC.a.size(); ++i)
                    dC.a[i] = (dC.a[i] + dCp.a[i]) * gamma;
                tp.accumulate(Cg, dC);
            }
        };
    }
    return r;
}

Stage1LossOut stage1_loss(ad::Tape& t, ad::Var Sg, ad::Var Vg, ad::Var Cg, const LossConfig& cfg,
                          bool sta_enabled) {
    double gamma = cfg.gamma(cfg.tau_stage1);
    Stage1LossOut out;
    ad::Var lmap = mapping_loss(t, Sg, Vg, gamma);
    out.map_value = t.val(lmap).at(0, 0);
    if (sta_enabled && cfg.alpha != 0.0) {
        ad::Var lsta = soft_alignment_loss(t, Vg, Sg, Cg, gamma);
        out.sta_value = t.val(lsta).at(0, 0);
        out.total = t.add(lmap, t.scale(lsta, cfg.alpha));
    } else {
        out.total = lmap;
    }
    out.total_value = t.val(out.total).at(0, 0);
    return out;
}

MinedNegatives mine_hard_negatives(const Mat& z_row, const Mat& t_gt_row, const Mat& candidates,
                                   const LossConfig& cfg) {
    const int k = cfg.hard_negative_k;
    const int C = candidates.rows;
    if (k > C)
        throw ArgumentError("hard_negative_k=" + std::to_string(k) + " exceeds " +
                            std::to_string(C) + " available candidates");
    check_unit_rows(z_row, "mining z");
    check_unit_rows(t_gt_row, "mining t_gt");
    check_unit_rows(candidates, "mining candidates");

    std::vector<int> order(C);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> zsim(C);
    for (int i = 0; i < C; ++i) zsim[i] = dot_rows(z_row, 0, candidates, i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return zsim[a] > zsim[b]; });
    order.resize(k);

    MinedNegatives out;
    out.indices = order;
    out.beta.resize(k);
    std::vector<double> gsim(k);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int i = 0; i < k; ++i) {
        gsim[i] = dot_rows(t_gt_row, 0, candidates, order[i]);
        lo = std::min(lo, gsim[i]);
        hi = std::max(hi, gsim[i]);
    }
    const bool degenerate = (hi - lo) < 1e-12;
    for (int i = 0; i < k; ++i) {
        double b = degenerate ? cfg.beta_degenerate_value : (gsim[i] - lo) / (hi - lo);
        out.beta[i] = std::min(b, cfg.beta_clamp_max);
    }

    const int d = candidates.cols;
    out.mixed = Mat(k, d);
    for (int i = 0; i < k; ++i) {
        for (int c = 0; c < d; ++c)
            out.mixed.at(i, c) =
                out.beta[i] * t_gt_row.at(0, c) + (1.0 - out.beta[i]) * candidates.at(order[i], c);
    }
    normalize_rows_inplace(out.mixed);
    return out;
}

ad::Var composed_loss(ad::Tape& t, ad::Var Z, ad::Var T, std::optional<ad::Var> negs,
                      double gamma) {
    const Mat& Zm = t.val(Z);
    const Mat& Tm = t.val(T);
    if (!Zm.same_shape(Tm)) throw ArgumentError("composed loss needs equal shapes");
    const int B = Zm.rows, d = Zm.cols;
    check_unit_rows(Zm, "composed Z");
    check_unit_rows(Tm, "composed T");

    int k = 0;
    const Mat* Nm = nullptr;
    if (negs && negs->valid()) {
        Nm = &t.val(*negs);
        if (Nm->cols != d || Nm->rows % B != 0)
            throw ArgumentError("hard negatives must be (B*k) x d");
        k = Nm->rows / B;
        if (k > 0) check_unit_rows(*Nm, "composed negatives");
    }

    // Text->image direction, denominator augmented with per-sample negatives.
    Mat logits(B, B + k);
    for (int i = 0; i < B; ++i) {
        for (int j = 0; j < B; ++j) logits.at(i, j) = gamma * dot_rows(Zm, i, Tm, j);
        for (int l = 0; l < k; ++l)
            logits.at(i, B + l) = gamma * dot_rows(Zm, i, *Nm, i * k + l);
    }
    double loss_t2i = diag_cross_entropy(logits);
    Mat P = row_softmax(logits);

    // Image->text direction, unaugmented.
    Mat logits_i2t = kernels::matmul_nt(Tm, Zm);
    for (double& x : logits_i2t.a) x *= gamma;
    double loss_i2t = diag_cross_entropy(logits_i2t);
    Mat Pi = row_softmax(logits_i2t);

    bool needs = t.needs(Z) || t.needs(T) || (negs && negs->valid() && t.needs(*negs));
    ad::Var r = t.make_node(scalar_mat(loss_t2i + loss_i2t), needs, nullptr);
    if (t.needs(r)) {
        std::optional<ad::Var> negs_cap = negs;
        t.nodes[r.id].back = [Z, T, negs_cap, r, P, Pi, gamma, B, k](ad::Tape& tp) {
            double g = tp.grad(r).at(0, 0);
            const Mat& Zv = tp.val(Z);
            const Mat& Tv = tp.val(T);
            const int dd = Zv.cols;
            Mat dZ(B, dd), dT(B, dd);
            Mat dN = k > 0 ? Mat(B * k, dd) : Mat();
            // text->image
            for (int i = 0; i < B; ++i) {
                for (int j = 0; j < B + k; ++j) {
                    double coef = (P.at(i, j) - (j == i ? 1.0 : 0.0)) * gamma * g / B;
                    if (coef == 0.0) continue;
                    const Mat& cand = j < B ? Tv : tp.val(*negs_cap);
                    int row = j < B ? j : i * k + (j - B);
                    for (int c = 0; c < dd; ++c) {
                        dZ.at(i, c) += coef * cand.at(row, c);
                        if (j < B) dT.at(row, c) += coef * Zv.at(i, c);
                        else dN.at(row, c) += coef * Zv.at(i, c);
                    }
                }
            }
            // image->text
            for (int i = 0; i < B; ++i)
                for (int j = 0; j < B; ++j) {
                    double coef = (Pi.at(i, j) - (j == i ? 1.0 : 0.0)) * gamma * g / B;
                    if (coef == 0.0) continue;
                    for (int c = 0; c < dd; ++c) {
                        dT.at(i, c) += coef * Zv.at(j, c);
                        dZ.at(j, c) += coef * Tv.at(i, c);
                    }
                }
            if (tp.needs(Z)) tp.accumulate(Z, dZ);
            if (tp.needs(T)) tp.accumulate(T, dT);
            if (k > 0 && negs_cap && tp.needs(*negs_cap)) tp.accumulate(*negs_cap, dN);
        };
    }
    return r;
}

Stage2LossOut stage2_loss(ad::Tape& t, ad::Var Zc, ad::Var Tg, std::optional<ad::Var> negs,
                          ad::Var Zmg, ad::Var Vref, ad::Var Cg, const LossConfig& cfg,
                          bool sta_enabled) {
    double gamma = cfg.gamma(cfg.tau_stage2);
    Stage2LossOut out;
    ad::Var lcomp = composed_loss(t, Zc, Tg, negs, gamma);
    out.comp_value = t.val(lcomp).at(0, 0);
    ad::Var lmap = mapping_loss(t, Zmg, Vref, gamma);
    out.map_value = t.val(lmap).at(0, 0);
    ad::Var total = t.add(lcomp, lmap);
    if (sta_enabled && cfg.alpha != 0.0) {
        ad::Var lsta = soft_alignment_loss(t, Vref, Zmg, Cg, gamma);
        out.sta_value = t.val(lsta).at(0, 0);
        total = t.add(total, t.scale(lsta, cfg.alpha));
    }
    out.total = total;
    out.total_value = t.val(total).at(0, 0);
    return out;
}

}  // namespace tscir
