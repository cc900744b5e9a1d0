#include "tscir/autograd.hpp"

#include <cassert>
#include <cmath>
#include <limits>

#include "tscir/kernels.hpp"

namespace tscir::ad {

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad_scalar(double x) {
    const double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt2pi = 0.39894228040143267794;
    return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
}

Var Tape::make_node(Mat val, bool needs_grad, std::function<void(Tape&)> back) {
    Node n;
    n.val = std::move(val);
    n.needs = grad_enabled && needs_grad;
    if (n.needs) {
        n.grad = Mat(n.val.rows, n.val.cols);
        n.back = std::move(back);
    }
    nodes.push_back(std::move(n));
    return Var{static_cast<int>(nodes.size()) - 1};
}

Var Tape::leaf(Mat v, bool needs_grad) { return make_node(std::move(v), needs_grad, nullptr); }

void Tape::accumulate(Var v, const Mat& g) {
    if (!nodes[v.id].needs) return;
    Mat& dst = nodes[v.id].grad;
    assert(dst.same_shape(g));
    for (size_t i = 0; i < g.a.size(); ++i) dst.a[i] += g.a[i];
}

void Tape::run_backward() {
    for (int i = static_cast<int>(nodes.size()) - 1; i >= 0; --i) {
        if (nodes[i].needs && nodes[i].back) nodes[i].back(*this);
    }
}

void Tape::backward(Var root) {
    assert(val(root).rows == 1 && val(root).cols == 1);
    if (!nodes[root.id].needs) return;
    nodes[root.id].grad.at(0, 0) += 1.0;
    run_backward();
}

void Tape::backward_seeded(const std::vector<std::pair<Var, Mat>>& seeds) {
    for (const auto& [v, g] : seeds) accumulate(v, g);
    run_backward();
}

Var Tape::add(Var a, Var b) {
    assert(val(a).same_shape(val(b)));
    Mat out = val(a);
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] += val(b).a[i];
    Var r = make_node(std::move(out), needs(a) || needs(b), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [a, b, r](Tape& t) {
            const Mat& g = t.grad(r);
            t.accumulate(a, g);
            t.accumulate(b, g);
        };
    }
    return r;
}

Var Tape::sub(Var a, Var b) {
    assert(val(a).same_shape(val(b)));
    Mat out = val(a);
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] -= val(b).a[i];
    Var r = make_node(std::move(out), needs(a) || needs(b), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [a, b, r](Tape& t) {
            const Mat& g = t.grad(r);
            t.accumulate(a, g);
            if (t.needs(b)) {
                Mat ng = g;
                for (double& x : ng.a) x = -x;
                t.accumulate(b, ng);
            }
        };
    }
    return r;
}

Var Tape::hadamard(Var a, Var b) {
    assert(val(a).same_shape(val(b)));
    Mat out = val(a);
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] *= val(b).a[i];
    Var r = make_node(std::move(out), needs(a) || needs(b), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [a, b, r](Tape& t) {
            const Mat& g = t.grad(r);
            if (t.needs(a)) {
                Mat ga = g;
                for (size_t i = 0; i < ga.a.size(); ++i) ga.a[i] *= t.val(b).a[i];
                t.accumulate(a, ga);
            }
            if (t.needs(b)) {
                Mat gb = g;
                for (size_t i = 0; i < gb.a.size(); ++i) gb.a[i] *= t.val(a).a[i];
                t.accumulate(b, gb);
            }
        };
    }
    return r;
}

Var Tape::scale(Var a, double s) {
    Mat out = val(a);
    for (double& x : out.a) x *= s;
    Var r = make_node(std::move(out), needs(a), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [a, s, r](Tape& t) {
            Mat g = t.grad(r);
            for (double& x : g.a) x *= s;
            t.accumulate(a, g);
        };
    }
    return r;
}

Var Tape::matmul(Var a, Var b) {
    Mat out = kernels::matmul(val(a), val(b));
    Var r = make_node(std::move(out), needs(a) || needs(b), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [a, b, r](Tape& t) {
            const Mat& g = t.grad(r);
            if (t.needs(a)) t.accumulate(a, kernels::matmul_nt(g, t.val(b)));
            if (t.needs(b)) t.accumulate(b, kernels::matmul_tn(t.val(a), g));
        };
    }
    return r;
}

Var Tape::matmul_nt(Var a, Var b) {
    Mat out = kernels::matmul_nt(val(a), val(b));
    Var r = make_node(std::move(out), needs(a) || needs(b), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [a, b, r](Tape& t) {
            const Mat& g = t.grad(r);
            if (t.needs(a)) t.accumulate(a, kernels::matmul(g, t.val(b)));
            if (t.needs(b)) t.accumulate(b, kernels::matmul_tn(g, t.val(a)));
        };
    }
    return r;
}

Var Tape::add_rowvec(Var m, Var b) {
    assert(val(b).rows == 1 && val(b).cols == val(m).cols);
    Mat out = val(m);
    for (int rI = 0; rI < out.rows; ++rI)
        for (int c = 0; c < out.cols; ++c) out.at(rI, c) += val(b).at(0, c);
    Var r = make_node(std::move(out), needs(m) || needs(b), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [m, b, r](Tape& t) {
            const Mat& g = t.grad(r);
            t.accumulate(m, g);
            if (t.needs(b)) {
                Mat gb(1, g.cols);
                for (int rI = 0; rI < g.rows; ++rI)
                    for (int c = 0; c < g.cols; ++c) gb.at(0, c) += g.at(rI, c);
                t.accumulate(b, gb);
            }
        };
    }
    return r;
}

Var Tape::gelu(Var a) {
    Mat out = val(a);
    for (double& x : out.a) x = gelu_scalar(x);
    Var r = make_node(std::move(out), needs(a), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [a, r](Tape& t) {
            Mat g = t.grad(r);
            for (size_t i = 0; i < g.a.size(); ++i) g.a[i] *= gelu_grad_scalar(t.val(a).a[i]);
            t.accumulate(a, g);
        };
    }
    return r;
}

Var Tape::layernorm(Var x, Var gamma, Var beta, double eps) {
    const Mat& X = val(x);
    const int R = X.rows, D = X.cols;
    assert(val(gamma).cols == D && val(beta).cols == D);
    Mat xhat(R, D);
    std::vector<double> inv_sigma(R);
    for (int rI = 0; rI < R; ++rI) {
        double mu = 0;
        for (int c = 0; c < D; ++c) mu += X.at(rI, c);
        mu /= D;
        double var = 0;
        for (int c = 0; c < D; ++c) {
            double dv = X.at(rI, c) - mu;
            var += dv * dv;
        }
        var /= D;
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[rI] = is;
        for (int c = 0; c < D; ++c) xhat.at(rI, c) = (X.at(rI, c) - mu) * is;
    }
    Mat out(R, D);
    for (int rI = 0; rI < R; ++rI)
        for (int c = 0; c < D; ++c)
            out.at(rI, c) = val(gamma).at(0, c) * xhat.at(rI, c) + val(beta).at(0, c);
    Var r = make_node(std::move(out), needs(x) || needs(gamma) || needs(beta), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [x, gamma, beta, r, xhat, inv_sigma](Tape& t) {
            const Mat& g = t.grad(r);
            const int Rr = g.rows, Dd = g.cols;
            if (t.needs(beta)) {
                Mat gb(1, Dd);
                for (int rI = 0; rI < Rr; ++rI)
                    for (int c = 0; c < Dd; ++c) gb.at(0, c) += g.at(rI, c);
                t.accumulate(beta, gb);
            }
            if (t.needs(gamma)) {
                Mat gg(1, Dd);
                for (int rI = 0; rI < Rr; ++rI)
                    for (int c = 0; c < Dd; ++c) gg.at(0, c) += g.at(rI, c) * xhat.at(rI, c);
                t.accumulate(gamma, gg);
            }
            if (t.needs(x)) {
                Mat gx(Rr, Dd);
                for (int rI = 0; rI < Rr; ++rI) {
                    double mean_dxhat = 0, mean_dxhat_xhat = 0;
                    std::vector<double> dxhat(Dd);
                    for (int c = 0; c < Dd; ++c) {
                        dxhat[c] = g.at(rI, c) * t.val(gamma).at(0, c);
                        mean_dxhat += dxhat[c];
                        mean_dxhat_xhat += dxhat[c] * xhat.at(rI, c);
                    }
                    mean_dxhat /= Dd;
                    mean_dxhat_xhat /= Dd;
                    for (int c = 0; c < Dd; ++c)
                        gx.at(rI, c) = inv_sigma[rI] *
                                       (dxhat[c] - mean_dxhat - xhat.at(rI, c) * mean_dxhat_xhat);
                }
                t.accumulate(x, gx);
            }
        };
    }
    return r;
}

Var Tape::softmax_rows(Var x, const Mat* add_mask) {
    const Mat& X = val(x);
    Mat out(X.rows, X.cols);
    for (int rI = 0; rI < X.rows; ++rI) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < X.cols; ++c) {
            double v = X.at(rI, c) + (add_mask ? add_mask->at(rI, c) : 0.0);
            if (v > mx) mx = v;
        }
        double z = 0;
        for (int c = 0; c < X.cols; ++c) {
            double v = X.at(rI, c) + (add_mask ? add_mask->at(rI, c) : 0.0);
            double e = std::isinf(v) && v < 0 ? 0.0 : std::exp(v - mx);
            out.at(rI, c) = e;
            z += e;
        }
        for (int c = 0; c < X.cols; ++c) out.at(rI, c) /= z;
    }
    Var r = make_node(std::move(out), needs(x), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [x, r](Tape& t) {
            const Mat& g = t.grad(r);
            const Mat& y = t.val(r);
            Mat gx(g.rows, g.cols);
            for (int rI = 0; rI < g.rows; ++rI) {
                double s = 0;
                for (int c = 0; c < g.cols; ++c) s += g.at(rI, c) * y.at(rI, c);
                for (int c = 0; c < g.cols; ++c)
                    gx.at(rI, c) = y.at(rI, c) * (g.at(rI, c) - s);
            }
            t.accumulate(x, gx);
        };
    }
    return r;
}

Var Tape::slice_cols(Var a, int c0, int c1) {
    const Mat& A = val(a);
    Mat out(A.rows, c1 - c0);
    for (int rI = 0; rI < A.rows; ++rI)
        for (int c = c0; c < c1; ++c) out.at(rI, c - c0) = A.at(rI, c);
    Var r = make_node(std::move(out), needs(a), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [a, r, c0](Tape& t) {
            const Mat& g = t.grad(r);
            Mat ga(t.val(a).rows, t.val(a).cols);
            for (int rI = 0; rI < g.rows; ++rI)
                for (int c = 0; c < g.cols; ++c) ga.at(rI, c + c0) = g.at(rI, c);
            t.accumulate(a, ga);
        };
    }
    return r;
}

Var Tape::slice_rows(Var a, int r0, int r1) {
    const Mat& A = val(a);
    Mat out(r1 - r0, A.cols);
    for (int rI = r0; rI < r1; ++rI)
        for (int c = 0; c < A.cols; ++c) out.at(rI - r0, c) = A.at(rI, c);
    Var r = make_node(std::move(out), needs(a), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [a, r, r0](Tape& t) {
            const Mat& g = t.grad(r);
            Mat ga(t.val(a).rows, t.val(a).cols);
            for (int rI = 0; rI < g.rows; ++rI)
                for (int c = 0; c < g.cols; ++c) ga.at(rI + r0, c) = g.at(rI, c);
            t.accumulate(a, ga);
        };
    }
    return r;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    assert(!parts.empty());
    int R = val(parts[0]).rows;
    int total = 0;
    bool any = false;
    for (Var p : parts) {
        assert(val(p).rows == R);
        total += val(p).cols;
        any = any || needs(p);
    }
    Mat out(R, total);
    int off = 0;
    for (Var p : parts) {
        const Mat& P = val(p);
        for (int rI = 0; rI < R; ++rI)
            for (int c = 0; c < P.cols; ++c) out.at(rI, off + c) = P.at(rI, c);
        off += P.cols;
    }
    Var r = make_node(std::move(out), any, nullptr);
    if (nodes[r.id].needs) {
        std::vector<Var> ps = parts;
        nodes[r.id].back = [ps, r](Tape& t) {
            const Mat& g = t.grad(r);
            int off2 = 0;
            for (Var p : ps) {
                int pc = t.val(p).cols;
                if (t.needs(p)) {
                    Mat gp(g.rows, pc);
                    for (int rI = 0; rI < g.rows; ++rI)
                        for (int c = 0; c < pc; ++c) gp.at(rI, c) = g.at(rI, off2 + c);
                    t.accumulate(p, gp);
                }
                off2 += pc;
            }
        };
    }
    return r;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    assert(!parts.empty());
    int C = val(parts[0]).cols;
    int total = 0;
    bool any = false;
    for (Var p : parts) {
        assert(val(p).cols == C);
        total += val(p).rows;
        any = any || needs(p);
    }
    Mat out(total, C);
    int off = 0;
    for (Var p : parts) {
        const Mat& P = val(p);
        for (int rI = 0; rI < P.rows; ++rI)
            for (int c = 0; c < C; ++c) out.at(off + rI, c) = P.at(rI, c);
        off += P.rows;
    }
    Var r = make_node(std::move(out), any, nullptr);
    if (nodes[r.id].needs) {
        std::vector<Var> ps = parts;
        nodes[r.id].back = [ps, r](Tape& t) {
            const Mat& g = t.grad(r);
            int off2 = 0;
            for (Var p : ps) {
                int pr = t.val(p).rows;
                if (t.needs(p)) {
                    Mat gp(pr, g.cols);
                    for (int rI = 0; rI < pr; ++rI)
                        for (int c = 0; c < g.cols; ++c) gp.at(rI, c) = g.at(off2 + rI, c);
                    t.accumulate(p, gp);
                }
                off2 += pr;
            }
        };
    }
    return r;
}

Var Tape::get_row(Var a, int rI) {
    Mat out = val(a).row(rI);
    Var r = make_node(std::move(out), needs(a), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [a, r, rI](Tape& t) {
            const Mat& g = t.grad(r);
            Mat ga(t.val(a).rows, t.val(a).cols);
            for (int c = 0; c < g.cols; ++c) ga.at(rI, c) = g.at(0, c);
            t.accumulate(a, ga);
        };
    }
    return r;
}

Var Tape::set_row(Var m, int rI, Var row) {
    assert(val(row).rows == 1 && val(row).cols == val(m).cols);
    Mat out = val(m);
    out.set_row(rI, val(row));
    Var r = make_node(std::move(out), needs(m) || needs(row), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [m, row, r, rI](Tape& t) {
            const Mat& g = t.grad(r);
            if (t.needs(m)) {
                Mat gm = g;
                for (int c = 0; c < gm.cols; ++c) gm.at(rI, c) = 0.0;
                t.accumulate(m, gm);
            }
            if (t.needs(row)) t.accumulate(row, g.row(rI));
        };
    }
    return r;
}

Var Tape::embed_rows(Var table, const std::vector<int>& ids) {
    const Mat& T = val(table);
    Mat out(static_cast<int>(ids.size()), T.cols);
    for (size_t i = 0; i < ids.size(); ++i) {
        assert(ids[i] >= 0 && ids[i] < T.rows);
        for (int c = 0; c < T.cols; ++c) out.at(static_cast<int>(i), c) = T.at(ids[i], c);
    }
    Var r = make_node(std::move(out), needs(table), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [table, r, ids](Tape& t) {
            const Mat& g = t.grad(r);
            Mat gt(t.val(table).rows, t.val(table).cols);
            for (size_t i = 0; i < ids.size(); ++i)
                for (int c = 0; c < g.cols; ++c)
                    gt.at(ids[i], c) += g.at(static_cast<int>(i), c);
            t.accumulate(table, gt);
        };
    }
    return r;
}

Var Tape::l2normalize_rows(Var a) {
    const Mat& A = val(a);
    Mat out(A.rows, A.cols);
    std::vector<double> norms(A.rows);
    for (int rI = 0; rI < A.rows; ++rI) {
        double n = row_norm(A, rI);
        norms[rI] = n;
        for (int c = 0; c < A.cols; ++c) out.at(rI, c) = A.at(rI, c) / n;
    }
    Var r = make_node(std::move(out), needs(a), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [a, r, norms](Tape& t) {
            const Mat& g = t.grad(r);
            const Mat& y = t.val(r);
            Mat ga(g.rows, g.cols);
            for (int rI = 0; rI < g.rows; ++rI) {
                double gy = 0;
                for (int c = 0; c < g.cols; ++c) gy += g.at(rI, c) * y.at(rI, c);
                for (int c = 0; c < g.cols; ++c)
                    ga.at(rI, c) = (g.at(rI, c) - y.at(rI, c) * gy) / norms[rI];
            }
            t.accumulate(a, ga);
        };
    }
    return r;
}

Var Tape::sum_all(Var a) {
    double s = 0;
    for (double x : val(a).a) s += x;
    Mat out(1, 1);
    out.at(0, 0) = s;
    Var r = make_node(std::move(out), needs(a), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [a, r](Tape& t) {
            double g = t.grad(r).at(0, 0);
            Mat ga(t.val(a).rows, t.val(a).cols);
            for (double& x : ga.a) x = g;
            t.accumulate(a, ga);
        };
    }
    return r;
}

Var Tape::conv3x3_grid(Var Vv, Var Wv, Var bv, int grid) {
    const Mat& V = val(Vv);
    const Mat& W = val(Wv);
    const Mat& b = val(bv);
    const int m = V.rows, d = V.cols;
    assert(m == grid * grid);
    assert(W.rows == 9 * d && W.cols == d);
    assert(b.rows == 1 && b.cols == d);
    Mat out(m, d);
    for (int p = 0; p < m; ++p) {
        const int py = p / grid, px = p % grid;
        double* op = out.row_ptr(p);
        for (int c = 0; c < d; ++c) op[c] = b.at(0, c);
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                int qy = py + dy, qx = px + dx;
                if (qy < 0 || qy >= grid || qx < 0 || qx >= grid) continue;
                const int q = qy * grid + qx;
                const int t = (dy + 1) * 3 + (dx + 1);
                const double* vq = V.row_ptr(q);
                for (int cin = 0; cin < d; ++cin) {
                    const double x = vq[cin];
                    if (x == 0.0) continue;
                    const double* wr = W.row_ptr(t * d + cin);
                    for (int c = 0; c < d; ++c) op[c] += x * wr[c];
                }
            }
    }
    Var r = make_node(std::move(out), needs(Vv) || needs(Wv) || needs(bv), nullptr);
    if (nodes[r.id].needs) {
        nodes[r.id].back = [Vv, Wv, bv, r, grid](Tape& t) {
            const Mat& g = t.grad(r);
            const Mat& V = t.val(Vv);
            const Mat& W = t.val(Wv);
            const int m = V.rows, d = V.cols;
            Mat gV(m, d), gW(9 * d, d), gb(1, d);
            for (int p = 0; p < m; ++p) {
                const int py = p / grid, px = p % grid;
                const double* gp = g.row_ptr(p);
                for (int c = 0; c < d; ++c) gb.at(0, c) += gp[c];
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int qy = py + dy, qx = px + dx;
                        if (qy < 0 || qy >= grid || qx < 0 || qx >= grid) continue;
                        const int q = qy * grid + qx;
                        const int tt = (dy + 1) * 3 + (dx + 1);
                        for (int cin = 0; cin < d; ++cin) {
                            const double x = V.at(q, cin);
                            const double* wr = W.row_ptr(tt * d + cin);
                            double s = 0;
                            for (int c = 0; c < d; ++c) {
                                s += gp[c] * wr[c];
                                gW.at(tt * d + cin, c) += x * gp[c];
                            }
                            gV.at(q, cin) += s;
                        }
                    }
            }
            if (t.needs(Vv)) t.accumulate(Vv, gV);
            if (t.needs(Wv)) t.accumulate(Wv, gW);
            if (t.needs(bv)) t.accumulate(bv, gb);
        };
    }
    return r;
}

}  // namespace tscir::ad
