#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "tscir/mat.hpp"

namespace tscir::ad {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Every op records a backward closure; backward() replays
// them in reverse creation order. A tape is single-threaded; batch-level
// parallelism uses one tape per sample.
class Tape {
public:
    struct Node {
        Mat val;
        Mat grad;
        bool needs = false;
        std::function<void(Tape&)> back;
    };

    std::vector<Node> nodes;
    bool grad_enabled = true;

    Var leaf(Mat v, bool needs_grad = false);

    const Mat& val(Var v) const { return nodes[v.id].val; }
    Mat& grad(Var v) { return nodes[v.id].grad; }
    bool needs(Var v) const { return nodes[v.id].needs; }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var hadamard(Var a, Var b);
    Var scale(Var a, double s);
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);   // a * b^T
    Var add_rowvec(Var m, Var b);  // broadcast 1xD row over all rows
    Var gelu(Var a);
    Var layernorm(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var softmax_rows(Var x, const Mat* add_mask = nullptr);
    Var slice_cols(Var a, int c0, int c1);
    Var slice_rows(Var a, int r0, int r1);
    Var concat_cols(const std::vector<Var>& parts);
    Var concat_rows(const std::vector<Var>& parts);
    Var get_row(Var a, int r);
    Var set_row(Var m, int r, Var row);
    Var embed_rows(Var table, const std::vector<int>& ids);
    Var l2normalize_rows(Var a);
    Var sum_all(Var a);
    // 3x3 same-padded convolution over a grid x grid patch field; V is
    // (grid*grid) x d in row-major grid order, W is (9*d) x d, b is 1 x d.
    Var conv3x3_grid(Var V, Var W, Var b, int grid);

    void backward(Var root);
    void backward_seeded(const std::vector<std::pair<Var, Mat>>& seeds);

    // Records a node with an explicit backward closure; used by fused ops
    // (losses) that derive their own gradients.
    Var make_node(Mat val, bool needs_grad, std::function<void(Tape&)> back);

    void accumulate(Var v, const Mat& g);

private:
    void run_backward();
};

double gelu_scalar(double x);
double gelu_grad_scalar(double x);

}  // namespace tscir::ad
