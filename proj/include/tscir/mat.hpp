#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace tscir {

// Dense row-major matrix of doubles. Vectors are 1xN or Nx1 matrices.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}
    Mat(int r, int c, std::vector<double> data) : rows(r), cols(c), a(std::move(data)) {
        assert(static_cast<size_t>(rows) * cols == a.size());
    }

    static Mat zeros(int r, int c) { return Mat(r, c); }
    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }
    static Mat row_vector(std::vector<double> v) {
        int n = static_cast<int>(v.size());
        return Mat(1, n, std::move(v));
    }

    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
    double* row_ptr(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return a.data() + static_cast<size_t>(r) * cols; }
    size_t size() const { return a.size(); }
    bool empty() const { return a.empty(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    Mat row(int r) const {
        Mat out(1, cols);
        for (int c = 0; c < cols; ++c) out.at(0, c) = at(r, c);
        return out;
    }
    void set_row(int r, const Mat& v) {
        assert(v.rows == 1 && v.cols == cols);
        for (int c = 0; c < cols; ++c) at(r, c) = v.at(0, c);
    }

    bool all_finite() const {
        for (double x : a)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline double dot_rows(const Mat& a, int ra, const Mat& b, int rb) {
    assert(a.cols == b.cols);
    double s = 0.0;
    const double* pa = a.row_ptr(ra);
    const double* pb = b.row_ptr(rb);
    for (int c = 0; c < a.cols; ++c) s += pa[c] * pb[c];
    return s;
}

inline double row_norm(const Mat& m, int r) {
    return std::sqrt(dot_rows(m, r, m, r));
}

inline void normalize_rows_inplace(Mat& m) {
    for (int r = 0; r < m.rows; ++r) {
        double n = row_norm(m, r);
        if (n > 0) {
            double* p = m.row_ptr(r);
            for (int c = 0; c < m.cols; ++c) p[c] /= n;
        }
    }
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
    assert(a.same_shape(b));
    double m = 0.0;
    for (size_t i = 0; i < a.a.size(); ++i) m = std::max(m, std::fabs(a.a[i] - b.a[i]));
    return m;
}

}  // namespace tscir
