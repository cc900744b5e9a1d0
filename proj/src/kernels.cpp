#include "tscir/kernels.hpp"

#include <cassert>

namespace tscir::kernels {

namespace {
// Below this many output elements the OpenMP fork/join overhead dominates.
constexpr int kParallelThreshold = 4096;
}  // namespace

void matmul(const Mat& A, const Mat& B, Mat& C) {
    assert(A.cols == B.rows);
    C = Mat(A.rows, B.cols);
    const int n = A.rows, k = A.cols, m = B.cols;
#pragma omp parallel for schedule(static) if (n * m >= kParallelThreshold)
    for (int i = 0; i < n; ++i) {
        const double* ai = A.row_ptr(i);
        double* ci = C.row_ptr(i);
        for (int p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = B.row_ptr(p);
            for (int j = 0; j < m; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmul_nt(const Mat& A, const Mat& B, Mat& C) {
    assert(A.cols == B.cols);
    C = Mat(A.rows, B.rows);
    const int n = A.rows, k = A.cols, m = B.rows;
#pragma omp parallel for schedule(static) if (n * m >= kParallelThreshold)
    for (int i = 0; i < n; ++i) {
        const double* ai = A.row_ptr(i);
        double* ci = C.row_ptr(i);
        for (int j = 0; j < m; ++j) {
            const double* bj = B.row_ptr(j);
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] = s;
        }
    }
}

void matmul_tn(const Mat& A, const Mat& B, Mat& C) {
    assert(A.rows == B.rows);
    C = Mat(A.cols, B.cols);
    const int n = A.cols, k = A.rows, m = B.cols;
#pragma omp parallel for schedule(static) if (n * m >= kParallelThreshold)
    for (int i = 0; i < n; ++i) {
        double* ci = C.row_ptr(i);
        for (int p = 0; p < k; ++p) {
            const double aip = A.at(p, i);
            const double* bp = B.row_ptr(p);
            for (int j = 0; j < m; ++j) ci[j] += aip * bp[j];
        }
    }
}

Mat matmul(const Mat& A, const Mat& B) {
    Mat C;
    matmul(A, B, C);
    return C;
}
Mat matmul_nt(const Mat& A, const Mat& B) {
    Mat C;
    matmul_nt(A, B, C);
    return C;
}
Mat matmul_tn(const Mat& A, const Mat& B) {
    Mat C;
    matmul_tn(A, B, C);
    return C;
}

namespace serial {

void matmul(const Mat& A, const Mat& B, Mat& C) {
    assert(A.cols == B.rows);
    C = Mat(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i)
        for (int p = 0; p < A.cols; ++p) {
            const double aip = A.at(i, p);
            for (int j = 0; j < B.cols; ++j) C.at(i, j) += aip * B.at(p, j);
        }
}

void matmul_nt(const Mat& A, const Mat& B, Mat& C) {
    assert(A.cols == B.cols);
    C = Mat(A.rows, B.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < B.rows; ++j) {
            double s = 0.0;
            for (int p = 0; p < A.cols; ++p) s += A.at(i, p) * B.at(j, p);
            C.at(i, j) = s;
        }
}

void matmul_tn(const Mat& A, const Mat& B, Mat& C) {
    assert(A.rows == B.rows);
    C = Mat(A.cols, B.cols);
    for (int i = 0; i < A.cols; ++i)
        for (int p = 0; p < A.rows; ++p) {
            const double aip = A.at(p, i);
            for (int j = 0; j < B.cols; ++j) C.at(i, j) += aip * B.at(p, j);
        }
}

}  // namespace serial

}  // namespace tscir::kernels
