#pragma once

#include "tscir/mat.hpp"

namespace tscir::kernels {

// Parallel kernels. Parallelism is over output rows only and each row is
// computed with a serial inner loop, so results are bit-identical to the
// serial reference regardless of thread count.

// C = A * B
void matmul(const Mat& A, const Mat& B, Mat& C);
// C = A * B^T
void matmul_nt(const Mat& A, const Mat& B, Mat& C);
// C = A^T * B
void matmul_tn(const Mat& A, const Mat& B, Mat& C);

Mat matmul(const Mat& A, const Mat& B);
Mat matmul_nt(const Mat& A, const Mat& B);
Mat matmul_tn(const Mat& A, const Mat& B);

namespace serial {
// Straight-line reference implementations kept for testing and benchmarking.
void matmul(const Mat& A, const Mat& B, Mat& C);
void matmul_nt(const Mat& A, const Mat& B, Mat& C);
void matmul_tn(const Mat& A, const Mat& B, Mat& C);
}  // namespace serial

}  // namespace tscir::kernels
