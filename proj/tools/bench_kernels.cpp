// Compares the OpenMP matmul kernels against the serial reference
// implementations and checks that results agree bit-exactly.
#include <chrono>
#include <cstdio>

#include "tscir/kernels.hpp"
#include "tscir/rng.hpp"

using namespace tscir;

namespace {

Mat random_mat(int r, int c, Rng& rng) {
    Mat m(r, c);
    for (auto& x : m.a) x = rng.normal();
    return m;
}

template <typename F>
double time_best_of(int reps, F&& f) {
    double best = 1e300;
    for (int i = 0; i < reps; ++i) {
        auto t0 = std::chrono::steady_clock::now();
        f();
        auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

}  // namespace

int main() {
    Rng rng(42);
    std::printf("%8s %8s %8s | %10s %10s %8s %s\n", "n", "k", "m", "serial ms", "omp ms",
                "speedup", "bitexact");
    for (int n : {64, 128, 256, 512}) {
        int k = n, m = n;
        Mat a = random_mat(n, k, rng), b = random_mat(k, m, rng);
        Mat serial_out(n, m), omp_out;
        double ts = time_best_of(3, [&] { kernels::serial::matmul(a, b, serial_out); });
        double to = time_best_of(3, [&] { omp_out = kernels::matmul(a, b); });
        bool exact = max_abs_diff(serial_out, omp_out) == 0.0;
        std::printf("%8d %8d %8d | %10.3f %10.3f %8.2f %s\n", n, k, m, ts, to, ts / to,
                    exact ? "yes" : "NO");
        if (!exact) return 1;
    }
    return 0;
}
