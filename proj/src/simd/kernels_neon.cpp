#include "pathpt/simd/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

#include <algorithm>

namespace pathpt::simd {
namespace {

double dot_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t s0 = vdupq_n_f64(0.0);
    float64x2_t s1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 = vfmaq_f64(s0, vld1q_f64(a + i), vld1q_f64(b + i));
        s1 = vfmaq_f64(s1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
    }
    double sum = vaddvq_f64(vaddq_f64(s0, s1));
    for (; i < n; ++i) sum += a[i] * b[i];
    return sum;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn_neon(std::size_t m, std::size_t n, std::size_t k,
                  const double* a, std::size_t lda,
                  const double* b, std::size_t ldb,
                  double* c, std::size_t ldc) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * ldc;
        for (std::size_t p = 0; p < k; ++p) {
            const float64x2_t av = vdupq_n_f64(a[i * lda + p]);
            const double* brow = b + p * ldb;
            std::size_t j = 0;
            for (; j + 2 <= n; j += 2) vst1q_f64(crow + j, vfmaq_f64(vld1q_f64(crow + j), av, vld1q_f64(brow + j)));
            for (; j < n; ++j) crow[j] += a[i * lda + p] * brow[j];
        }
    }
}

}  // namespace

const KernelTable* neon_kernels() {
    static const KernelTable table{"neon", dot_neon, axpy_neon, gemm_nn_neon};
    return &table;
}

}  // namespace pathpt::simd

#else

namespace pathpt::simd {
const KernelTable* neon_kernels() { return nullptr; }
}  // namespace pathpt::simd

#endif
