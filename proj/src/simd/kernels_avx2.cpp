// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "pathpt/simd/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

#include <algorithm>
#include <cmath>

namespace pathpt::simd {
namespace {

constexpr std::size_t kBlockK = 256;

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d s0 = _mm256_setzero_pd();
    __m256d s1 = _mm256_setzero_pd();
    __m256d s2 = _mm256_setzero_pd();
    __m256d s3 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
        s2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), s2);
        s3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), s3);
    }
    for (; i + 4 <= n; i += 4) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    }
    double sum = hsum(_mm256_add_pd(_mm256_add_pd(s0, s1), _mm256_add_pd(s2, s3)));
    for (; i < n; ++i) sum += a[i] * b[i];
    return sum;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

// 4 rows x 8 columns register block.
inline void block_4x8(std::size_t kc, const double* a, std::size_t lda,
                      const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    __m256d c00 = _mm256_loadu_pd(c), c01 = _mm256_loadu_pd(c + 4);
    __m256d c10 = _mm256_loadu_pd(c + ldc), c11 = _mm256_loadu_pd(c + ldc + 4);
    __m256d c20 = _mm256_loadu_pd(c + 2 * ldc), c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
    __m256d c30 = _mm256_loadu_pd(c + 3 * ldc), c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
    for (std::size_t p = 0; p < kc; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * ldb);
        const __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
        __m256d av = _mm256_broadcast_sd(a + p);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        av = _mm256_broadcast_sd(a + lda + p);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        av = _mm256_broadcast_sd(a + 2 * lda + p);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        av = _mm256_broadcast_sd(a + 3 * lda + p);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
    }
    _mm256_storeu_pd(c, c00);
    _mm256_storeu_pd(c + 4, c01);
    _mm256_storeu_pd(c + ldc, c10);
    _mm256_storeu_pd(c + ldc + 4, c11);
    _mm256_storeu_pd(c + 2 * ldc, c20);
    _mm256_storeu_pd(c + 2 * ldc + 4, c21);
    _mm256_storeu_pd(c + 3 * ldc, c30);
    _mm256_storeu_pd(c + 3 * ldc + 4, c31);
}

// One row against a 4-column strip.
inline void block_1x4(std::size_t kc, const double* a, const double* b, std::size_t ldb, double* c) {
    __m256d acc = _mm256_loadu_pd(c);
    for (std::size_t p = 0; p < kc; ++p) {
        acc = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p), _mm256_loadu_pd(b + p * ldb), acc);
    }
    _mm256_storeu_pd(c, acc);
}

inline void block_1x1(std::size_t kc, const double* a, const double* b, std::size_t ldb, double* c) {
    double acc = *c;
    for (std::size_t p = 0; p < kc; ++p) acc = std::fma(a[p], b[p * ldb], acc);
    *c = acc;
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k,
                  const double* a, std::size_t lda,
                  const double* b, std::size_t ldb,
                  double* c, std::size_t ldc) {
    // Column panels outermost so each B panel stays in cache across row blocks.
    for (std::size_t kb = 0; kb < k; kb += kBlockK) {
        const std::size_t kc = std::min(kBlockK, k - kb);
        const double* ab = a + kb;
        const double* bb = b + kb * ldb;
        std::size_t j = 0;
        for (; j + 8 <= n; j += 8) {
            std::size_t i = 0;
            for (; i + 4 <= m; i += 4) block_4x8(kc, ab + i * lda, lda, bb + j, ldb, c + i * ldc + j, ldc);
            for (; i < m; ++i) {
                block_1x4(kc, ab + i * lda, bb + j, ldb, c + i * ldc + j);
                block_1x4(kc, ab + i * lda, bb + j + 4, ldb, c + i * ldc + j + 4);
            }
        }
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t jj = j;
            for (; jj + 4 <= n; jj += 4) block_1x4(kc, ab + i * lda, bb + jj, ldb, c + i * ldc + jj);
            for (; jj < n; ++jj) block_1x1(kc, ab + i * lda, bb + jj, ldb, c + i * ldc + jj);
        }
    }
}

}  // namespace

const KernelTable* avx2_kernels() {
    static const KernelTable table{"avx2", dot_avx2, axpy_avx2, gemm_nn_avx2};
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported ? &table : nullptr;
}

}  // namespace pathpt::simd

#else

namespace pathpt::simd {
const KernelTable* avx2_kernels() { return nullptr; }
}  // namespace pathpt::simd

#endif
