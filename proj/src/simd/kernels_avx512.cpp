// Compiled with -mavx512f -mavx2 -mfma; only reached after a runtime CPU check.
#include "pathpt/simd/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

#include <algorithm>

namespace pathpt::simd {
namespace {

constexpr std::size_t kBlockK = 256;

inline __mmask8 tail_mask(std::size_t count) {
    return static_cast<__mmask8>((1u << count) - 1u);
}

double dot_avx512(const double* a, const double* b, std::size_t n) {
    __m512d s0 = _mm512_setzero_pd();
    __m512d s1 = _mm512_setzero_pd();
    std::size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        s0 = _mm512_fmadd_pd(_mm512_loadu_pd(a + i), _mm512_loadu_pd(b + i), s0);
        s1 = _mm512_fmadd_pd(_mm512_loadu_pd(a + i + 8), _mm512_loadu_pd(b + i + 8), s1);
    }
    for (; i + 8 <= n; i += 8) {
        s0 = _mm512_fmadd_pd(_mm512_loadu_pd(a + i), _mm512_loadu_pd(b + i), s0);
    }
    if (i < n) {
        const __mmask8 mask = tail_mask(n - i);
        s1 = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(mask, a + i), _mm512_maskz_loadu_pd(mask, b + i), s1);
    }
    return _mm512_reduce_add_pd(_mm512_add_pd(s0, s1));
}

void axpy_avx512(double alpha, const double* x, double* y, std::size_t n) {
    const __m512d va = _mm512_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm512_storeu_pd(y + i, _mm512_fmadd_pd(va, _mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i)));
    }
    if (i < n) {
        const __mmask8 mask = tail_mask(n - i);
        const __m512d r = _mm512_fmadd_pd(va, _mm512_maskz_loadu_pd(mask, x + i), _mm512_maskz_loadu_pd(mask, y + i));
        _mm512_mask_storeu_pd(y + i, mask, r);
    }
}

// 4 rows x 32 columns: 16 accumulators.
inline void block_4x32(std::size_t kc, const double* a, std::size_t lda,
                       const double* b, std::size_t ldb, double* c, std::size_t ldc) {
    __m512d acc[4][4];
    for (int r = 0; r < 4; ++r)
        for (int v = 0; v < 4; ++v) acc[r][v] = _mm512_loadu_pd(c + r * ldc + 8 * v);
    for (std::size_t p = 0; p < kc; ++p) {
        const double* brow = b + p * ldb;
        const __m512d b0 = _mm512_loadu_pd(brow);
        const __m512d b1 = _mm512_loadu_pd(brow + 8);
        const __m512d b2 = _mm512_loadu_pd(brow + 16);
        const __m512d b3 = _mm512_loadu_pd(brow + 24);
        for (int r = 0; r < 4; ++r) {
            const __m512d av = _mm512_set1_pd(a[r * lda + p]);
            acc[r][0] = _mm512_fmadd_pd(av, b0, acc[r][0]);
            acc[r][1] = _mm512_fmadd_pd(av, b1, acc[r][1]);
            acc[r][2] = _mm512_fmadd_pd(av, b2, acc[r][2]);
            acc[r][3] = _mm512_fmadd_pd(av, b3, acc[r][3]);
        }
    }
    for (int r = 0; r < 4; ++r)
        for (int v = 0; v < 4; ++v) _mm512_storeu_pd(c + r * ldc + 8 * v, acc[r][v]);
}

// 4 rows x up to 8 columns (masked when fewer).
inline void block_4x8(std::size_t kc, const double* a, std::size_t lda,
                      const double* b, std::size_t ldb, double* c, std::size_t ldc, __mmask8 mask) {
    __m512d c0 = _mm512_maskz_loadu_pd(mask, c);
    __m512d c1 = _mm512_maskz_loadu_pd(mask, c + ldc);
    __m512d c2 = _mm512_maskz_loadu_pd(mask, c + 2 * ldc);
    __m512d c3 = _mm512_maskz_loadu_pd(mask, c + 3 * ldc);
    for (std::size_t p = 0; p < kc; ++p) {
        const __m512d bv = _mm512_maskz_loadu_pd(mask, b + p * ldb);
        c0 = _mm512_fmadd_pd(_mm512_set1_pd(a[p]), bv, c0);
        c1 = _mm512_fmadd_pd(_mm512_set1_pd(a[lda + p]), bv, c1);
        c2 = _mm512_fmadd_pd(_mm512_set1_pd(a[2 * lda + p]), bv, c2);
        c3 = _mm512_fmadd_pd(_mm512_set1_pd(a[3 * lda + p]), bv, c3);
    }
    _mm512_mask_storeu_pd(c, mask, c0);
    _mm512_mask_storeu_pd(c + ldc, mask, c1);
    _mm512_mask_storeu_pd(c + 2 * ldc, mask, c2);
    _mm512_mask_storeu_pd(c + 3 * ldc, mask, c3);
}

inline void block_1x8(std::size_t kc, const double* a, const double* b, std::size_t ldb,
                      double* c, __mmask8 mask) {
    __m512d acc = _mm512_maskz_loadu_pd(mask, c);
    for (std::size_t p = 0; p < kc; ++p) {
        acc = _mm512_fmadd_pd(_mm512_set1_pd(a[p]), _mm512_maskz_loadu_pd(mask, b + p * ldb), acc);
    }
    _mm512_mask_storeu_pd(c, mask, acc);
}

void gemm_nn_avx512(std::size_t m, std::size_t n, std::size_t k,
                    const double* a, std::size_t lda,
                    const double* b, std::size_t ldb,
                    double* c, std::size_t ldc) {
    // Column panels outermost so each B panel stays in cache across row blocks.
    for (std::size_t kb = 0; kb < k; kb += kBlockK) {
        const std::size_t kc = std::min(kBlockK, k - kb);
        const double* ab = a + kb;
        const double* bb = b + kb * ldb;
        std::size_t j = 0;
        for (; j + 32 <= n; j += 32) {
            std::size_t i = 0;
            for (; i + 4 <= m; i += 4) block_4x32(kc, ab + i * lda, lda, bb + j, ldb, c + i * ldc + j, ldc);
            for (; i < m; ++i)
                for (std::size_t jj = j; jj < j + 32; jj += 8)
                    block_1x8(kc, ab + i * lda, bb + jj, ldb, c + i * ldc + jj, tail_mask(8));
        }
        for (; j < n; j += 8) {
            const __mmask8 mask = tail_mask(std::min<std::size_t>(8, n - j));
            std::size_t i = 0;
            for (; i + 4 <= m; i += 4) block_4x8(kc, ab + i * lda, lda, bb + j, ldb, c + i * ldc + j, ldc, mask);
            for (; i < m; ++i) block_1x8(kc, ab + i * lda, bb + j, ldb, c + i * ldc + j, mask);
        }
    }
}

}  // namespace

const KernelTable* avx512_kernels() {
    static const KernelTable table{"avx512", dot_avx512, axpy_avx512, gemm_nn_avx512};
    static const bool supported = __builtin_cpu_supports("avx512f") && __builtin_cpu_supports("fma");
    return supported ? &table : nullptr;
}

}  // namespace pathpt::simd

#else

namespace pathpt::simd {
const KernelTable* avx512_kernels() { return nullptr; }
}  // namespace pathpt::simd

#endif
