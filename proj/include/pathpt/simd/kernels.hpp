#pragma once

// Data-parallel inner loops used by the model, the zero-shot readout and the
// metric code. Every kernel has a portable scalar reference; vectorized
// variants are compiled per ISA and one table is selected at runtime.
//
// Selection honors PATHPT_SIMD=scalar|avx2|avx512|neon|auto (default auto).

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace pathpt::simd {

struct KernelTable {
    const char* name;

    // sum_i a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);

    // y[i] += alpha * x[i]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

    // C(m x n) += A(m x k) * B(k x n), all row-major with leading dimensions.
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k,
                    const double* a, std::size_t lda,
                    const double* b, std::size_t ldb,
                    double* c, std::size_t ldc);
};

const KernelTable& scalar_kernels();

// nullptr when the variant was not compiled in or the CPU lacks the ISA.
const KernelTable* avx2_kernels();
const KernelTable* avx512_kernels();
const KernelTable* neon_kernels();

// All tables usable on this machine, scalar first.
std::vector<const KernelTable*> available_kernels();

// The active table. Resolved once on first use.
const KernelTable& kernels();

// Overrides the active table (tests and benchmarks). Returns the previous one.
const KernelTable& set_kernels(const KernelTable& table);

// Looks a table up by name among the available ones; nullptr if unknown.
const KernelTable* find_kernels(std::string_view name);

// Convenience wrappers over the active table.
inline double dot(std::span<const double> a, std::span<const double> b) {
    return kernels().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    kernels().axpy(alpha, x.data(), y.data(), x.size());
}

enum class Trans { no, yes };

// C(m x n) += op(A) * op(B) where op(A) is m x k and op(B) is k x n.
// Transposed operands are repacked and routed through gemm_nn.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double* c, std::size_t ldc);

}  // namespace pathpt::simd
