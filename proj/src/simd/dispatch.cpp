#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "pathpt/simd/kernels.hpp"

namespace pathpt::simd {
namespace {

const KernelTable& resolve() {
    const char* env = std::getenv("PATHPT_SIMD");
    if (env != nullptr && std::string_view(env) != "auto" && *env != '\0') {
        if (const KernelTable* table = find_kernels(env)) return *table;
        throw std::runtime_error(std::string("PATHPT_SIMD: kernel set not available: ") + env);
    }
    if (const KernelTable* t = avx512_kernels()) return *t;
    if (const KernelTable* t = avx2_kernels()) return *t;
    if (const KernelTable* t = neon_kernels()) return *t;
    return scalar_kernels();
}

std::atomic<const KernelTable*>& active() {
    static std::atomic<const KernelTable*> table{&resolve()};
    return table;
}

// Repack buffers for transposed operands; one per thread.
thread_local std::vector<double> pack_a;
thread_local std::vector<double> pack_b;

void transpose_into(std::vector<double>& out, const double* src, std::size_t rows,
                    std::size_t cols, std::size_t ld) {
    out.resize(rows * cols);
    constexpr std::size_t kTile = 32;
    for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
        const std::size_t r1 = std::min(rows, r0 + kTile);
        for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
            const std::size_t c1 = std::min(cols, c0 + kTile);
            for (std::size_t r = r0; r < r1; ++r)
                for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = src[r * ld + c];
        }
    }
}

}  // namespace

std::vector<const KernelTable*> available_kernels() {
    std::vector<const KernelTable*> out{&scalar_kernels()};
    for (const KernelTable* t : {avx2_kernels(), avx512_kernels(), neon_kernels()})
        if (t != nullptr) out.push_back(t);
    return out;
}

const KernelTable* find_kernels(std::string_view name) {
    for (const KernelTable* t : available_kernels())
        if (name == t->name) return t;
    return nullptr;
}

const KernelTable& kernels() { return *active().load(std::memory_order_relaxed); }

const KernelTable& set_kernels(const KernelTable& table) {
    return *active().exchange(&table);
}

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double* c, std::size_t ldc) {
    if (m == 0 || n == 0 || k == 0) return;
    if (ta == Trans::yes) {
        // a is stored k x m
        transpose_into(pack_a, a, k, m, lda);
        a = pack_a.data();
        lda = k;
    }
    if (tb == Trans::yes) {
        // b is stored n x k
        transpose_into(pack_b, b, n, k, ldb);
        b = pack_b.data();
        ldb = n;
    }
    kernels().gemm_nn(m, n, k, a, lda, b, ldb, c, ldc);
}

}  // namespace pathpt::simd
