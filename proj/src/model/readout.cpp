#include "pathpt/model/readout.hpp"

#include <algorithm>
#include <cmath>

#include "pathpt/error.hpp"
#include "pathpt/simd/kernels.hpp"

namespace pathpt::model {

Matrix normalize_rows(Matrix m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        const double n = std::sqrt(simd::dot(row, row));
        if (!(n > 0.0) || !std::isfinite(n)) throw InvalidInput("zero-norm or non-finite feature row " + std::to_string(r));
        for (double& v : row) v /= n;
    }
    return m;
}

// Unit rows against class rows through the same gemm the model uses, so
// labels agree bit-for-bit across the zero-shot and trained paths.
Matrix cosine_scores(const Matrix& features, const Matrix& class_rows) {
    if (features.cols() != class_rows.cols()) throw InvalidInput("cosine_scores: dimension mismatch");
    const Matrix normed = normalize_rows(features);
    Matrix out(features.rows(), class_rows.rows());
    simd::gemm(simd::Trans::no, simd::Trans::yes, normed.rows(), class_rows.rows(), normed.cols(), normed.data(),
               normed.cols(), class_rows.data(), class_rows.cols(), out.data(), out.cols());
    return out;
}

Matrix softmax_scaled(const Matrix& scores, double tau) {
    if (!(tau > 0.0)) throw InvalidInput("temperature must be positive");
    Matrix out = scores;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (double& v : row) {
            v = std::exp((v - mx) / tau);
            sum += v;
        }
        for (double& v : row) v /= sum;
    }
    return out;
}

Matrix tile_probabilities(const Matrix& features, const Matrix& class_rows, double tau) {
    if (!(tau > 0.0)) throw InvalidInput("temperature must be positive");
    return softmax_scaled(cosine_scores(features, class_rows), tau);
}

std::vector<int> argmax_rows(const Matrix& m) {
    std::vector<int> out(m.rows(), 0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        std::size_t best = 0;
        for (std::size_t c = 1; c < row.size(); ++c)
            if (row[c] > row[best]) best = c;
        out[r] = static_cast<int>(best);
    }
    return out;
}

}  // namespace pathpt::model
