#include "pathpt/training/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "pathpt/error.hpp"
#include "pathpt/model/readout.hpp"

namespace pathpt::training {
namespace {

constexpr double kProbabilityFloor = 1e-12;

// Per-row weight 1/count(class), normalized to sum to one; zero for unlabeled rows.
std::vector<double> balanced_weights(std::span<const int> labels, std::size_t num_classes) {
    std::map<int, std::size_t> counts;
    for (int y : labels) {
        if (y < 0) continue;
        if (static_cast<std::size_t>(y) >= num_classes) throw InvalidInput("balanced_ce: label out of range");
        ++counts[y];
    }
    std::vector<double> w(labels.size(), 0.0);
    double total = 0.0;
    for (std::size_t m = 0; m < labels.size(); ++m) {
        if (labels[m] < 0) continue;
        w[m] = 1.0 / double(counts[labels[m]]);
        total += w[m];
    }
    for (double& v : w) v /= total;
    return w;
}

void check_rows(std::span<const std::size_t> rows, std::size_t n, int slide_label, std::size_t num_classes) {
    if (slide_label < 1 || static_cast<std::size_t>(slide_label) >= num_classes)
        throw InvalidInput("candidate_loss: slide label out of range");
    for (std::size_t r : rows)
        if (r >= n) throw InvalidInput("candidate_loss: row out of range");
}

bool any_labeled(std::span<const int> labels) {
    return std::any_of(labels.begin(), labels.end(), [](int y) { return y >= 0; });
}

}  // namespace

LossValue balanced_ce(const Matrix& probabilities, std::span<const int> labels) {
    if (labels.size() != probabilities.rows()) throw InvalidInput("balanced_ce: label count differs from rows");
    if (!any_labeled(labels)) return {0.0, true};
    const auto w = balanced_weights(labels, probabilities.cols());
    double loss = 0.0;
    for (std::size_t m = 0; m < labels.size(); ++m)
        if (labels[m] >= 0) loss -= w[m] * std::log(probabilities(m, std::size_t(labels[m])));
    return {loss, false};
}

LossValue candidate_loss(const Matrix& probabilities, int slide_label, std::span<const std::size_t> rows) {
    check_rows(rows, probabilities.rows(), slide_label, probabilities.cols());
    if (rows.empty()) return {0.0, true};
    double loss = 0.0;
    for (std::size_t r : rows)
        loss -= std::log(std::max(probabilities(r, 0) + probabilities(r, std::size_t(slide_label)), kProbabilityFloor));
    return {loss / double(rows.size()), false};
}

ag::Var balanced_ce_from_logits(ag::Tape& t, ag::Var logits, std::span<const int> labels) {
    const Matrix& z = t.value(logits);
    if (labels.size() != z.rows()) throw InvalidInput("balanced_ce: label count differs from rows");
    if (!any_labeled(labels)) return t.constant(Matrix(1, 1));
    const auto w = balanced_weights(labels, z.cols());
    Matrix p = model::softmax_scaled(z, 1.0);
    const LossValue v = balanced_ce(p, labels);
    std::vector<int> y(labels.begin(), labels.end());
    // d/dz_mj = w_m (p_mj - [j == y_m])
    return t.record(Matrix(1, 1, v.value), {logits},
                    [logits, w, y = std::move(y), p = std::move(p)](ag::Tape& tp, const Matrix& g) {
        Matrix& gz = tp.grad_of(logits);
        const double s = g(0, 0);
        for (std::size_t m = 0; m < y.size(); ++m) {
            if (y[m] < 0) continue;
            for (std::size_t j = 0; j < p.cols(); ++j) gz(m, j) += s * w[m] * p(m, j);
            gz(m, std::size_t(y[m])) -= s * w[m];
        }
    });
}

ag::Var candidate_loss_from_logits(ag::Tape& t, ag::Var logits, int slide_label, std::span<const std::size_t> rows) {
    const Matrix& z = t.value(logits);
    check_rows(rows, z.rows(), slide_label, z.cols());
    if (rows.empty()) return t.constant(Matrix(1, 1));
    Matrix p = model::softmax_scaled(z, 1.0);
    const LossValue v = candidate_loss(p, slide_label, rows);
    std::vector<std::size_t> owned(rows.begin(), rows.end());
    const auto i = std::size_t(slide_label);
    // With q = p0 + pi: d/dz_j = p_j - [j in {0, i}] p_j / q, averaged over rows.
    // The clamp is treated as inactive for the gradient.
    return t.record(Matrix(1, 1, v.value), {logits},
                    [logits, i, owned = std::move(owned), p = std::move(p)](ag::Tape& tp, const Matrix& g) {
        Matrix& gz = tp.grad_of(logits);
        const double s = g(0, 0) / double(owned.size());
        for (std::size_t r : owned) {
            const double q = std::max(p(r, 0) + p(r, i), kProbabilityFloor);
            for (std::size_t j = 0; j < p.cols(); ++j) gz(r, j) += s * p(r, j);
            gz(r, 0) -= s * p(r, 0) / q;
            gz(r, i) -= s * p(r, i) / q;
        }
    });
}

}  // namespace pathpt::training
