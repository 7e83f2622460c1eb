#include "pathpt/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "pathpt/error.hpp"

namespace pathpt::metrics {
namespace {

void check_pairs(std::span<const int> preds, std::span<const int> labels, std::size_t num_subtypes) {
    if (preds.empty()) throw InvalidInput("metric: empty input");
    if (preds.size() != labels.size()) throw InvalidInput("metric: predictions and labels differ in length");
    for (int l : labels)
        if (l < 1 || static_cast<std::size_t>(l) > num_subtypes)
            throw InvalidInput("metric: label " + std::to_string(l) + " outside 1.." + std::to_string(num_subtypes));
}

}  // namespace

std::vector<double> per_class_recall(std::span<const int> preds, std::span<const int> labels,
                                     std::size_t num_subtypes) {
    check_pairs(preds, labels, num_subtypes);
    std::vector<std::size_t> tp(num_subtypes + 1, 0), total(num_subtypes + 1, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        ++total[labels[i]];
        tp[labels[i]] += preds[i] == labels[i];
    }
    std::vector<double> out(num_subtypes, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t c = 1; c <= num_subtypes; ++c)
        if (total[c] > 0) out[c - 1] = double(tp[c]) / double(total[c]);
    return out;
}

double balanced_accuracy(std::span<const int> preds, std::span<const int> labels, std::size_t num_subtypes) {
    const auto recalls = per_class_recall(preds, labels, num_subtypes);
    double sum = 0.0;
    std::size_t present = 0;
    for (double r : recalls) {
        if (std::isnan(r)) continue;
        sum += r;
        ++present;
    }
    return sum / double(present);
}

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const int> preds, std::span<const int> labels,
                                                       std::size_t num_subtypes) {
    check_pairs(preds, labels, num_subtypes);
    std::vector<std::vector<std::size_t>> out(num_subtypes, std::vector<std::size_t>(num_subtypes, 0));
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (preds[i] >= 1 && static_cast<std::size_t>(preds[i]) <= num_subtypes) ++out[labels[i] - 1][preds[i] - 1];
    return out;
}

double tile_auc(std::span<const double> scores, std::span<const std::uint8_t> mask) {
    if (scores.size() != mask.size()) throw InvalidInput("tile_auc: scores and mask differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of midranks (1-based) over positives.
    double rank_sum = 0.0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * double(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (mask[order[k]] != 0) {
                rank_sum += midrank;
                ++positives;
            }
        }
        i = j;
    }
    const std::size_t negatives = n - positives;
    if (positives == 0 || negatives == 0) throw UndefinedMetric("tile_auc: mask must contain both classes");
    const double u = rank_sum - double(positives) * double(positives + 1) / 2.0;
    return u / (double(positives) * double(negatives));
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](std::uint8_t c) { return c != 0; }));
}

double dice(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.height != gt.height || pred.width != gt.width || pred.cells.size() != gt.cells.size())
        throw InvalidInput("dice: mask shapes differ");
    std::size_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < pred.cells.size(); ++i) {
        const bool x = pred.cells[i] != 0;
        const bool y = gt.cells[i] != 0;
        inter += x && y;
        a += x;
        b += y;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * double(inter) / double(a + b);
}

BinaryMask subtype_mask(std::span<const int> tile_labels, int target, const corpus::SlideRecord& slide) {
    if (tile_labels.size() != slide.tiles.size()) throw InvalidInput("subtype_mask: label count differs from tile count");
    BinaryMask mask(slide.grid_h, slide.grid_w);
    for (std::size_t i = 0; i < slide.tiles.size(); ++i)
        if (tile_labels[i] == target) mask.at(slide.tiles[i].row, slide.tiles[i].col) = 1;
    return mask;
}

BinaryMask ground_truth_mask(const corpus::SlideRecord& slide, int target) {
    BinaryMask mask(slide.grid_h, slide.grid_w);
    for (const auto& t : slide.tiles)
        if (t.gt_label && *t.gt_label == target) mask.at(t.row, t.col) = 1;
    return mask;
}

BinaryMask occupancy_mask(const corpus::SlideRecord& slide) {
    BinaryMask mask(slide.grid_h, slide.grid_w);
    for (const auto& t : slide.tiles) mask.at(t.row, t.col) = 1;
    return mask;
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidInput("paired_ttest: samples differ in length");
    const std::size_t n = a.size();
    if (n < 2) throw InvalidInput("paired_ttest: need at least two pairs");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= double(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    TTestResult r;
    r.dof = n - 1;
    const double sd = std::sqrt(ss / double(n - 1));
    if (sd == 0.0) {
        if (mean == 0.0) return r;  // t = 0, p = 1
        r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.p = 0.0;
        r.degenerate = true;
        return r;
    }
    r.t = mean / (sd / std::sqrt(double(n)));
    const boost::math::students_t dist(static_cast<double>(r.dof));
    r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
    return r;
}

Quartiles quartiles(std::vector<double> values) {
    if (values.empty()) throw InvalidInput("quartiles: empty input");
    std::sort(values.begin(), values.end());
    const auto q = [&](double p) {
        const double h = p * double(values.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi = std::min(lo + 1, values.size() - 1);
        return values[lo] + (h - double(lo)) * (values[hi] - values[lo]);
    };
    return {q(0.25), q(0.5), q(0.75)};
}

}  // namespace pathpt::metrics
