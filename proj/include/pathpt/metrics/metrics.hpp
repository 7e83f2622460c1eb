#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pathpt/corpus/slide.hpp"

namespace pathpt::metrics {

// Mean over subtypes present in `labels` of TP_i / (TP_i + FN_i).
// labels must lie in 1..num_subtypes. Throws InvalidInput on empty input.
double balanced_accuracy(std::span<const int> preds, std::span<const int> labels, std::size_t num_subtypes);

// Recall per subtype 1..C; NaN for subtypes absent from labels.
std::vector<double> per_class_recall(std::span<const int> preds, std::span<const int> labels,
                                     std::size_t num_subtypes);

// C x C counts, row = true subtype - 1, column = predicted subtype - 1.
// Predictions outside 1..C are dropped from the matrix.
std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const int> preds, std::span<const int> labels,
                                                       std::size_t num_subtypes);

// Mann-Whitney AUC with midranks for ties. mask[i] != 0 marks positives.
// Throws UndefinedMetric unless both classes are present.
double tile_auc(std::span<const double> scores, std::span<const std::uint8_t> mask);

struct BinaryMask {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<std::uint8_t> cells;  // row-major, 0 or 1

    BinaryMask() = default;
    BinaryMask(std::uint32_t h, std::uint32_t w) : height(h), width(w), cells(std::size_t(h) * w, 0) {}

    std::uint8_t& at(std::uint32_t r, std::uint32_t c) { return cells[std::size_t(r) * width + c]; }
    std::uint8_t at(std::uint32_t r, std::uint32_t c) const { return cells[std::size_t(r) * width + c]; }
    std::size_t count() const;

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// 2|X & Y| / (|X| + |Y|); two empty masks score 1.0. Throws InvalidInput on shape mismatch.
double dice(const BinaryMask& pred, const BinaryMask& gt);

// Cells whose tile label equals `target`; empty cells are false.
BinaryMask subtype_mask(std::span<const int> tile_labels, int target, const corpus::SlideRecord& slide);

// Cells whose ground-truth label equals `target` (tiles without gt are false).
BinaryMask ground_truth_mask(const corpus::SlideRecord& slide, int target);

BinaryMask occupancy_mask(const corpus::SlideRecord& slide);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    std::size_t dof = 0;
    bool degenerate = false;  // zero-variance differences with nonzero mean
};

// Paired two-sided Student t-test on a - b. Throws InvalidInput for n < 2 or
// unequal lengths.
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

struct Quartiles {
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
};

// Linear-interpolation quantiles (the R-7 / numpy default). Throws InvalidInput on empty input.
Quartiles quartiles(std::vector<double> values);

}  // namespace pathpt::metrics
