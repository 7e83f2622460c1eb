#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace pathpt::metrics {

struct EvalReport {
    std::string method;
    std::string variant;
    std::string base_quality;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::size_t repeat = 0;

    double bacc = 0.0;
    std::optional<double> auc;   // mean per-slide tile AUC; null when undefined
    std::optional<double> dice;  // mean per-slide DICE; null for slide-level methods
    std::vector<double> per_class_recall;                 // subtypes 1..C, NaN when absent
    std::vector<std::vector<std::size_t>> confusion;      // row = truth, column = prediction
    std::size_t num_test_slides = 0;
    std::size_t auc_slides = 0;           // slides with both tumor and non-tumor tiles
    std::size_t label_violations = 0;
    std::string trace;                    // trace CSV, relative to the bundle
    std::string notes;
};

// Fills bacc, recalls and the confusion matrix from slide predictions.
void fill_slide_metrics(EvalReport& report, std::span<const int> preds, std::span<const int> labels,
                        std::size_t num_subtypes);

nlohmann::json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

}  // namespace pathpt::metrics
