#include "pathpt/metrics/report.hpp"

#include <cmath>

#include "pathpt/metrics/metrics.hpp"

namespace pathpt::metrics {
namespace {

nlohmann::json optional_number(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> read_optional(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

}  // namespace

void fill_slide_metrics(EvalReport& report, std::span<const int> preds, std::span<const int> labels,
                        std::size_t num_subtypes) {
    report.bacc = balanced_accuracy(preds, labels, num_subtypes);
    report.per_class_recall = per_class_recall(preds, labels, num_subtypes);
    report.confusion = confusion_matrix(preds, labels, num_subtypes);
    report.num_test_slides = labels.size();
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json recalls = nlohmann::json::array();
    for (double v : r.per_class_recall) recalls.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
    return {{"method", r.method},
            {"variant", r.variant},
            {"base_quality", r.base_quality},
            {"k", r.k},
            {"seed", r.seed},
            {"repeat", r.repeat},
            {"bacc", r.bacc},
            {"auc", optional_number(r.auc)},
            {"dice", optional_number(r.dice)},
            {"per_class_recall", recalls},
            {"confusion", r.confusion},
            {"num_test_slides", r.num_test_slides},
            {"auc_slides", r.auc_slides},
            {"label_violations", r.label_violations},
            {"trace", r.trace},
            {"notes", r.notes}};
}

EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.method = j.at("method").get<std::string>();
    r.variant = j.at("variant").get<std::string>();
    r.base_quality = j.at("base_quality").get<std::string>();
    r.k = j.at("k").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.repeat = j.at("repeat").get<std::size_t>();
    r.bacc = j.at("bacc").get<double>();
    r.auc = read_optional(j, "auc");
    r.dice = read_optional(j, "dice");
    for (const auto& v : j.at("per_class_recall"))
        r.per_class_recall.push_back(v.is_null() ? std::nan("") : v.get<double>());
    r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
    r.num_test_slides = j.at("num_test_slides").get<std::size_t>();
    r.auc_slides = j.at("auc_slides").get<std::size_t>();
    r.label_violations = j.at("label_violations").get<std::size_t>();
    r.trace = j.at("trace").get<std::string>();
    r.notes = j.at("notes").get<std::string>();
    return r;
}

}  // namespace pathpt::metrics
