#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pathpt/corpus/label_space.hpp"
#include "pathpt/corpus/slide.hpp"
#include "pathpt/corpus/text_encoder.hpp"
#include "pathpt/harness/config.hpp"
#include "pathpt/metrics/report.hpp"
#include "pathpt/zeroshot/templates.hpp"

namespace pathpt::harness {

// Everything a run reads. Built once per experiment and shared read-only.
struct Workspace {
    corpus::LabelSpace labels;
    corpus::FrozenTextEncoder encoder;
    std::vector<corpus::SlideRecord> slides;
    std::vector<zeroshot::PromptTemplate> templates;
    std::string base_quality;
};

Workspace load_workspace(const ExperimentConfig& cfg);

struct RunRecord {
    Method method = Method::zeroshot;
    std::size_t k = 0;  // 0 for zero-shot
    std::size_t repeat = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    metrics::EvalReport report;
    std::string report_path;  // relative to the bundle
};

struct ExperimentResult {
    std::filesystem::path bundle;
    std::vector<RunRecord> runs;  // methods in config order, then k, then repeat
    std::size_t failed = 0;
    std::size_t label_violations = 0;
    bool all_ok() const { return failed == 0; }
};

// Bundle layout under cfg.output_dir:
//   runs.csv          one row per scheduled run
//   summary.csv       median / Q1 / Q3 per (method, base_quality, k)
//   summary.md        the same as "median (Q1, Q3)" tables
//   ttests.csv        paired tests of pathpt against its ablations
//   run_summary.json  counts of runs, failures and pseudo-label violations
//   runs/*.json       per-run EvalReports
//   traces/*.csv      per-run loss traces
//   zeroshot/*.json   selected prompt groups and pooled class embeddings
// A failing run is recorded with status "failed" and the rest continue.
ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t workers = worker_count_from_env());
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Workspace& ws, std::size_t workers);

inline constexpr const char* kRunsCsv = "runs.csv";
inline constexpr const char* kSummaryCsv = "summary.csv";

}  // namespace pathpt::harness
