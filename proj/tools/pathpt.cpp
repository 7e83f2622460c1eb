// pathpt command-line front end: gen-corpus, run, plot, inspect.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "json.hpp"
#include "pathpt/corpus/feature_store.hpp"
#include "pathpt/corpus/generator.hpp"
#include "pathpt/error.hpp"
#include "pathpt/format.hpp"
#include "pathpt/harness/config.hpp"
#include "pathpt/harness/experiment.hpp"
#include "pathpt/harness/plots.hpp"
#include "pathpt/model/checkpoint.hpp"
#include "pathpt/simd/kernels.hpp"
#include "pathpt/zeroshot/templates.hpp"

namespace fs = std::filesystem;
using namespace pathpt;

namespace {

constexpr int kExitRunFailed = 1;
constexpr int kExitUsage = 2;

struct GenArgs {
    std::string out;
    std::string quality = "medium";
    std::uint64_t seed = 7;
    std::optional<double> sigma_align, sigma_tile, tumor_fraction;
    std::optional<std::size_t> slides_per_class, feature_dim, num_subtypes, grid;
    std::string templates_out;
};

int cmd_gen_corpus(const GenArgs& a) {
    auto cfg = corpus::CorpusConfig::preset(corpus::parse_base_quality(a.quality), a.seed);
    if (a.sigma_align) cfg.sigma_align = *a.sigma_align;
    if (a.sigma_tile) cfg.sigma_tile = *a.sigma_tile;
    if (a.tumor_fraction) cfg.tumor_fraction = *a.tumor_fraction;
    if (a.slides_per_class) cfg.slides_per_class = *a.slides_per_class;
    if (a.feature_dim) cfg.feature_dim = *a.feature_dim;
    if (a.num_subtypes) cfg.num_subtypes = *a.num_subtypes;
    if (a.grid) cfg.grid_h = cfg.grid_w = static_cast<std::uint32_t>(*a.grid);
    cfg.validate();

    auto generated = corpus::generate_corpus(cfg);
    corpus::FeatureStore store{generated.labels, cfg.feature_dim, std::move(generated.slides),
                               corpus::EncoderInfo{cfg.seed, cfg.token_dim}, a.quality};
    corpus::write_feature_store(store, a.out);
    if (!a.templates_out.empty()) zeroshot::save_templates(zeroshot::default_templates(), a.templates_out);
    std::printf("wrote %zu slides (C=%zu, d=%zu, sigma_align=%s, sigma_tile=%s) to %s\n", store.slides.size(),
                store.labels.num_subtypes(), store.feature_dim, format_fixed(cfg.sigma_align, 3).c_str(),
                format_fixed(cfg.sigma_tile, 3).c_str(), a.out.c_str());
    return 0;
}

struct RunArgs {
    std::string config;
    std::string output;
    std::optional<std::size_t> workers;
    bool plots = false;
};

int cmd_run(const RunArgs& a) {
    auto cfg = harness::load_config(a.config);
    if (!a.output.empty()) cfg.output_dir = a.output;
    const std::size_t workers = a.workers ? *a.workers : harness::worker_count_from_env();
    std::fprintf(stderr, "running %zu method(s) x %zu k x %zu repeat(s) with %zu worker(s), kernels=%s\n",
                 cfg.methods.size(), cfg.k_shots.size(), cfg.n_repeats, workers, simd::kernels().name);
    const auto result = harness::run_experiment(cfg, workers);

    std::printf("%-14s %3s %5s %8s %8s %8s  %s\n", "method", "k", "n", "bacc", "auc", "dice", "(medians)");
    const auto summary = harness::read_csv(result.bundle / harness::kSummaryCsv);
    for (std::size_t r = 0; r < summary.rows.size(); ++r)
        std::printf("%-14s %3s %5s %8s %8s %8s\n", summary.at(r, "method").c_str(), summary.at(r, "k").c_str(),
                    summary.at(r, "n").c_str(), summary.at(r, "bacc_median").c_str(),
                    summary.at(r, "auc_median").c_str(), summary.at(r, "dice_median").c_str());
    for (const auto& run : result.runs)
        if (!run.ok) std::fprintf(stderr, "FAILED %s: %s\n", run.report_path.c_str(), run.error.c_str());
    std::printf("runs: %zu, failed: %zu, pseudo-label violations: %zu, bundle: %s\n", result.runs.size(),
                result.failed, result.label_violations, result.bundle.string().c_str());
    if (a.plots) {
        const auto plots = harness::emit_plots(result.bundle);
        for (const auto& w : plots.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    }
    return result.all_ok() ? 0 : kExitRunFailed;
}

int cmd_plot(const std::string& bundle) {
    const auto result = harness::emit_plots(bundle);
    for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    for (const auto& f : result.files) std::printf("%s\n", f.string().c_str());
    return 0;
}

void inspect_store(const fs::path& dir) {
    const auto store = corpus::read_feature_store(dir);
    std::map<std::pair<int, corpus::Split>, std::size_t> counts;
    std::size_t tiles = 0, gt = 0;
    for (const auto& s : store.slides) {
        ++counts[{s.slide_label, s.split}];
        tiles += s.num_tiles();
        for (const auto& t : s.tiles) gt += t.gt_label.has_value();
    }
    std::printf("feature store %s\n  d=%zu slides=%zu tiles=%zu (gt-labeled %zu)\n", dir.string().c_str(),
                store.feature_dim, store.slides.size(), tiles, gt);
    if (!store.base_quality.empty()) std::printf("  base_quality=%s\n", store.base_quality.c_str());
    if (store.encoder)
        std::printf("  text encoder seed=%llu token_dim=%zu\n", static_cast<unsigned long long>(store.encoder->seed),
                    store.encoder->token_dim);
    for (std::size_t c = 0; c < store.labels.size(); ++c) {
        const int label = static_cast<int>(c);
        std::printf("  [%zu] %-28s", c, store.labels.name(c).c_str());
        if (c > 0)
            std::printf(" train=%zu test=%zu", counts[{label, corpus::Split::train}],
                        counts[{label, corpus::Split::test}]);
        std::printf("\n");
    }
}

void inspect_bundle(const fs::path& dir) {
    const auto runs = harness::read_csv(dir / harness::kRunsCsv);
    std::size_t failed = 0, missing = 0;
    for (std::size_t r = 0; r < runs.rows.size(); ++r) {
        failed += runs.at(r, "status") != "ok";
        missing += !fs::exists(dir / runs.at(r, "report"));
    }
    std::printf("bundle %s\n  runs=%zu failed=%zu missing reports=%zu\n", dir.string().c_str(), runs.rows.size(),
                failed, missing);
    std::ifstream md(dir / "summary.md");
    if (md) std::cout << md.rdbuf();
}

void inspect_checkpoint(const fs::path& file) {
    const auto ckpt = model::read_checkpoint(file);
    const auto& h = ckpt.header;
    std::printf("checkpoint %s\n  kind=%s d=%zu d_tok=%zu K=%zu classes=%zu heads=%zu tau=%s spatial=%d prompts=%d\n",
                file.string().c_str(), h.kind.c_str(), h.feature_dim, h.token_dim, h.context_length, h.num_classes,
                h.heads, format_fixed(h.tau, 4).c_str(), h.use_spatial, h.use_learnable_prompts);
    std::size_t total = 0;
    for (const auto& [name, m] : ckpt.tensors) {
        std::printf("  %-28s %zu x %zu\n", name.c_str(), m.rows(), m.cols());
        total += m.size();
    }
    std::printf("  %zu tensors, %zu values\n", ckpt.tensors.size(), total);
}

bool has_magic(const fs::path& file, const char* magic) {
    std::ifstream in(file, std::ios::binary);
    char buf[4] = {};
    in.read(buf, 4);
    return in && std::equal(buf, buf + 4, magic);
}

int cmd_inspect(const std::string& target) {
    const fs::path p(target);
    if (fs::is_directory(p)) {
        if (fs::exists(p / "manifest.json")) {
            inspect_store(p);
        } else if (fs::exists(p / harness::kRunsCsv)) {
            inspect_bundle(p);
        } else {
            throw std::runtime_error(target + ": neither a feature store nor a report bundle");
        }
    } else if (!fs::exists(p)) {
        throw std::runtime_error(target + ": no such file or directory");
    } else if (has_magic(p, "PTCK")) {
        inspect_checkpoint(p);
    } else if (p.extension() == ".json") {
        std::ifstream in(p);
        std::cout << nlohmann::json::parse(in).dump(2) << "\n";
    } else {
        throw std::runtime_error(target + ": unrecognized file type");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot whole-slide subtyping with spatial prompt tuning"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen-corpus", "Generate a synthetic tile-feature store");
    g->add_option("-o,--out", gen.out, "Output directory")->required();
    g->add_option("-q,--quality", gen.quality, "Base-model quality preset")
        ->check(CLI::IsMember({"good", "medium", "poor"}));
    g->add_option("-s,--seed", gen.seed, "Corpus seed");
    g->add_option("--sigma-align", gen.sigma_align, "Text/visual misalignment override");
    g->add_option("--sigma-tile", gen.sigma_tile, "Tile scatter override");
    g->add_option("--tumor-fraction", gen.tumor_fraction, "Tumor tile fraction override");
    g->add_option("--slides-per-class", gen.slides_per_class, "Slides per subtype");
    g->add_option("--feature-dim", gen.feature_dim, "Feature dimension d");
    g->add_option("--subtypes", gen.num_subtypes, "Number of subtypes C");
    g->add_option("--grid", gen.grid, "Grid side length");
    g->add_option("--templates-out", gen.templates_out, "Also write the prompt template registry here");

    RunArgs run;
    auto* r = app.add_subcommand("run", "Run an experiment from a JSON config");
    r->add_option("-c,--config", run.config, "Experiment config")->required()->check(CLI::ExistingFile);
    r->add_option("-o,--output", run.output, "Override output_dir");
    r->add_option("-j,--workers", run.workers, "Worker threads (default: $PATHPT_WORKERS or 1)")
        ->check(CLI::PositiveNumber);
    r->add_flag("--plots", run.plots, "Emit plots after the run");

    std::string bundle;
    auto* p = app.add_subcommand("plot", "Render SVG plots from a report bundle");
    p->add_option("bundle", bundle, "Report bundle directory")->required();

    std::string target;
    auto* i = app.add_subcommand("inspect", "Describe a feature store, bundle, checkpoint or report");
    i->add_option("path", target, "Path to inspect")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitUsage;
    }

    try {
        if (g->parsed()) return cmd_gen_corpus(gen);
        if (r->parsed()) return cmd_run(run);
        if (p->parsed()) return cmd_plot(bundle);
        if (i->parsed()) return cmd_inspect(target);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRunFailed;
    }
    return kExitUsage;
}
