#include "pathpt/harness/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "pathpt/corpus/feature_store.hpp"
#include "pathpt/corpus/generator.hpp"
#include "pathpt/error.hpp"
#include "pathpt/format.hpp"
#include "pathpt/metrics/metrics.hpp"
#include "pathpt/mil/mil.hpp"
#include "pathpt/model/pathpt_model.hpp"
#include "pathpt/model/prompts.hpp"
#include "pathpt/random.hpp"
#include "pathpt/training/training.hpp"
#include "pathpt/zeroshot/zeroshot.hpp"

namespace pathpt::harness {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Per-slide predictions of a tile-level method on the test split.
struct TilePredictions {
    std::vector<int> slide_labels;
    std::vector<std::vector<int>> tile_labels;
    std::vector<Matrix> probabilities;
};

void evaluate_tiles(metrics::EvalReport& report, const std::vector<const corpus::SlideRecord*>& test,
                    const TilePredictions& pred, std::size_t num_subtypes) {
    std::vector<int> truth;
    for (const auto* s : test) truth.push_back(s->slide_label);
    metrics::fill_slide_metrics(report, pred.slide_labels, truth, num_subtypes);

    double auc_sum = 0.0, dice_sum = 0.0;
    std::size_t auc_n = 0, dice_n = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& slide = *test[i];
        const int target = slide.slide_label;
        const bool has_gt = std::any_of(slide.tiles.begin(), slide.tiles.end(),
                                        [](const corpus::Tile& t) { return t.gt_label.has_value(); });
        if (!has_gt) continue;
        dice_sum += metrics::dice(metrics::subtype_mask(pred.tile_labels[i], target, slide),
                                  metrics::ground_truth_mask(slide, target));
        ++dice_n;

        std::vector<double> scores;
        std::vector<std::uint8_t> mask;
        for (std::size_t m = 0; m < slide.num_tiles(); ++m) {
            if (!slide.tiles[m].gt_label) continue;
            scores.push_back(pred.probabilities[i](m, static_cast<std::size_t>(target)));
            mask.push_back(*slide.tiles[m].gt_label == target);
        }
        try {
            auc_sum += metrics::tile_auc(scores, mask);
            ++auc_n;
        } catch (const UndefinedMetric&) {
        }
    }
    if (dice_n > 0) report.dice = dice_sum / static_cast<double>(dice_n);
    if (auc_n > 0) report.auc = auc_sum / static_cast<double>(auc_n);
    report.auc_slides = auc_n;
}

std::string run_stem(Method m, std::size_t k, std::size_t repeat) {
    if (m == Method::zeroshot) return "zeroshot";
    return std::string(to_string(m)) + "_k" + std::to_string(k) + "_r" + std::to_string(repeat);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
    return rows;
}

void export_ranking(const fs::path& path, const zeroshot::RankedPrompts& ranked,
                    std::span<const zeroshot::PromptGroup> groups, const std::string& scope) {
    json selected = json::array();
    for (std::size_t g : ranked.selected())
        selected.push_back({{"group", g}, {"score", ranked.scores[g]}, {"prompts", groups[g].prompts}});
    write_json(path, {{"scope", scope},
                      {"n_groups", groups.size()},
                      {"top_m", ranked.top_m},
                      {"best_group", ranked.best_group()},
                      {"selected", selected},
                      {"pooled_embeddings", matrix_json(ranked.pooled.matrix())}});
}

// Shared state of one (k, repeat) unit: split, prompt ranking, pseudo-labels.
struct Stage {
    std::uint64_t seed = 0;
    std::vector<corpus::SlideRecord> train;
    std::vector<const corpus::SlideRecord*> test;
    zeroshot::RankedPrompts ranked;
    std::vector<zeroshot::SlidePseudoLabels> pseudo;
    std::size_t pseudo_conflicts = 0;
};

class Runner {
public:
    Runner(const ExperimentConfig& cfg, const Workspace& ws) : cfg_(cfg), ws_(ws) {
        groups_ = zeroshot::build_prompt_groups(ws.templates, ws.labels, cfg.n_prompt_groups,
                                                derive_seed(cfg.base_seed, "prompt-groups"));
        for (const auto& s : ws.slides)
            if (s.split == corpus::Split::test) test_.push_back(&s);
        if (test_.empty()) throw ConfigError("corpus has no test slides");
    }

    std::size_t num_subtypes() const { return ws_.labels.num_subtypes(); }

    RunRecord blank(Method m, std::size_t k, std::size_t repeat, std::uint64_t seed) const {
        RunRecord r;
        r.method = m;
        r.k = k;
        r.repeat = repeat;
        r.seed = seed;
        r.report.method = std::string(to_string(m));
        r.report.base_quality = ws_.base_quality;
        r.report.k = k;
        r.report.seed = seed;
        r.report.repeat = repeat;
        r.report_path = "runs/" + run_stem(m, k, repeat) + ".json";
        return r;
    }

    RunRecord run_zeroshot() const {
        RunRecord rec = blank(Method::zeroshot, 0, 0, cfg_.base_seed);
        guarded(rec, [&] {
            std::vector<corpus::SlideRecord> train;
            for (const auto& s : ws_.slides)
                if (s.split == corpus::Split::train) train.push_back(s);
            const auto ranked = zeroshot::rank_and_pool(groups_, train, ws_.encoder, ws_.labels.size(), cfg_.top_m,
                                                        cfg_.model.tau);
            export_ranking(cfg_.output_dir / "zeroshot" / "full_train.json", ranked, groups_, "train split");

            TilePredictions pred;
            for (const auto* s : test_) {
                auto ev = zeroshot::zero_shot_evidence(*s, ranked.pooled, cfg_.model.tau);
                pred.slide_labels.push_back(
                    zeroshot::aggregate_wsi(ev, {zeroshot::Readout::tumor_ratio, 1}, ws_.labels.size()));
                pred.tile_labels.push_back(std::move(ev.labels));
                pred.probabilities.push_back(std::move(ev.probabilities));
            }
            rec.report.variant = "pooled top-" + std::to_string(ranked.top_m) + " of " +
                                 std::to_string(groups_.size()) + " prompt groups";
            evaluate_tiles(rec.report, test_, pred, num_subtypes());
        });
        return rec;
    }

    // All trained methods of one (k, repeat) unit, in config order.
    std::vector<RunRecord> run_unit(std::size_t k, std::size_t repeat) const {
        const std::uint64_t seed = cfg_.base_seed + repeat;
        std::vector<Method> methods;
        for (Method m : cfg_.methods)
            if (is_trained(m)) methods.push_back(m);

        Stage stage;
        std::string stage_error;
        try {
            stage = build_stage(k, repeat, seed);
        } catch (const std::exception& e) {
            stage_error = std::string("few-shot stage: ") + e.what();
        }

        std::vector<RunRecord> out;
        for (Method m : methods) {
            RunRecord rec = blank(m, k, repeat, seed);
            if (!stage_error.empty()) {
                rec.error = stage_error;
                rec.ok = false;
            } else {
                guarded(rec, [&] { run_method(rec, stage); });
            }
            out.push_back(std::move(rec));
        }
        return out;
    }

private:
    template <class F>
    static void guarded(RunRecord& rec, F&& body) {
        try {
            body();
            rec.ok = true;
        } catch (const std::exception& e) {
            rec.ok = false;
            rec.error = e.what();
        }
    }

    Stage build_stage(std::size_t k, std::size_t repeat, std::uint64_t seed) const {
        Stage st;
        st.seed = seed;
        const auto split = training::sample_few_shot(ws_.slides, num_subtypes(), k, seed);
        for (std::size_t i : split.train_flat()) st.train.push_back(ws_.slides[i]);
        st.test = test_;
        st.ranked = zeroshot::rank_and_pool(groups_, st.train, ws_.encoder, ws_.labels.size(), cfg_.top_m,
                                            cfg_.model.tau);
        for (const auto& s : st.train) {
            st.pseudo.push_back(zeroshot::pseudo_label_slide(s, st.ranked.pooled));
            st.pseudo_conflicts += zeroshot::count_conflicts(st.pseudo.back());
        }
        export_ranking(cfg_.output_dir / "zeroshot" / ("k" + std::to_string(k) + "_r" + std::to_string(repeat) + ".json"),
                       st.ranked, groups_, std::to_string(k) + "-shot train slides");
        return st;
    }

    void run_method(RunRecord& rec, const Stage& st) const {
        auto tcfg = cfg_.train_for(rec.method);
        tcfg.k_shot = rec.k;
        tcfg.seed = derive_seed(st.seed, "train");
        const std::string stem = run_stem(rec.method, rec.k, rec.repeat);
        const std::string trace_rel = "traces/" + stem + ".csv";
        rec.report.trace = trace_rel;

        if (is_mil(rec.method)) {
            const auto variant = rec.method == Method::abmil ? mil::MilVariant::abmil_gated : mil::MilVariant::mean_pool;
            auto model = mil::MILModel::init(variant, st.train.front().feature_dim(), num_subtypes(),
                                             derive_seed(st.seed, "mil"), cfg_.mil_hidden);
            const auto result = mil::mil_train(model, st.train, tcfg);
            if (cfg_.save_checkpoints) model.save(cfg_.output_dir / "checkpoints" / (stem + ".ckpt"));
            training::write_trace_csv(cfg_.output_dir / trace_rel, result.trace);
            std::vector<int> preds, truth;
            for (const auto* s : st.test) {
                preds.push_back(mil::mil_forward(*s, model).prediction);
                truth.push_back(s->slide_label);
            }
            metrics::fill_slide_metrics(rec.report, preds, truth, num_subtypes());
            rec.report.variant = std::string(mil::to_string(variant)) + ", hidden " + std::to_string(cfg_.mil_hidden) +
                                 ", lr " + format_fixed(tcfg.lr, 6);
            rec.report.notes = "slide-level baseline with default hyperparameters: tile AUC and DICE not produced";
            return;
        }

        const auto mcfg = cfg_.model_for(rec.method);
        const auto& best = groups_[st.ranked.best_group()];
        auto bank = model::PromptBank::from_prompts(best.prompts, ws_.labels, ws_.encoder, mcfg.context_length);
        model::PathPTModel model(mcfg, ws_.encoder, std::move(bank), st.ranked.pooled, derive_seed(st.seed, "model"));
        const auto result = training::train(model, st.train, st.pseudo, tcfg);
        if (cfg_.save_checkpoints) model.save(cfg_.output_dir / "checkpoints" / (stem + ".ckpt"));
        training::write_trace_csv(cfg_.output_dir / trace_rel, result.trace);
        rec.report.label_violations = st.pseudo_conflicts + result.label_violations;

        TilePredictions pred;
        for (const auto* s : st.test) {
            auto p = model.predict_slide(*s);
            pred.slide_labels.push_back(p.slide_label);
            pred.tile_labels.push_back(std::move(p.labels));
            pred.probabilities.push_back(std::move(p.probabilities));
        }
        std::ostringstream variant;
        variant << "spatial=" << (mcfg.use_spatial ? "on" : "off")
                << ", prompts=" << (mcfg.use_learnable_prompts ? "learnable" : "linear probe");
        rec.report.variant = variant.str();
        evaluate_tiles(rec.report, st.test, pred, num_subtypes());
    }

    const ExperimentConfig& cfg_;
    const Workspace& ws_;
    std::vector<zeroshot::PromptGroup> groups_;
    std::vector<const corpus::SlideRecord*> test_;
};

std::string csv_number(const std::optional<double>& v) { return v ? format_fixed(*v) : "NA"; }

void write_runs_csv(const fs::path& path, const std::vector<RunRecord>& runs) {
    std::ostringstream out;
    out << "method,base_quality,k,seed,bacc,auc,dice,report,status\n";
    for (const auto& r : runs) {
        out << to_string(r.method) << ',' << r.report.base_quality << ',' << r.k << ',' << r.seed << ',';
        if (r.ok)
            out << format_fixed(r.report.bacc) << ',' << csv_number(r.report.auc) << ',' << csv_number(r.report.dice);
        else
            out << "NA,NA,NA";
        out << ',' << r.report_path << ',' << (r.ok ? "ok" : "failed") << '\n';
    }
    write_text(path, out.str());
}

// Runs grouped by (method, k) in first-seen order.
std::vector<std::pair<std::pair<Method, std::size_t>, std::vector<const RunRecord*>>> group_runs(
    const std::vector<RunRecord>& runs) {
    std::vector<std::pair<std::pair<Method, std::size_t>, std::vector<const RunRecord*>>> groups;
    for (const auto& r : runs) {
        auto key = std::make_pair(r.method, r.k);
        auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == key; });
        if (it == groups.end()) {
            groups.push_back({key, {}});
            it = std::prev(groups.end());
        }
        it->second.push_back(&r);
    }
    return groups;
}

std::optional<metrics::Quartiles> quartiles_of(const std::vector<const RunRecord*>& runs,
                                               std::optional<double> (*get)(const RunRecord&)) {
    std::vector<double> values;
    for (const auto* r : runs)
        if (r->ok)
            if (auto v = get(*r)) values.push_back(*v);
    if (values.empty()) return std::nullopt;
    return metrics::quartiles(values);
}

std::optional<double> get_bacc(const RunRecord& r) { return r.report.bacc; }
std::optional<double> get_auc(const RunRecord& r) { return r.report.auc; }
std::optional<double> get_dice(const RunRecord& r) { return r.report.dice; }

constexpr std::pair<const char*, std::optional<double> (*)(const RunRecord&)> kMetrics[] = {
    {"bacc", get_bacc}, {"auc", get_auc}, {"dice", get_dice}};

void write_summary(const fs::path& dir, const std::vector<RunRecord>& runs, const std::string& base_quality) {
    const auto groups = group_runs(runs);
    std::ostringstream csv;
    csv << "method,base_quality,k,n,n_failed";
    for (auto [name, _] : kMetrics) csv << ',' << name << "_median," << name << "_q1," << name << "_q3";
    csv << '\n';
    for (const auto& [key, members] : groups) {
        const std::size_t failed = std::count_if(members.begin(), members.end(), [](auto* r) { return !r->ok; });
        csv << to_string(key.first) << ',' << base_quality << ',' << key.second << ',' << members.size() - failed
            << ',' << failed;
        for (auto [name, get] : kMetrics) {
            if (auto q = quartiles_of(members, get))
                csv << ',' << format_fixed(q->median) << ',' << format_fixed(q->q1) << ',' << format_fixed(q->q3);
            else
                csv << ",NA,NA,NA";
        }
        csv << '\n';
    }
    write_text(dir / kSummaryCsv, csv.str());

    std::set<std::size_t> ks;
    for (const auto& [key, _] : groups) ks.insert(key.second);
    std::vector<Method> methods;
    for (const auto& [key, _] : groups)
        if (std::find(methods.begin(), methods.end(), key.first) == methods.end()) methods.push_back(key.first);

    std::ostringstream md;
    md << "# Results (" << base_quality << ")\n\nValues are median (Q1, Q3) over repeats; k=0 is zero-shot.\n";
    for (auto [name, get] : kMetrics) {
        std::string upper(name);
        std::transform(upper.begin(), upper.end(), upper.begin(), [](char c) { return char(std::toupper(c)); });
        md << "\n## " << upper << "\n\n| method |";
        for (auto k : ks) md << " k=" << k << " |";
        md << "\n|---|";
        for (std::size_t i = 0; i < ks.size(); ++i) md << "---|";
        md << '\n';
        for (Method m : methods) {
            md << "| " << to_string(m) << " |";
            for (auto k : ks) {
                auto it = std::find_if(groups.begin(), groups.end(),
                                       [&](const auto& g) { return g.first == std::make_pair(m, k); });
                std::optional<metrics::Quartiles> q;
                if (it != groups.end()) q = quartiles_of(it->second, get);
                if (q)
                    md << ' ' << format_fixed(q->median, 3) << " (" << format_fixed(q->q1, 3) << ", "
                       << format_fixed(q->q3, 3) << ") |";
                else
                    md << " - |";
            }
            md << '\n';
        }
    }
    write_text(dir / "summary.md", md.str());
}

void write_ttests(const fs::path& path, const std::vector<RunRecord>& runs, const std::vector<std::size_t>& ks) {
    std::ostringstream out;
    out << "method_a,method_b,k,n,mean_diff,t,p,dof,degenerate\n";
    const std::pair<Method, Method> pairs[] = {{Method::pathpt, Method::prompt_only},
                                               {Method::pathpt, Method::linear_probe}};
    for (auto [a, b] : pairs) {
        for (auto k : ks) {
            std::map<std::size_t, double> va, vb;
            for (const auto& r : runs) {
                if (!r.ok || r.k != k) continue;
                if (r.method == a) va[r.repeat] = r.report.bacc;
                if (r.method == b) vb[r.repeat] = r.report.bacc;
            }
            if (va.empty() || vb.empty()) continue;
            std::vector<double> xa, xb;
            for (auto [rep, v] : va)
                if (auto it = vb.find(rep); it != vb.end()) {
                    xa.push_back(v);
                    xb.push_back(it->second);
                }
            out << to_string(a) << ',' << to_string(b) << ',' << k << ',' << xa.size() << ',';
            if (xa.size() < 2) {
                out << "NA,NA,NA,NA,NA\n";
                continue;
            }
            double diff = 0.0;
            for (std::size_t i = 0; i < xa.size(); ++i) diff += xa[i] - xb[i];
            diff /= static_cast<double>(xa.size());
            const auto t = metrics::paired_ttest(xa, xb);
            out << format_fixed(diff) << ',' << format_fixed(t.t) << ',' << format_fixed(t.p) << ',' << t.dof << ','
                << (t.degenerate ? "true" : "false") << '\n';
        }
    }
    write_text(path, out.str());
}

bool is_within(const fs::path& child, const fs::path& parent) {
    auto c = fs::weakly_canonical(child);
    auto p = fs::weakly_canonical(parent);
    auto [pe, ce] = std::mismatch(p.begin(), p.end(), c.begin(), c.end());
    return pe == p.end();
}

}  // namespace

Workspace load_workspace(const ExperimentConfig& cfg) {
    cfg.validate();
    auto templates = cfg.templates ? zeroshot::load_templates(*cfg.templates) : zeroshot::default_templates();
    if (cfg.synthetic) {
        auto corpus = corpus::generate_corpus(*cfg.synthetic);
        return Workspace{std::move(corpus.labels), std::move(corpus.encoder), std::move(corpus.slides),
                         std::move(templates), cfg.synthetic_quality.empty() ? "custom" : cfg.synthetic_quality};
    }
    auto store = corpus::read_feature_store(*cfg.feature_store);
    std::uint64_t enc_seed = 0;
    std::size_t token_dim = cfg.encoder_token_dim;
    if (cfg.encoder_seed) {
        enc_seed = *cfg.encoder_seed;
    } else if (store.encoder) {
        enc_seed = store.encoder->seed;
        token_dim = store.encoder->token_dim;
    } else {
        throw ConfigError("feature store has no encoder info; set corpus.encoder_seed");
    }
    for (Method m : cfg.methods)
        if (!is_mil(m)) cfg.model_for(m).validate(store.feature_dim);
    auto encoder = corpus::make_encoder(store.labels, enc_seed, token_dim, store.feature_dim);
    return Workspace{std::move(store.labels), std::move(encoder), std::move(store.slides), std::move(templates),
                     store.base_quality.empty() ? "external" : store.base_quality};
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t workers) {
    const Workspace ws = load_workspace(cfg);
    return run_experiment(cfg, ws, workers);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Workspace& ws, std::size_t workers) {
    cfg.validate();
    if (cfg.feature_store && is_within(cfg.output_dir, *cfg.feature_store))
        throw ConfigError("output_dir must not lie inside the feature store");
    for (const char* sub : {"", "runs", "traces", "zeroshot", "checkpoints"}) {
        std::error_code ec;
        fs::create_directories(cfg.output_dir / sub, ec);
        if (ec) throw ConfigError("output_dir not writable: " + (cfg.output_dir / sub).string() + ": " + ec.message());
    }
    // Stale per-run files from an earlier experiment in the same directory
    // would otherwise be indistinguishable from fresh ones.
    for (const char* sub : {"runs", "traces", "zeroshot", "checkpoints"})
        for (const auto& e : fs::directory_iterator(cfg.output_dir / sub)) fs::remove(e.path());

    const Runner runner(cfg, ws);
    zeroshot::save_templates(ws.templates, cfg.output_dir / "zeroshot" / "templates.txt");

    const bool want_zeroshot = std::find(cfg.methods.begin(), cfg.methods.end(), Method::zeroshot) != cfg.methods.end();
    const bool want_trained = std::any_of(cfg.methods.begin(), cfg.methods.end(), is_trained);

    // Unit 0 is zero-shot; the rest are (k, repeat) pairs.
    struct Unit {
        bool zeroshot;
        std::size_t k, repeat;
    };
    std::vector<Unit> units;
    if (want_zeroshot) units.push_back({true, 0, 0});
    if (want_trained)
        for (auto k : cfg.k_shots)
            for (std::size_t r = 0; r < cfg.n_repeats; ++r) units.push_back({false, k, r});

    std::vector<std::vector<RunRecord>> results(units.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < units.size(); i = next++) {
            const Unit& u = units[i];
            if (u.zeroshot)
                results[i].push_back(runner.run_zeroshot());
            else
                results[i] = runner.run_unit(u.k, u.repeat);
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(workers, units.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    ExperimentResult result;
    result.bundle = cfg.output_dir;
    for (Method m : cfg.methods)
        for (const auto& unit : results)
            for (const auto& r : unit)
                if (r.method == m) result.runs.push_back(r);
    std::stable_sort(result.runs.begin(), result.runs.end(), [&](const RunRecord& a, const RunRecord& b) {
        auto pos = [&](Method m) { return std::find(cfg.methods.begin(), cfg.methods.end(), m) - cfg.methods.begin(); };
        return std::tuple(pos(a.method), a.k, a.repeat) < std::tuple(pos(b.method), b.k, b.repeat);
    });

    json failures = json::array();
    for (auto& r : result.runs) {
        json report = metrics::to_json(r.report);
        report["status"] = r.ok ? "ok" : "failed";
        if (!r.ok) {
            report["error"] = r.error;
            ++result.failed;
            failures.push_back({{"report", r.report_path}, {"error", r.error}});
        }
        result.label_violations += r.report.label_violations;
        write_json(cfg.output_dir / r.report_path, report);
    }

    write_runs_csv(cfg.output_dir / kRunsCsv, result.runs);
    write_summary(cfg.output_dir, result.runs, ws.base_quality);
    write_ttests(cfg.output_dir / "ttests.csv", result.runs, cfg.k_shots);
    write_json(cfg.output_dir / "config.json", to_json(cfg));
    write_json(cfg.output_dir / "run_summary.json", {{"runs", result.runs.size()},
                                                     {"failed", result.failed},
                                                     {"label_violations", result.label_violations},
                                                     {"failures", failures}});
    return result;
}

}  // namespace pathpt::harness
