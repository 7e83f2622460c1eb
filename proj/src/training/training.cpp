#include "pathpt/training/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pathpt/error.hpp"
#include "pathpt/format.hpp"
#include "pathpt/random.hpp"
#include "pathpt/training/losses.hpp"

namespace pathpt::training {

void TrainConfig::validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be positive");
    if (w_labeled < 0.0 || w_unlabeled < 0.0 || w_pseudo < 0.0) throw ConfigError("train: loss weights must be >= 0");
    if (k_shot != 1 && k_shot != 5 && k_shot != 10) throw ConfigError("train: k_shot must be 1, 5 or 10");
    if (epochs == 0) return;
    if (warmup_epochs >= epochs) throw ConfigError("train: warmup_epochs must be below epochs");
    if (enable_pseudo && (pseudo_start_epoch < 1 || pseudo_start_epoch >= epochs))
        throw ConfigError("train: pseudo_start_epoch must lie in 1..epochs-1");
}

double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t steps_per_epoch) {
    const std::size_t warm = cfg.warmup_epochs * steps_per_epoch;
    if (step >= warm) return cfg.lr;
    return cfg.lr * double(step + 1) / double(warm);
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (Parameter* p : params_) {
        m_.emplace_back(p->value.rows(), p->value.cols());
        v_.emplace_back(p->value.rows(), p->value.cols());
        if (!p->grad.same_shape(p->value)) p->zero_grad();
    }
}

void Adam::zero_grad() {
    for (Parameter* p : params_) p->grad.fill(0.0);
}

void Adam::step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        auto value = p.value.flat();
        auto grad = p.grad.flat();
        auto m = m_[i].flat();
        auto v = v_[i].flat();
        for (std::size_t j = 0; j < value.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * grad[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * grad[j] * grad[j];
            value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
        }
    }
    zero_grad();
}

std::vector<std::size_t> FewShotSplit::train_flat() const {
    std::vector<std::size_t> out;
    for (const auto& c : train) out.insert(out.end(), c.begin(), c.end());
    return out;
}

FewShotSplit sample_few_shot(std::span<const corpus::SlideRecord> slides, std::size_t num_subtypes, std::size_t k,
                             std::uint64_t seed) {
    if (k == 0) throw ConfigError("sample_few_shot: k must be positive");
    std::vector<std::vector<std::size_t>> pool(num_subtypes);
    FewShotSplit split;
    for (std::size_t i = 0; i < slides.size(); ++i) {
        const int y = slides[i].slide_label;
        if (y < 1 || static_cast<std::size_t>(y) > num_subtypes)
            throw InvalidInput("slide " + slides[i].slide_id + ": label outside 1.." + std::to_string(num_subtypes));
        if (slides[i].split == corpus::Split::train)
            pool[y - 1].push_back(i);
        else
            split.test.push_back(i);
    }
    Rng rng(derive_seed(seed, "few-shot"));
    split.train.resize(num_subtypes);
    for (std::size_t c = 0; c < num_subtypes; ++c) {
        auto& candidates = pool[c];
        if (candidates.empty()) throw ConfigError("sample_few_shot: subtype " + std::to_string(c + 1) + " has no training slide");
        if (candidates.size() >= k) {
            for (std::size_t i = 0; i < k; ++i)
                std::swap(candidates[i], candidates[i + uniform_index(rng, candidates.size() - i)]);
            split.train[c].assign(candidates.begin(), candidates.begin() + std::ptrdiff_t(k));
        } else {
            for (std::size_t i = 0; i < k; ++i) split.train[c].push_back(candidates[uniform_index(rng, candidates.size())]);
        }
    }
    return split;
}

std::vector<int> refresh_pseudo_labels(const Matrix& probabilities, const zeroshot::SlidePseudoLabels& labels) {
    if (probabilities.rows() != labels.tiles.size()) throw InvalidInput("pseudo-label refresh: tile count mismatch");
    const auto i = static_cast<std::size_t>(labels.slide_label);
    if (i < 1 || i >= probabilities.cols()) throw InvalidInput("pseudo-label refresh: slide label out of range");
    std::vector<int> out(labels.tiles.size(), zeroshot::kUnlabeled);
    for (std::size_t m = 0; m < out.size(); ++m) {
        if (labels.tiles[m] != zeroshot::kUnlabeled) continue;
        out[m] = probabilities(m, i) > probabilities(m, 0) ? labels.slide_label : 0;
    }
    return out;
}

std::vector<std::vector<int>> pseudo_label_refresh(const model::PathPTModel& model,
                                                   std::span<const corpus::SlideRecord> slides,
                                                   std::span<const zeroshot::SlidePseudoLabels> labels) {
    if (slides.size() != labels.size()) throw InvalidInput("pseudo-label refresh: one label set per slide required");
    std::vector<std::vector<int>> out;
    out.reserve(slides.size());
    for (std::size_t s = 0; s < slides.size(); ++s)
        out.push_back(refresh_pseudo_labels(model.predict_slide(slides[s]).probabilities, labels[s]));
    return out;
}

namespace {

std::size_t violations(std::span<const int> tiles, int slide_label) {
    return static_cast<std::size_t>(std::count_if(tiles.begin(), tiles.end(), [&](int y) {
        return y != zeroshot::kUnlabeled && y != 0 && y != slide_label;
    }));
}

}  // namespace

TrainResult train(model::PathPTModel& model, std::span<const corpus::SlideRecord> slides,
                  std::span<const zeroshot::SlidePseudoLabels> labels, const TrainConfig& cfg) {
    cfg.validate();
    if (slides.size() != labels.size()) throw InvalidInput("train: one label set per slide required");
    TrainResult result;
    for (std::size_t s = 0; s < slides.size(); ++s) {
        if (labels[s].slide_label != slides[s].slide_label || labels[s].tiles.size() != slides[s].num_tiles())
            throw InvalidInput("train: pseudo-labels do not match slide " + slides[s].slide_id);
        result.label_violations += violations(labels[s].tiles, labels[s].slide_label);
    }
    if (cfg.epochs == 0 || slides.empty()) return result;

    std::vector<std::vector<std::size_t>> unlabeled_rows(slides.size());
    for (std::size_t s = 0; s < slides.size(); ++s)
        for (std::size_t m = 0; m < labels[s].tiles.size(); ++m)
            if (labels[s].tiles[m] == zeroshot::kUnlabeled) unlabeled_rows[s].push_back(m);

    Adam optimizer(model.parameters());
    Rng rng(derive_seed(cfg.seed, "train-order"));
    std::vector<std::size_t> order(slides.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::vector<int>> refreshed;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const bool pseudo_on = cfg.enable_pseudo && epoch >= cfg.pseudo_start_epoch;
        if (pseudo_on) {
            refreshed = pseudo_label_refresh(model, slides, labels);
            for (std::size_t s = 0; s < slides.size(); ++s)
                result.label_violations += violations(refreshed[s], slides[s].slide_label);
        }
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

        EpochTrace tr;
        tr.epoch = epoch;
        for (std::size_t s : order) {
            ag::Tape tape;
            model::ForwardPass pass;
            try {
                pass = model.forward(tape, slides[s]);
            } catch (const InvalidInput& e) {
                throw TrainingError("forward failed at epoch " + std::to_string(epoch) + " on slide " +
                                    slides[s].slide_id + ": " + e.what());
            }
            const ag::Var l_lab = balanced_ce_from_logits(tape, pass.logits, labels[s].tiles);
            const ag::Var l_unl =
                candidate_loss_from_logits(tape, pass.logits, slides[s].slide_label, unlabeled_rows[s]);
            ag::Var total = ag::add(tape, ag::scale(tape, l_lab, cfg.w_labeled), ag::scale(tape, l_unl, cfg.w_unlabeled));
            double pseudo = 0.0;
            if (pseudo_on) {
                const ag::Var l_ps = balanced_ce_from_logits(tape, pass.logits, refreshed[s]);
                pseudo = tape.value(l_ps)(0, 0);
                total = ag::add(tape, total, ag::scale(tape, l_ps, cfg.w_pseudo));
            }
            const double value = tape.value(total)(0, 0);
            if (!std::isfinite(value))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " on slide " +
                                    slides[s].slide_id);
            tape.backward(total);
            const double lr = learning_rate(cfg, result.steps, slides.size());
            optimizer.step(lr);
            ++result.steps;

            tr.labeled += tape.value(l_lab)(0, 0);
            tr.unlabeled += tape.value(l_unl)(0, 0);
            tr.pseudo += pseudo;
            tr.total += value;
            tr.lr = lr;
        }
        const double n = double(slides.size());
        tr.labeled /= n;
        tr.unlabeled /= n;
        tr.pseudo /= n;
        tr.total /= n;
        result.trace.push_back(tr);
    }
    return result;
}

void write_trace_csv(const std::filesystem::path& path, std::span<const EpochTrace> trace) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw InvalidInput("cannot write " + path.string());
    f << "epoch,L_labeled,L_unlabeled,L_pseudo,total,lr\n";
    for (const auto& t : trace)
        f << t.epoch << ',' << format_fixed(t.labeled, 9) << ',' << format_fixed(t.unlabeled, 9) << ','
          << format_fixed(t.pseudo, 9) << ',' << format_fixed(t.total, 9) << ',' << format_fixed(t.lr, 12) << '\n';
}

std::vector<EpochTrace> read_trace_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw LoadError("cannot open trace " + path.string());
    std::string line;
    std::getline(f, line);
    if (line != "epoch,L_labeled,L_unlabeled,L_pseudo,total,lr") throw LoadError("trace " + path.string() + ": bad header");
    std::vector<EpochTrace> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<double> v;
        while (std::getline(row, cell, ',')) v.push_back(std::stod(cell));
        if (v.size() != 6) throw LoadError("trace " + path.string() + ": malformed row");
        out.push_back({std::size_t(v[0]), v[1], v[2], v[3], v[4], v[5]});
    }
    return out;
}

}  // namespace pathpt::training
