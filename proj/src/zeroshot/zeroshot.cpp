#include "pathpt/zeroshot/zeroshot.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "pathpt/error.hpp"
#include "pathpt/metrics/metrics.hpp"
#include "pathpt/random.hpp"
#include "pathpt/simd/kernels.hpp"

namespace pathpt::zeroshot {

ClassEmbeddings::ClassEmbeddings(Matrix rows) : rows_(std::move(rows)) {
    for (std::size_t r = 0; r < rows_.rows(); ++r) {
        const double n = std::sqrt(simd::dot(rows_.row(r), rows_.row(r)));
        if (!(std::abs(n - 1.0) <= 1e-9)) throw InvalidInput("class embedding row " + std::to_string(r) + " is not unit-norm");
    }
}

ClassEmbeddings ClassEmbeddings::normalized(Matrix rows) {
    for (std::size_t r = 0; r < rows.rows(); ++r) {
        auto row = rows.row(r);
        const double n = std::sqrt(simd::dot(row, row));
        if (!(n > 0.0)) throw InvalidInput("class embedding row " + std::to_string(r) + " has zero norm");
        for (double& v : row) v /= n;
    }
    return ClassEmbeddings(std::move(rows));
}

int classify_tile(std::span<const double> feature, const ClassEmbeddings& embeddings) {
    if (feature.size() != embeddings.dim()) throw InvalidInput("classify_tile: dimension mismatch");
    const Matrix v(1, feature.size(), std::vector<double>(feature.begin(), feature.end()));
    return model::argmax_rows(model::cosine_scores(v, embeddings.matrix())).front();
}

std::vector<PromptGroup> build_prompt_groups(std::span<const PromptTemplate> templates,
                                             const corpus::LabelSpace& labels, std::size_t n_groups,
                                             std::uint64_t seed) {
    if (templates.empty()) throw ConfigError("build_prompt_groups: empty template list");
    std::vector<PromptGroup> groups(n_groups);
    Rng rng(derive_seed(seed, "prompt-groups"));
    for (auto& g : groups) {
        g.template_index.resize(labels.size());
        g.prompts.resize(labels.size());
        for (std::size_t c = 0; c < labels.size(); ++c) {
            const std::size_t t = uniform_index(rng, templates.size());
            g.template_index[c] = t;
            g.prompts[c] = templates[t].instantiate(labels.name(c));
        }
    }
    return groups;
}

ClassEmbeddings encode_group(const PromptGroup& group, const corpus::FrozenTextEncoder& encoder) {
    Matrix rows(group.prompts.size(), encoder.output_dim());
    for (std::size_t c = 0; c < group.prompts.size(); ++c) {
        const auto e = encoder.encode_text(group.prompts[c]);
        std::copy(e.begin(), e.end(), rows.row(c).begin());
    }
    return ClassEmbeddings::normalized(std::move(rows));
}

namespace {

TileEvidence evidence_from_unit(const Matrix& unit_features, const Matrix& class_rows, double tau) {
    Matrix cos(unit_features.rows(), class_rows.rows());
    simd::gemm(simd::Trans::no, simd::Trans::yes, unit_features.rows(), class_rows.rows(), unit_features.cols(),
               unit_features.data(), unit_features.cols(), class_rows.data(), class_rows.cols(), cos.data(),
               cos.cols());
    TileEvidence ev;
    ev.labels = model::argmax_rows(cos);
    ev.probabilities = model::softmax_scaled(cos, tau);
    return ev;
}

}  // namespace

RankedPrompts rank_and_pool(std::span<const PromptGroup> groups, std::span<const corpus::SlideRecord> train,
                            const corpus::FrozenTextEncoder& encoder, std::size_t num_classes, std::size_t top_m,
                            double tau) {
    if (train.empty()) throw InvalidInput("rank_and_pool: empty training set");
    if (top_m == 0 || top_m > groups.size())
        throw ConfigError("rank_and_pool: top_m=" + std::to_string(top_m) + " must be in 1.." +
                          std::to_string(groups.size()));

    std::map<std::string, std::vector<double>> cache;
    std::vector<ClassEmbeddings> encoded;
    encoded.reserve(groups.size());
    for (const auto& g : groups) {
        if (g.prompts.size() != num_classes) throw InvalidInput("rank_and_pool: group does not cover every class");
        Matrix rows(num_classes, encoder.output_dim());
        for (std::size_t c = 0; c < num_classes; ++c) {
            auto it = cache.find(g.prompts[c]);
            if (it == cache.end()) it = cache.emplace(g.prompts[c], encoder.encode_text(g.prompts[c])).first;
            std::copy(it->second.begin(), it->second.end(), rows.row(c).begin());
        }
        encoded.push_back(ClassEmbeddings::normalized(std::move(rows)));
    }

    std::vector<Matrix> unit_features;
    std::vector<int> truth;
    for (const auto& s : train) {
        unit_features.push_back(model::normalize_rows(s.features()));
        truth.push_back(s.slide_label);
    }

    RankedPrompts out;
    out.scores.resize(groups.size());
    std::vector<int> preds(train.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (std::size_t s = 0; s < train.size(); ++s) {
            const TileEvidence ev = evidence_from_unit(unit_features[s], encoded[g].matrix(), tau);
            preds[s] = aggregate_wsi(ev, {Readout::tumor_ratio, 1}, num_classes);
        }
        out.scores[g] = metrics::balanced_accuracy(preds, truth, num_classes - 1);
    }
    out.order.resize(groups.size());
    std::iota(out.order.begin(), out.order.end(), 0);
    std::stable_sort(out.order.begin(), out.order.end(),
                     [&](std::size_t a, std::size_t b) { return out.scores[a] > out.scores[b]; });
    out.top_m = top_m;

    Matrix pooled(num_classes, encoder.output_dim());
    for (std::size_t i = 0; i < top_m; ++i) {
        const Matrix& e = encoded[out.order[i]].matrix();
        simd::kernels().axpy(1.0, e.data(), pooled.data(), e.size());
    }
    out.pooled = ClassEmbeddings::normalized(std::move(pooled));
    return out;
}

std::size_t SlidePseudoLabels::count(int state) const {
    return static_cast<std::size_t>(std::count(tiles.begin(), tiles.end(), state));
}

SlidePseudoLabels pseudo_label_slide(const corpus::SlideRecord& slide, const ClassEmbeddings& embeddings) {
    if (slide.slide_label < 1 || static_cast<std::size_t>(slide.slide_label) >= embeddings.num_classes())
        throw InvalidInput("pseudo_label_slide: slide \"" + slide.slide_id + "\" has no subtype label");
    SlidePseudoLabels out;
    out.slide_label = slide.slide_label;
    const std::vector<int> preds = model::argmax_rows(model::cosine_scores(slide.features(), embeddings.matrix()));
    out.tiles.reserve(preds.size());
    for (int pred : preds) out.tiles.push_back(pred == 0 || pred == slide.slide_label ? pred : kUnlabeled);
    return out;
}

std::size_t count_conflicts(const SlidePseudoLabels& labels) {
    return static_cast<std::size_t>(std::count_if(labels.tiles.begin(), labels.tiles.end(), [&](int t) {
        return t != kUnlabeled && t != 0 && t != labels.slide_label;
    }));
}

int aggregate_wsi(const TileEvidence& evidence, ReadoutSpec spec, std::size_t num_classes) {
    const std::size_t m = evidence.labels.size();
    if (m == 0) throw InvalidInput("aggregate_wsi: no tiles");
    if (num_classes < 2) throw InvalidInput("aggregate_wsi: need at least one tumor class");
    const bool has_probs = !evidence.probabilities.empty();
    if (has_probs && (evidence.probabilities.rows() != m || evidence.probabilities.cols() != num_classes))
        throw InvalidInput("aggregate_wsi: probability matrix shape mismatch");
    for (int l : evidence.labels)
        if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw InvalidInput("aggregate_wsi: label out of range");

    std::vector<double> mean_prob(num_classes, 0.0);
    if (has_probs) {
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < num_classes; ++c) mean_prob[c] += evidence.probabilities(r, c);
        for (double& p : mean_prob) p /= double(m);
    }
    const auto fallback = [&] {
        std::size_t best = 1;
        for (std::size_t c = 2; c < num_classes; ++c)
            if (mean_prob[c] > mean_prob[best]) best = c;
        return static_cast<int>(best);
    };

    std::vector<std::size_t> counts(num_classes, 0);
    for (int l : evidence.labels) ++counts[l];
    const bool any_tumor = std::any_of(counts.begin() + 1, counts.end(), [](std::size_t n) { return n > 0; });

    switch (spec.kind) {
        case Readout::majority: {
            if (!any_tumor) return fallback();
            std::size_t best = 1;
            for (std::size_t c = 2; c < num_classes; ++c)
                if (counts[c] > counts[best]) best = c;
            return static_cast<int>(best);
        }
        case Readout::tumor_ratio: {
            if (!any_tumor) return fallback();
            std::size_t best = 1;
            for (std::size_t c = 2; c < num_classes; ++c) {
                // Equal counts give equal ratios; break by mean probability.
                if (counts[c] > counts[best] || (counts[c] == counts[best] && mean_prob[c] > mean_prob[best]))
                    best = c;
            }
            return static_cast<int>(best);
        }
        case Readout::topk: {
            if (!has_probs) throw InvalidInput("aggregate_wsi: top-k readout needs probabilities");
            if (spec.k == 0) throw InvalidInput("aggregate_wsi: k must be positive");
            const std::size_t k = std::min(spec.k, m);
            std::vector<double> column(m);
            std::size_t best = 1;
            double best_score = -1.0;
            for (std::size_t c = 1; c < num_classes; ++c) {
                for (std::size_t r = 0; r < m; ++r) column[r] = evidence.probabilities(r, c);
                std::partial_sort(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(k), column.end(),
                                  std::greater<>());
                const double score = std::accumulate(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / double(k);
                if (score > best_score) {
                    best_score = score;
                    best = c;
                }
            }
            return static_cast<int>(best);
        }
    }
    return fallback();
}

TileEvidence zero_shot_evidence(const corpus::SlideRecord& slide, const ClassEmbeddings& embeddings, double tau) {
    return evidence_from_unit(model::normalize_rows(slide.features()), embeddings.matrix(), tau);
}

}  // namespace pathpt::zeroshot
