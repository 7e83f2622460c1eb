#include "pathpt/corpus/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "pathpt/error.hpp"
#include "pathpt/random.hpp"
#include "pathpt/simd/kernels.hpp"
#include "pathpt/zeroshot/templates.hpp"

namespace pathpt::corpus {

std::string_view to_string(BaseQuality q) {
    switch (q) {
        case BaseQuality::good: return "good";
        case BaseQuality::medium: return "medium";
        case BaseQuality::poor: return "poor";
    }
    return "medium";
}

BaseQuality parse_base_quality(std::string_view s) {
    if (s == "good") return BaseQuality::good;
    if (s == "medium") return BaseQuality::medium;
    if (s == "poor") return BaseQuality::poor;
    throw ConfigError("unknown base quality preset \"" + std::string(s) + "\"");
}

void CorpusConfig::validate() const {
    if (feature_dim == 0 || token_dim == 0) throw ConfigError("corpus: dimensions must be positive");
    if (num_subtypes == 0) throw ConfigError("corpus: need at least one subtype");
    if (slides_per_class == 0) throw ConfigError("corpus: slides_per_class must be positive");
    if (grid_h == 0 || grid_w == 0) throw ConfigError("corpus: grid dimensions must be positive");
    if (!std::isfinite(sigma_align) || sigma_align < 0.0) throw ConfigError("corpus: sigma_align must be finite and >= 0");
    if (!std::isfinite(sigma_tile) || sigma_tile < 0.0) throw ConfigError("corpus: sigma_tile must be finite and >= 0");
    if (!(tumor_fraction > 0.0 && tumor_fraction <= 1.0)) throw ConfigError("corpus: tumor_fraction must be in (0, 1]");
}

CorpusConfig CorpusConfig::preset(BaseQuality quality, std::uint64_t seed) {
    CorpusConfig cfg;
    cfg.seed = seed;
    switch (quality) {
        case BaseQuality::good:
            cfg.sigma_align = 1.5;
            cfg.sigma_tile = 1.0;
            break;
        case BaseQuality::medium:
            cfg.sigma_align = 3.0;
            cfg.sigma_tile = 2.0;
            break;
        case BaseQuality::poor:
            cfg.sigma_align = 5.0;
            cfg.sigma_tile = 3.0;
            break;
    }
    return cfg;
}

std::size_t train_count_for(std::size_t n) {
    if (n >= 30) return 15;
    return std::max<std::size_t>(1, n / 2);
}

FrozenTextEncoder make_encoder(const LabelSpace& labels, std::uint64_t seed, std::size_t token_dim,
                               std::size_t feature_dim) {
    return FrozenTextEncoder(TextEncoderConfig{derive_seed(seed, "text-encoder"), token_dim, feature_dim},
                             default_vocabulary(labels.names()));
}

namespace {

void normalize(std::span<double> v) {
    const double n = std::sqrt(simd::dot(v, v));
    for (double& x : v) x /= n;
}

// Contiguous 4-connected region of `target` cells grown by a random walk.
std::vector<bool> random_walk_blob(Rng& rng, std::uint32_t h, std::uint32_t w, std::size_t target) {
    std::vector<bool> in(std::size_t(h) * w, false);
    std::uint32_t r = static_cast<std::uint32_t>(uniform_index(rng, h));
    std::uint32_t c = static_cast<std::uint32_t>(uniform_index(rng, w));
    in[std::size_t(r) * w + c] = true;
    std::size_t count = 1;
    constexpr int dr[4] = {-1, 1, 0, 0};
    constexpr int dc[4] = {0, 0, -1, 1};
    while (count < target) {
        const std::size_t dir = uniform_index(rng, 4);
        const long nr = long(r) + dr[dir];
        const long nc = long(c) + dc[dir];
        if (nr < 0 || nc < 0 || nr >= long(h) || nc >= long(w)) continue;
        r = static_cast<std::uint32_t>(nr);
        c = static_cast<std::uint32_t>(nc);
        const std::size_t idx = std::size_t(r) * w + c;
        if (!in[idx]) {
            in[idx] = true;
            ++count;
        }
    }
    return in;
}

std::vector<float> sample_feature(Rng& rng, std::span<const double> center, double sigma) {
    const std::size_t d = center.size();
    std::vector<double> v(center.begin(), center.end());
    if (sigma > 0.0) {
        const double s = sigma / std::sqrt(static_cast<double>(d));
        for (double& x : v) x += s * standard_normal(rng);
        normalize(v);
    }
    return {v.begin(), v.end()};
}

}  // namespace

GeneratedCorpus generate_corpus(const CorpusConfig& cfg) {
    cfg.validate();
    LabelSpace labels = LabelSpace::synthetic(cfg.num_subtypes);
    FrozenTextEncoder encoder = make_encoder(labels, cfg.seed, cfg.token_dim, cfg.feature_dim);

    const std::size_t num_classes = labels.size();
    const std::size_t d = cfg.feature_dim;
    const auto& canonical = zeroshot::default_templates().front();

    Matrix prototypes(num_classes, d);
    Rng proto_rng(derive_seed(cfg.seed, "prototypes"));
    for (std::size_t c = 0; c < num_classes; ++c) {
        const std::vector<double> text = encoder.encode_text(canonical.instantiate(labels.name(c)));
        auto row = prototypes.row(c);
        const double s = cfg.sigma_align / std::sqrt(static_cast<double>(d));
        for (std::size_t j = 0; j < d; ++j) row[j] = text[j] + s * standard_normal(proto_rng);
        normalize(row);
    }

    const std::size_t cells = std::size_t(cfg.grid_h) * cfg.grid_w;
    std::size_t tumor_cells = cells;
    if (cfg.tumor_fraction < 1.0 && cells > 1) {
        tumor_cells = static_cast<std::size_t>(std::lround(cfg.tumor_fraction * double(cells)));
        tumor_cells = std::clamp<std::size_t>(tumor_cells, 1, cells - 1);
    }

    std::vector<SlideRecord> slides;
    slides.reserve(cfg.num_subtypes * cfg.slides_per_class);
    for (int label = 1; label <= static_cast<int>(cfg.num_subtypes); ++label) {
        Rng split_rng(derive_seed(cfg.seed, "split/" + std::to_string(label)));
        std::vector<std::size_t> order(cfg.slides_per_class);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), split_rng);
        const std::size_t n_train = train_count_for(cfg.slides_per_class);
        std::vector<bool> is_train(cfg.slides_per_class, false);
        for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;

        for (std::size_t s = 0; s < cfg.slides_per_class; ++s) {
            char id[64];
            std::snprintf(id, sizeof id, "syn-c%d-%03zu", label, s);
            Rng rng(derive_seed(cfg.seed, std::string("slide/") + id));
            SlideRecord slide;
            slide.slide_id = id;
            slide.grid_h = cfg.grid_h;
            slide.grid_w = cfg.grid_w;
            slide.slide_label = label;
            slide.split = is_train[s] ? Split::train : Split::test;
            const std::vector<bool> tumor = random_walk_blob(rng, cfg.grid_h, cfg.grid_w, tumor_cells);
            slide.tiles.reserve(cells);
            for (std::uint32_t r = 0; r < cfg.grid_h; ++r) {
                for (std::uint32_t c = 0; c < cfg.grid_w; ++c) {
                    const bool is_tumor = tumor[std::size_t(r) * cfg.grid_w + c];
                    const int cls = is_tumor ? label : 0;
                    slide.tiles.push_back(Tile{r, c, sample_feature(rng, prototypes.row(cls), cfg.sigma_tile), cls});
                }
            }
            slides.push_back(std::move(slide));
        }
    }
    return GeneratedCorpus{std::move(labels), std::move(encoder), std::move(slides), std::move(prototypes)};
}

double nearest_prototype_accuracy(const GeneratedCorpus& corpus) {
    std::size_t correct = 0;
    std::size_t total = 0;
    const std::size_t d = corpus.prototypes.cols();
    std::vector<double> v(d);
    for (const auto& slide : corpus.slides) {
        for (const auto& tile : slide.tiles) {
            if (!tile.gt_label) continue;
            std::copy(tile.feature.begin(), tile.feature.end(), v.begin());
            std::size_t best = 0;
            double best_score = -2.0;
            for (std::size_t c = 0; c < corpus.prototypes.rows(); ++c) {
                const double score = simd::dot(v, corpus.prototypes.row(c));
                if (score > best_score) {
                    best_score = score;
                    best = c;
                }
            }
            correct += static_cast<int>(best) == *tile.gt_label;
            ++total;
        }
    }
    return total == 0 ? 0.0 : double(correct) / double(total);
}

}  // namespace pathpt::corpus
