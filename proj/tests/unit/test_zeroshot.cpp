#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "pathpt/corpus/generator.hpp"
#include "pathpt/error.hpp"
#include "pathpt/metrics/metrics.hpp"
#include "pathpt/zeroshot/templates.hpp"
#include "pathpt/zeroshot/zeroshot.hpp"
#include "support/helpers.hpp"

using namespace pathpt;
using namespace pathpt::zeroshot;
using pathpt::testing::random_matrix;

namespace {

ClassEmbeddings random_embeddings(std::size_t classes, std::size_t d, Rng& rng) {
    return ClassEmbeddings::normalized(random_matrix(classes, d, rng));
}

int brute_force_classify(std::span<const double> v, const Matrix& e) {
    double vn = 0;
    for (double x : v) vn += x * x;
    int best = -1;
    double best_cos = -2;
    for (std::size_t c = 0; c < e.rows(); ++c) {
        double dot = 0, en = 0;
        for (std::size_t j = 0; j < v.size(); ++j) {
            dot += v[j] * e(c, j);
            en += e(c, j) * e(c, j);
        }
        const double cos = dot / std::sqrt(vn * en);
        if (cos > best_cos + 1e-15) {
            best_cos = cos;
            best = static_cast<int>(c);
        }
    }
    return best;
}

corpus::GeneratedCorpus noise_free(std::size_t per_class = 8) {
    corpus::CorpusConfig cfg;
    cfg.slides_per_class = per_class;
    cfg.grid_h = cfg.grid_w = 6;
    return corpus::generate_corpus(cfg);
}

TEST(Templates, PlaceholderMustAppearExactlyOnce) {
    EXPECT_THROW(PromptTemplate("no slot"), ConfigError);
    EXPECT_THROW(PromptTemplate("{category} and {category}"), ConfigError);
    PromptTemplate t("An image showing {category}.");
    EXPECT_EQ(t.instantiate("glioma"), "An image showing glioma.");
}

TEST(Templates, RegistryRoundTripsThroughTextFile) {
    const auto path = std::filesystem::temp_directory_path() / ("templates_" + std::to_string(::getpid()) + ".txt");
    const auto& reg = default_templates();
    EXPECT_GE(reg.size(), 10u);
    save_templates(reg, path);
    EXPECT_EQ(load_templates(path), reg);
    {
        std::ofstream out(path);
        out << "# comment\n\nA photo of {category}\n  \n";
    }
    const auto loaded = load_templates(path);
    ASSERT_EQ(loaded.size(), 1u);
    EXPECT_EQ(loaded[0].text(), "A photo of {category}");
    std::filesystem::remove(path);
}

TEST(ClassifyTile, IdentityAndTieCases) {
    ClassEmbeddings e(Matrix(2, 2, {1, 0, 0, 1}));
    const double v[] = {1, 0};
    EXPECT_EQ(classify_tile(v, e), 0);
    const double tie[] = {1, 1};
    EXPECT_EQ(classify_tile(tie, e), 0);
    const double zero[] = {0, 0};
    EXPECT_THROW(classify_tile(zero, e), InvalidInput);
}

TEST(ClassifyTile, MatchesBruteForceAndIsScaleInvariant) {
    Rng rng(21);
    const auto e = random_embeddings(5, 12, rng);
    for (int i = 0; i < 100; ++i) {
        const auto v = random_matrix(1, 12, rng);
        const int got = classify_tile(v.row(0), e);
        EXPECT_EQ(got, brute_force_classify(v.row(0), e.matrix()));
        Matrix scaled = v;
        for (double& x : scaled.flat()) x *= 0.003 + i;
        EXPECT_EQ(classify_tile(scaled.row(0), e), got);
    }
}

TEST(ClassEmbeddings, RejectsNonUnitRows) {
    EXPECT_THROW(ClassEmbeddings(Matrix(1, 2, {1, 1})), InvalidInput);
    EXPECT_NO_THROW(ClassEmbeddings(Matrix(1, 2, {0.6, 0.8})));
}

TEST(PromptGroups, SingleTemplateForcesIdenticalGroups) {
    const std::vector<PromptTemplate> one{PromptTemplate("slide of {category}")};
    const auto labels = corpus::LabelSpace::synthetic(3);
    const auto groups = build_prompt_groups(one, labels, 3, 5);
    ASSERT_EQ(groups.size(), 3u);
    EXPECT_EQ(groups[0].prompts, groups[1].prompts);
    EXPECT_EQ(groups[1].prompts, groups[2].prompts);
    EXPECT_THROW(build_prompt_groups(std::vector<PromptTemplate>{}, labels, 3, 5), ConfigError);
}

TEST(PromptGroups, CoverEveryClassAndAreDeterministic) {
    const auto labels = corpus::LabelSpace::synthetic(4);
    const auto a = build_prompt_groups(default_templates(), labels, 200, 9);
    const auto b = build_prompt_groups(default_templates(), labels, 200, 9);
    ASSERT_EQ(a.size(), 200u);
    std::set<std::vector<std::string>> distinct;
    for (std::size_t g = 0; g < a.size(); ++g) {
        EXPECT_EQ(a[g].prompts, b[g].prompts);
        ASSERT_EQ(a[g].prompts.size(), labels.size());
        for (std::size_t c = 0; c < labels.size(); ++c)
            EXPECT_EQ(a[g].prompts[c], default_templates()[a[g].template_index[c]].instantiate(labels.name(c)));
        distinct.insert(a[g].prompts);
    }
    EXPECT_GT(distinct.size(), 100u);
}

TEST(RankAndPool, SingleGroupGivesItsOwnEmbeddings) {
    const auto corpus = noise_free(4);
    const auto groups = build_prompt_groups(default_templates(), corpus.labels, 1, 3);
    std::vector<corpus::SlideRecord> train(corpus.slides.begin(), corpus.slides.begin() + 4);
    const auto ranked = rank_and_pool(groups, train, corpus.encoder, corpus.labels.size(), 1);
    const auto single = encode_group(groups[0], corpus.encoder);
    EXPECT_LT(pathpt::testing::max_abs_diff(ranked.pooled.matrix(), single.matrix()), 1e-14);
    EXPECT_THROW(rank_and_pool(groups, train, corpus.encoder, corpus.labels.size(), 2), ConfigError);
}

TEST(RankAndPool, IdenticalGroupsPoolToTheSameEmbeddings) {
    const auto corpus = noise_free(4);
    auto groups = build_prompt_groups(default_templates(), corpus.labels, 1, 3);
    groups = {groups[0], groups[0], groups[0]};
    const auto ranked = rank_and_pool(groups, corpus.slides, corpus.encoder, corpus.labels.size(), 3);
    const auto single = encode_group(groups[0], corpus.encoder);
    EXPECT_LT(pathpt::testing::max_abs_diff(ranked.pooled.matrix(), single.matrix()), 1e-14);
    for (std::size_t c = 0; c < ranked.pooled.num_classes(); ++c) {
        double n = 0;
        for (double v : ranked.pooled.matrix().row(c)) n += v * v;
        EXPECT_NEAR(n, 1.0, 1e-12);
    }
}

TEST(RankAndPool, CanonicalGroupBeatsShuffledNames) {
    const auto corpus = noise_free(6);
    const auto& canonical = default_templates().front();
    PromptGroup good, shuffled;
    const std::size_t n = corpus.labels.size();
    for (std::size_t c = 0; c < n; ++c) {
        good.template_index.push_back(0);
        good.prompts.push_back(canonical.instantiate(corpus.labels.name(c)));
        shuffled.template_index.push_back(0);
        // Rotate tumor names so every subtype prompt describes another class.
        const std::size_t other = c == 0 ? 0 : 1 + c % (n - 1);
        shuffled.prompts.push_back(canonical.instantiate(corpus.labels.name(other)));
    }
    std::vector<PromptGroup> groups{shuffled, good};
    const auto ranked = rank_and_pool(groups, corpus.slides, corpus.encoder, n, 1);
    EXPECT_EQ(ranked.best_group(), 1u);
    EXPECT_EQ(ranked.scores[1], 1.0);
    EXPECT_LT(ranked.scores[0], 1.0);

    // Oracle: evaluate each group directly.
    for (std::size_t g = 0; g < 2; ++g) {
        const auto e = encode_group(groups[g], corpus.encoder);
        std::vector<int> preds, truth;
        for (const auto& s : corpus.slides) {
            preds.push_back(aggregate_wsi(zero_shot_evidence(s, e), {Readout::tumor_ratio, 1}, n));
            truth.push_back(s.slide_label);
        }
        EXPECT_DOUBLE_EQ(ranked.scores[g], metrics::balanced_accuracy(preds, truth, n - 1));
    }
}

TEST(ZeroShot, NoiseFreeCorpusIsClassifiedPerfectly) {
    const auto corpus = noise_free(5);
    const std::vector<PromptTemplate> canonical{default_templates().front()};
    const auto groups = build_prompt_groups(canonical, corpus.labels, 1, 0);
    const auto e = encode_group(groups[0], corpus.encoder);
    for (const auto& s : corpus.slides) {
        const auto ev = zero_shot_evidence(s, e);
        for (std::size_t m = 0; m < s.num_tiles(); ++m) ASSERT_EQ(ev.labels[m], *s.tiles[m].gt_label);
        EXPECT_EQ(aggregate_wsi(ev, {Readout::tumor_ratio, 1}, corpus.labels.size()), s.slide_label);
    }
}

TEST(PseudoLabels, KeepsNormalAndOwnSubtypeOnly) {
    // Three tiles aligned with classes 0, 1, 2 of an orthonormal embedding.
    ClassEmbeddings e(Matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    corpus::SlideRecord s;
    s.slide_id = "x";
    s.grid_h = 1;
    s.grid_w = 3;
    s.slide_label = 1;
    s.tiles = {{0, 0, {1, 0, 0}, {}}, {0, 1, {0, 1, 0}, {}}, {0, 2, {0, 0, 1}, {}}};
    const auto p = pseudo_label_slide(s, e);
    EXPECT_EQ(p.tiles, (std::vector<int>{0, 1, kUnlabeled}));
    EXPECT_EQ(p.count(kUnlabeled), 1u);
    EXPECT_EQ(count_conflicts(p), 0u);

    s.tiles = {{0, 0, {0, 1, 0}, {}}, {0, 1, {0, 2, 0}, {}}, {0, 2, {0.1, 1, 0}, {}}};
    EXPECT_EQ(pseudo_label_slide(s, e).tiles, (std::vector<int>{1, 1, 1}));
}

TEST(PseudoLabels, MatchFilteredBruteForceOnRandomSlides) {
    Rng rng(31);
    for (int trial = 0; trial < 30; ++trial) {
        const auto e = random_embeddings(4, 6, rng);
        const int label = 1 + static_cast<int>(uniform_index(rng, 3));
        const auto s = pathpt::testing::random_slide(4, 5, 6, rng, label, trial % 2 == 1);
        const auto p = pseudo_label_slide(s, e);
        ASSERT_EQ(p.tiles.size(), s.num_tiles());
        for (std::size_t m = 0; m < s.num_tiles(); ++m) {
            std::vector<double> v(s.tiles[m].feature.begin(), s.tiles[m].feature.end());
            const int pred = brute_force_classify(v, e.matrix());
            const int expect = (pred == 0 || pred == label) ? pred : kUnlabeled;
            EXPECT_EQ(p.tiles[m], expect);
        }
        EXPECT_EQ(count_conflicts(p), 0u);
    }
}

TEST(Aggregate, WorkedExamples) {
    TileEvidence ev;
    ev.labels = {0, 0, 0, 0, 0, 0, 1, 1, 1, 2};
    EXPECT_EQ(aggregate_wsi(ev, {Readout::tumor_ratio, 1}, 3), 1);
    EXPECT_EQ(aggregate_wsi(ev, {Readout::majority, 1}, 3), 1);

    TileEvidence top;
    top.labels = {0, 0, 0};
    top.probabilities = Matrix(3, 3, {0.5, 0.3, 0.2, 0.1, 0.1, 0.8, 0.6, 0.35, 0.05});
    EXPECT_EQ(aggregate_wsi(top, {Readout::topk, 1}, 3), 2);
    // No tumor tile predicted: falls back to the best mean tumor probability.
    EXPECT_EQ(aggregate_wsi(top, {Readout::tumor_ratio, 1}, 3), 2);
    EXPECT_THROW(aggregate_wsi(TileEvidence{}, {Readout::tumor_ratio, 1}, 3), InvalidInput);
}

int oracle_aggregate(const TileEvidence& ev, ReadoutSpec spec, std::size_t n) {
    const std::size_t m = ev.labels.size();
    std::vector<double> mean(n, 0.0);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) mean[c] += ev.probabilities(r, c) / double(m);
    // Candidate list sorted by the readout's ordering; the first entry wins.
    std::vector<int> classes;
    for (std::size_t c = 1; c < n; ++c) classes.push_back(static_cast<int>(c));
    auto count = [&](int c) { return std::count(ev.labels.begin(), ev.labels.end(), c); };
    long tumor_tiles = 0;
    for (int c : classes) tumor_tiles += count(c);
    if (spec.kind == Readout::topk) {
        auto score = [&](int c) {
            std::vector<double> col;
            for (std::size_t r = 0; r < m; ++r) col.push_back(ev.probabilities(r, c));
            std::sort(col.rbegin(), col.rend());
            double s = 0;
            for (std::size_t i = 0; i < std::min(spec.k, m); ++i) s += col[i];
            return s;
        };
        std::stable_sort(classes.begin(), classes.end(), [&](int a, int b) { return score(a) > score(b); });
        return classes.front();
    }
    if (tumor_tiles == 0) {
        std::stable_sort(classes.begin(), classes.end(), [&](int a, int b) { return mean[a] > mean[b]; });
        return classes.front();
    }
    std::stable_sort(classes.begin(), classes.end(), [&](int a, int b) {
        if (count(a) != count(b)) return count(a) > count(b);
        return spec.kind == Readout::tumor_ratio && mean[a] > mean[b];
    });
    return classes.front();
}

TEST(Aggregate, MatchesRecountOracleOnRandomSlides) {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + uniform_index(rng, 4);
        const std::size_t m = 1 + uniform_index(rng, 30);
        TileEvidence ev;
        ev.probabilities = Matrix(m, n);
        for (std::size_t r = 0; r < m; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < n; ++c) s += ev.probabilities(r, c) = std::exp(standard_normal(rng));
            for (std::size_t c = 0; c < n; ++c) ev.probabilities(r, c) /= s;
            // Coarse labels so count ties are common.
            ev.labels.push_back(static_cast<int>(uniform_index(rng, std::min<std::size_t>(n, 3))));
        }
        for (ReadoutSpec spec : {ReadoutSpec{Readout::majority, 1}, ReadoutSpec{Readout::tumor_ratio, 1},
                                 ReadoutSpec{Readout::topk, 1 + uniform_index(rng, 5)}}) {
            const int got = aggregate_wsi(ev, spec, n);
            EXPECT_GE(got, 1);
            EXPECT_EQ(got, oracle_aggregate(ev, spec, n)) << "trial " << trial;
        }
    }
}

}  // namespace
