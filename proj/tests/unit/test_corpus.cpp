#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <queue>
#include <unistd.h>

#include "json.hpp"
#include "pathpt/corpus/feature_store.hpp"
#include "pathpt/corpus/generator.hpp"
#include "pathpt/corpus/label_space.hpp"
#include "pathpt/error.hpp"
#include "pathpt/metrics/metrics.hpp"
#include "support/helpers.hpp"

using namespace pathpt;
using namespace pathpt::corpus;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("pathpt_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    return dir;
}

CorpusConfig small_config(std::uint64_t seed = 3) {
    CorpusConfig cfg;
    cfg.seed = seed;
    cfg.slides_per_class = 6;
    cfg.grid_h = 8;
    cfg.grid_w = 8;
    cfg.sigma_align = 0.5;
    cfg.sigma_tile = 0.5;
    return cfg;
}

TEST(LabelSpace, RejectsInvalidNames) {
    EXPECT_THROW(LabelSpace({"normal tissue"}), ConfigError);
    EXPECT_THROW(LabelSpace({"tumor", "normal tissue"}), ConfigError);
    EXPECT_THROW(LabelSpace({"normal tissue", "a", "a"}), ConfigError);
    EXPECT_THROW(LabelSpace({"normal tissue", ""}), ConfigError);
    LabelSpace ok({"normal tissue", "a", "b"});
    EXPECT_EQ(ok.num_subtypes(), 2u);
    EXPECT_TRUE(ok.is_subtype(2));
    EXPECT_FALSE(ok.is_subtype(0));
}

TEST(CorpusConfig, RejectsInvalidValues) {
    auto bad = [](auto mutate) {
        CorpusConfig cfg;
        mutate(cfg);
        EXPECT_THROW(cfg.validate(), ConfigError);
    };
    bad([](CorpusConfig& c) { c.feature_dim = 0; });
    bad([](CorpusConfig& c) { c.num_subtypes = 0; });
    bad([](CorpusConfig& c) { c.grid_h = 0; });
    bad([](CorpusConfig& c) { c.sigma_tile = -1; });
    bad([](CorpusConfig& c) { c.sigma_align = std::nan(""); });
    bad([](CorpusConfig& c) { c.tumor_fraction = 0.0; });
    bad([](CorpusConfig& c) { c.tumor_fraction = 1.5; });
    bad([](CorpusConfig& c) { c.slides_per_class = 0; });
}

TEST(Generator, SameConfigGivesIdenticalCorpus) {
    const auto a = generate_corpus(small_config());
    const auto b = generate_corpus(small_config());
    EXPECT_EQ(a.slides, b.slides);
    EXPECT_EQ(a.prototypes, b.prototypes);
    const auto c = generate_corpus(small_config(4));
    EXPECT_NE(a.slides, c.slides);
}

TEST(Generator, NoiseFreeTilesEqualPrototypes) {
    auto cfg = small_config();
    cfg.sigma_align = 0;
    cfg.sigma_tile = 0;
    const auto corpus = generate_corpus(cfg);
    for (const auto& s : corpus.slides)
        for (const auto& t : s.tiles)
            for (std::size_t j = 0; j < t.feature.size(); ++j)
                ASSERT_EQ(t.feature[j], static_cast<float>(corpus.prototypes(*t.gt_label, j)));
    EXPECT_EQ(nearest_prototype_accuracy(corpus), 1.0);
}

TEST(Generator, ReferenceCorpusHasBothPopulationsInEverySlide) {
    for (std::uint64_t seed : {1u, 7u, 19u}) {
        auto cfg = CorpusConfig::preset(BaseQuality::medium, seed);
        cfg.tumor_fraction = 0.5;
        const auto corpus = generate_corpus(cfg);
        ASSERT_EQ(corpus.slides.size(), 160u);
        for (const auto& s : corpus.slides) {
            EXPECT_NO_THROW(validate_slide(s, cfg.feature_dim, corpus.labels.size()));
            const auto tumor = std::count_if(s.tiles.begin(), s.tiles.end(),
                                             [&](const Tile& t) { return *t.gt_label == s.slide_label; });
            const auto normal = std::count_if(s.tiles.begin(), s.tiles.end(),
                                              [](const Tile& t) { return *t.gt_label == 0; });
            EXPECT_GE(tumor, 1) << s.slide_id;
            EXPECT_GE(normal, 1) << s.slide_id;
            EXPECT_EQ(tumor + normal, static_cast<long>(s.num_tiles()));
        }
    }
}

// Flood fill over 4-neighbours from one tumor cell must reach all of them.
TEST(Generator, TumorRegionIsFourConnected) {
    const auto corpus = generate_corpus(CorpusConfig::preset(BaseQuality::medium, 7));
    for (const auto& s : corpus.slides) {
        const auto mask = metrics::ground_truth_mask(s, s.slide_label);
        std::vector<std::uint8_t> seen(mask.cells.size(), 0);
        std::size_t start = std::find(mask.cells.begin(), mask.cells.end(), 1) - mask.cells.begin();
        ASSERT_LT(start, mask.cells.size());
        std::queue<std::size_t> q;
        q.push(start);
        seen[start] = 1;
        std::size_t reached = 0;
        while (!q.empty()) {
            const std::size_t i = q.front();
            q.pop();
            ++reached;
            const long r = static_cast<long>(i / mask.width), c = static_cast<long>(i % mask.width);
            const long dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                const long nr = r + dr[k], nc = c + dc[k];
                if (nr < 0 || nc < 0 || nr >= long(mask.height) || nc >= long(mask.width)) continue;
                const std::size_t j = std::size_t(nr) * mask.width + std::size_t(nc);
                if (mask.cells[j] && !seen[j]) {
                    seen[j] = 1;
                    q.push(j);
                }
            }
        }
        EXPECT_EQ(reached, mask.count()) << s.slide_id;
    }
}

TEST(Generator, SplitKeepsFifteenTrainSlidesPerClass) {
    const auto corpus = generate_corpus(CorpusConfig::preset(BaseQuality::medium, 7));
    std::map<int, int> train;
    for (const auto& s : corpus.slides) train[s.slide_label] += s.split == Split::train;
    for (auto [label, n] : train) EXPECT_EQ(n, 15) << label;
    EXPECT_EQ(train_count_for(40), 15u);
    EXPECT_EQ(train_count_for(30), 15u);
    EXPECT_EQ(train_count_for(10), 5u);
    EXPECT_EQ(train_count_for(3), 1u);
    EXPECT_EQ(train_count_for(1), 1u);
}

TEST(Generator, NearestPrototypeAccuracyDoesNotIncreaseWithTileScatter) {
    std::vector<double> medians;
    for (double sigma : {0.0, 0.3, 1.0}) {
        std::vector<double> acc;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            auto cfg = small_config(seed);
            cfg.sigma_tile = sigma;
            acc.push_back(nearest_prototype_accuracy(generate_corpus(cfg)));
        }
        medians.push_back(metrics::quartiles(acc).median);
    }
    EXPECT_GE(medians[0], medians[1]);
    EXPECT_GE(medians[1], medians[2]);
    EXPECT_EQ(medians[0], 1.0);
}

TEST(TextEncoder, OutputIsUnitNormAndDeterministic) {
    const auto corpus = generate_corpus(small_config());
    const auto& enc = corpus.encoder;
    const auto a = enc.encode_text("an image of normal tissue");
    const auto b = enc.encode_text("an image of normal tissue");
    EXPECT_EQ(a, b);
    double n = 0;
    for (double v : a) n += v * v;
    EXPECT_NEAR(n, 1.0, 1e-12);
    EXPECT_EQ(a.size(), enc.output_dim());
}

TEST(TextEncoder, ForwardIsDifferentiableInTheSequence) {
    const auto corpus = generate_corpus(small_config());
    const auto& enc = corpus.encoder;
    Parameter seq("seq", enc.embed_text("a photo of tumor tissue"));
    Rng rng(5);
    const Matrix r = pathpt::testing::random_matrix(1, enc.output_dim(), rng);
    auto loss = [&](ag::Tape& t) { return pathpt::testing::project_to_scalar(t, enc.forward(t, t.param(seq)), r); };
    auto res = pathpt::testing::check_gradients({&seq}, loss);
    EXPECT_LT(res.worst_rel, 1e-6) << res.worst_where;

    ag::Tape t;
    const Matrix& out = t.value(enc.forward(t, t.constant(seq.value)));
    const auto direct = enc.encode(seq.value);
    for (std::size_t j = 0; j < direct.size(); ++j) EXPECT_NEAR(out(0, j), direct[j], 1e-14);
}

TEST(FeatureStore, EmptyStoreRoundTrips) {
    const auto dir = fresh_dir("empty");
    FeatureStore store{LabelSpace::synthetic(2), 8, {}, std::nullopt, ""};
    write_feature_store(store, dir);
    std::size_t files = std::distance(fs::directory_iterator(dir), fs::directory_iterator{});
    EXPECT_EQ(files, 1u);
    EXPECT_TRUE(fs::exists(dir / "manifest.json"));
    const auto back = read_feature_store(dir);
    EXPECT_TRUE(back.slides.empty());
    EXPECT_EQ(back.labels, store.labels);
    fs::remove_all(dir);
}

TEST(FeatureStore, SingleTileRoundTrips) {
    const auto dir = fresh_dir("single");
    SlideRecord s;
    s.slide_id = "one";
    s.grid_h = 1;
    s.grid_w = 1;
    s.slide_label = 1;
    s.split = Split::test;
    s.tiles.push_back(Tile{0, 0, {0.5f, -1.25f, 3.0f, 1e-7f}, std::nullopt});
    FeatureStore store{LabelSpace::synthetic(1), 4, {s}, EncoderInfo{9, 16}, "poor"};
    write_feature_store(store, dir);
    const auto back = read_feature_store(dir);
    ASSERT_EQ(back.slides.size(), 1u);
    EXPECT_EQ(back.slides[0], s);
    EXPECT_EQ(back.encoder, store.encoder);
    EXPECT_EQ(back.base_quality, "poor");
    fs::remove_all(dir);
}

TEST(FeatureStore, GeneratedCorpusRoundTripsFieldwise) {
    const auto dir = fresh_dir("corpus");
    auto corpus = generate_corpus(CorpusConfig::preset(BaseQuality::medium, 7));
    FeatureStore store{corpus.labels, 64, corpus.slides, EncoderInfo{7, 32}, "medium"};
    write_feature_store(store, dir);
    const auto back = read_feature_store(dir);
    ASSERT_EQ(back.slides.size(), store.slides.size());
    for (std::size_t i = 0; i < back.slides.size(); ++i) {
        const auto& a = store.slides[i];
        const auto& b = back.slides[i];
        EXPECT_EQ(a.slide_id, b.slide_id);
        EXPECT_EQ(a.split, b.split);
        EXPECT_EQ(a.slide_label, b.slide_label);
        ASSERT_EQ(a.tiles.size(), b.tiles.size());
        for (std::size_t m = 0; m < a.tiles.size(); ++m) ASSERT_EQ(a.tiles[m], b.tiles[m]) << a.slide_id;
    }
    fs::remove_all(dir);
}

TEST(FeatureStore, SlideFileCodecRejectsCorruption) {
    Rng rng(1);
    auto s = pathpt::testing::random_slide(2, 2, 4, rng);
    auto bytes = encode_slide_file(s, 4);
    SlideRecord back;
    back.slide_id = s.slide_id;
    back.grid_h = 2;
    back.grid_w = 2;
    decode_slide_file(bytes, back, 4);
    EXPECT_EQ(back.tiles, s.tiles);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(decode_slide_file(bad_magic, back, 4), LoadError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    EXPECT_THROW(decode_slide_file(truncated, back, 4), LoadError);
    EXPECT_THROW(decode_slide_file(bytes, back, 8), LoadError);  // dimension mismatch
}

TEST(FeatureStore, LoadErrorsNameTheSlide) {
    const auto dir = fresh_dir("corrupt");
    Rng rng(2);
    auto s = pathpt::testing::random_slide(2, 2, 4, rng);
    s.slide_id = "culprit";
    s.tiles[1].row = s.tiles[0].row;  // duplicate coordinate
    s.tiles[1].col = s.tiles[0].col;
    FeatureStore store{LabelSpace::synthetic(1), 4, {}, std::nullopt, ""};
    write_feature_store(store, dir);
    // Write the slide file and manifest entry by hand to bypass writer validation.
    const auto bytes = encode_slide_file(s, 4);
    std::ofstream(dir / "culprit.npyish", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                                 static_cast<std::streamsize>(bytes.size()));
    auto manifest = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
    manifest["slides"].push_back({{"id", "culprit"},
                                  {"file", "culprit.npyish"},
                                  {"grid_h", 2},
                                  {"grid_w", 2},
                                  {"slide_label", 1},
                                  {"split", "train"},
                                  {"num_tiles", 4}});
    std::ofstream(dir / "manifest.json") << manifest.dump();
    try {
        read_feature_store(dir);
        FAIL() << "expected LoadError";
    } catch (const LoadError& e) {
        EXPECT_NE(std::string(e.what()).find("culprit"), std::string::npos) << e.what();
    }
    fs::remove_all(dir);
}

TEST(FeatureStore, WriterRejectsInvalidSlides) {
    const auto dir = fresh_dir("invalid");
    Rng rng(3);
    auto s = pathpt::testing::random_slide(2, 2, 4, rng);
    s.tiles[0].row = 5;
    FeatureStore store{LabelSpace::synthetic(1), 4, {s}, std::nullopt, ""};
    EXPECT_ANY_THROW(write_feature_store(store, dir));
    fs::remove_all(dir);
}

}  // namespace
