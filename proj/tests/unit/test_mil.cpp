#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "pathpt/corpus/generator.hpp"
#include "pathpt/error.hpp"
#include "pathpt/mil/mil.hpp"
#include "pathpt/training/losses.hpp"
#include "support/helpers.hpp"

using namespace pathpt;
using namespace pathpt::mil;
using pathpt::testing::random_slide;

namespace {

// Direct evaluation of gated attention pooling with plain loops.
struct OracleOut {
    std::vector<double> attention, logits;
};

OracleOut oracle_forward(const corpus::SlideRecord& s, const MILModel& m) {
    const std::size_t M = s.num_tiles(), d = m.dim, H = m.hidden, C = m.num_subtypes;
    std::vector<double> scores(M);
    for (std::size_t t = 0; t < M; ++t) {
        double score = 0;
        for (std::size_t h = 0; h < H; ++h) {
            double a = m.attn_v_bias.value(0, h), b = m.attn_u_bias.value(0, h);
            for (std::size_t j = 0; j < d; ++j) {
                a += s.tiles[t].feature[j] * m.attn_v.value(j, h);
                b += s.tiles[t].feature[j] * m.attn_u.value(j, h);
            }
            score += std::tanh(a) / (1.0 + std::exp(-b)) * m.attn_w.value(h, 0);
        }
        scores[t] = score;
    }
    const double top = *std::max_element(scores.begin(), scores.end());
    double z = 0;
    OracleOut out;
    for (double v : scores) z += std::exp(v - top);
    for (double v : scores) out.attention.push_back(std::exp(v - top) / z);
    std::vector<double> pooled(d, 0.0);
    for (std::size_t t = 0; t < M; ++t)
        for (std::size_t j = 0; j < d; ++j) pooled[j] += out.attention[t] * s.tiles[t].feature[j];
    for (std::size_t c = 0; c < C; ++c) {
        double v = m.classifier_bias.value(0, c);
        for (std::size_t j = 0; j < d; ++j) v += pooled[j] * m.classifier.value(j, c);
        out.logits.push_back(v);
    }
    return out;
}

void randomize_biases(MILModel& m, Rng& rng) {
    for (auto* p : m.parameters())
        if (p->name.find("bias") != std::string::npos) p->value = pathpt::testing::random_matrix(1, p->value.cols(), rng, 0.5);
}

TEST(MilVariant, ParsesNames) {
    EXPECT_EQ(parse_mil_variant("abmil"), MilVariant::abmil_gated);
    EXPECT_EQ(parse_mil_variant("abmil_gated"), MilVariant::abmil_gated);
    EXPECT_EQ(parse_mil_variant("mean_pool"), MilVariant::mean_pool);
    EXPECT_THROW(parse_mil_variant("transmil"), ConfigError);
    EXPECT_EQ(to_string(MilVariant::mean_pool), "mean_pool");
}

TEST(MilForward, GatedMatchesLoopOracle) {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto slide = random_slide(3 + uniform_index(rng, 4), 3, 12, rng, 1, trial % 2 == 1);
        auto m = MILModel::init(MilVariant::abmil_gated, 12, 3, 100 + trial, 16);
        randomize_biases(m, rng);
        const auto out = mil_forward(slide, m);
        const auto ref = oracle_forward(slide, m);
        double sum = 0;
        for (std::size_t t = 0; t < ref.attention.size(); ++t) {
            EXPECT_NEAR(out.attention[t], ref.attention[t], 1e-9);
            sum += out.attention[t];
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.logits[c], ref.logits[c], 1e-9);
        const auto best = std::max_element(out.logits.begin(), out.logits.end()) - out.logits.begin();
        EXPECT_EQ(out.prediction, int(best) + 1);
    }
}

TEST(MilForward, SingleTileGetsAllAttention) {
    Rng rng(2);
    const auto slide = random_slide(1, 1, 8, rng);
    const auto m = MILModel::init(MilVariant::abmil_gated, 8, 2, 3, 4);
    const auto out = mil_forward(slide, m);
    ASSERT_EQ(out.attention.size(), 1u);
    EXPECT_EQ(out.attention[0], 1.0);
}

TEST(MilForward, MeanPoolUsesTheFeatureMean) {
    Rng rng(3);
    const auto slide = random_slide(4, 5, 6, rng);
    const auto m = MILModel::init(MilVariant::mean_pool, 6, 3, 4);
    const auto out = mil_forward(slide, m);
    std::vector<double> mean(6, 0.0);
    for (const auto& t : slide.tiles)
        for (std::size_t j = 0; j < 6; ++j) mean[j] += t.feature[j] / 20.0;
    for (double a : out.attention) EXPECT_NEAR(a, 1.0 / 20, 1e-15);
    for (std::size_t c = 0; c < 3; ++c) {
        double v = m.classifier_bias.value(0, c);
        for (std::size_t j = 0; j < 6; ++j) v += mean[j] * m.classifier.value(j, c);
        EXPECT_NEAR(out.logits[c], v, 1e-12);
    }
    EXPECT_EQ(m.parameters().size(), 2u);
}

TEST(MilForward, RejectsEmptyAndMismatchedSlides) {
    Rng rng(4);
    const auto m = MILModel::init(MilVariant::abmil_gated, 8, 2, 1, 4);
    corpus::SlideRecord empty;
    empty.slide_id = "empty";
    EXPECT_THROW(mil_forward(empty, m), InvalidInput);
    EXPECT_THROW(mil_forward(random_slide(2, 2, 5, rng), m), InvalidInput);
    EXPECT_THROW(MILModel::init(MilVariant::abmil_gated, 8, 2, 1, 0), ConfigError);
}

TEST(MilForward, TapeAndConstPathsAgree) {
    Rng rng(5);
    const auto slide = random_slide(3, 4, 8, rng);
    auto m = MILModel::init(MilVariant::abmil_gated, 8, 3, 6, 8);
    ag::Tape t;
    const auto pass = mil_forward(t, slide, m);
    const auto out = mil_forward(slide, m);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(t.value(pass.logits)(0, c), out.logits[c]);
}

TEST(MilForward, GradientsMatchFiniteDifferences) {
    Rng rng(6);
    const auto slide = random_slide(3, 3, 8, rng, 2);
    for (auto variant : {MilVariant::abmil_gated, MilVariant::mean_pool}) {
        auto m = MILModel::init(variant, 8, 3, 7, 6);
        randomize_biases(m, rng);
        const std::vector<int> target{1};
        auto loss = [&](ag::Tape& t) {
            const auto pass = mil_forward(t, slide, m);
            return training::balanced_ce_from_logits(t, pass.logits, target);
        };
        const auto res = pathpt::testing::check_gradients(m.parameters(), loss);
        EXPECT_LT(res.worst_rel, 1e-5) << to_string(variant) << " " << res.worst_where;
        EXPECT_GT(res.checked, 0u);
    }
}

constexpr std::size_t kSubtypes = 3;

std::vector<corpus::SlideRecord> ten_shot_train(double sigma_tile, std::uint64_t seed) {
    auto cfg = corpus::CorpusConfig::preset(corpus::BaseQuality::medium, seed);
    cfg.sigma_tile = sigma_tile;
    cfg.grid_h = cfg.grid_w = 6;
    cfg.num_subtypes = kSubtypes;
    auto corpus = corpus::generate_corpus(cfg);
    const auto split = training::sample_few_shot(corpus.slides, cfg.num_subtypes, 10, seed);
    std::vector<corpus::SlideRecord> out;
    for (auto i : split.train_flat()) out.push_back(corpus.slides[i]);
    return out;
}

training::TrainConfig mil_config(std::uint64_t seed) {
    training::TrainConfig cfg;
    cfg.k_shot = 10;
    cfg.enable_pseudo = false;
    cfg.lr = kDefaultLr;
    cfg.seed = seed;
    return cfg;
}

std::vector<Matrix> snapshot(const MILModel& m) {
    std::vector<Matrix> out;
    for (const auto* p : m.parameters()) out.push_back(p->value);
    return out;
}

TEST(MilTrain, ZeroEpochsLeavesParametersUnchanged) {
    const auto slides = ten_shot_train(0.3, 1);
    auto m = MILModel::init(MilVariant::abmil_gated, slides[0].feature_dim(), kSubtypes, 2, 16);
    const auto before = snapshot(m);
    auto cfg = mil_config(1);
    cfg.epochs = 0;
    const auto res = mil_train(m, slides, cfg);
    EXPECT_TRUE(res.trace.empty());
    EXPECT_EQ(snapshot(m), before);
}

TEST(MilTrain, SameSeedSameParameters) {
    const auto slides = ten_shot_train(0.3, 2);
    auto a = MILModel::init(MilVariant::abmil_gated, slides[0].feature_dim(), kSubtypes, 9, 16);
    auto b = MILModel::init(MilVariant::abmil_gated, slides[0].feature_dim(), kSubtypes, 9, 16);
    auto cfg = mil_config(5);
    cfg.epochs = 3;
    cfg.warmup_epochs = 1;
    const auto ra = mil_train(a, slides, cfg);
    const auto rb = mil_train(b, slides, cfg);
    EXPECT_EQ(snapshot(a), snapshot(b));
    ASSERT_EQ(ra.trace.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(ra.trace[i].total, rb.trace[i].total);
        EXPECT_EQ(ra.trace[i].total, ra.trace[i].labeled);
    }
    EXPECT_EQ(ra.steps, 3 * slides.size());
}

// Noise-free tiles: both comparators should fit their own 10-shot support set.
TEST(MilTrain, NoiseFreeTenShotFitsTrainingSlides) {
    for (auto variant : {MilVariant::abmil_gated, MilVariant::mean_pool}) {
        int perfect = 0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto slides = ten_shot_train(0.0, seed);
            auto m = MILModel::init(variant, slides[0].feature_dim(), kSubtypes, seed, 32);
            mil_train(m, slides, mil_config(seed));
            std::size_t correct = 0;
            for (const auto& s : slides) correct += mil_forward(s, m).prediction == s.slide_label;
            perfect += correct == slides.size();
        }
        EXPECT_GE(perfect, 9) << to_string(variant);
    }
}

TEST(MilCheckpoint, RoundTripAndMismatch) {
    const auto dir = std::filesystem::temp_directory_path() / ("mil_ckpt_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    Rng rng(8);
    auto m = MILModel::init(MilVariant::abmil_gated, 8, 3, 11, 6);
    randomize_biases(m, rng);
    m.save(dir / "a.ckpt");
    auto back = MILModel::init(MilVariant::abmil_gated, 8, 3, 99, 6);
    back.load(dir / "a.ckpt");
    const auto slide = random_slide(2, 3, 8, rng);
    const auto x = mil_forward(slide, m), y = mil_forward(slide, back);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(x.logits[c], y.logits[c], 1e-4);
    for (std::size_t i = 0; i < m.parameters().size(); ++i)
        EXPECT_LT(pathpt::testing::max_abs_diff(m.parameters()[i]->value, back.parameters()[i]->value), 1e-6);

    auto other_width = MILModel::init(MilVariant::abmil_gated, 8, 3, 1, 7);
    EXPECT_THROW(other_width.load(dir / "a.ckpt"), LoadError);
    auto mean = MILModel::init(MilVariant::mean_pool, 8, 3, 1);
    EXPECT_THROW(mean.load(dir / "a.ckpt"), LoadError);
    {
        std::ofstream f(dir / "junk.ckpt", std::ios::binary);
        f << "not a checkpoint";
    }
    EXPECT_THROW(back.load(dir / "junk.ckpt"), LoadError);
    std::filesystem::remove_all(dir);
}

}  // namespace
