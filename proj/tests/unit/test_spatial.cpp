#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "pathpt/corpus/generator.hpp"
#include "pathpt/error.hpp"
#include "pathpt/model/checkpoint.hpp"
#include "pathpt/model/pathpt_model.hpp"
#include "pathpt/model/prompts.hpp"
#include "pathpt/model/readout.hpp"
#include "pathpt/model/spatial.hpp"
#include "pathpt/simd/kernels.hpp"
#include "pathpt/zeroshot/zeroshot.hpp"
#include "support/helpers.hpp"

using namespace pathpt;
using namespace pathpt::model;
using pathpt::testing::check_gradients;
using pathpt::testing::max_abs_diff;
using pathpt::testing::random_matrix;
using pathpt::testing::random_slide;

namespace {

void randomize(const std::vector<Parameter*>& params, Rng& rng, double scale) {
    for (auto* p : params)
        for (double& v : p->value.flat()) v += scale * standard_normal(rng);
}

// Three explicit same-padded convolutions, averaged, plus the residual; only
// occupied cells are read or written.
Matrix naive_local_block(const corpus::SlideRecord& slide, const Matrix& x_raster, const GridLayout& layout,
                         const std::array<Matrix, 3>& w, const std::array<Matrix, 3>& b) {
    const std::size_t d = x_raster.cols();
    Matrix out = x_raster;
    for (std::size_t pos = 0; pos < layout.raster.size(); ++pos) {
        const auto& tile = slide.tiles[layout.raster[pos]];
        for (std::size_t kk = 0; kk < 3; ++kk) {
            const long k = static_cast<long>(kConvSizes[kk]);
            const long r = (k - 1) / 2;
            for (std::size_t co = 0; co < d; ++co) {
                double acc = b[kk](0, co);
                for (long dy = -r; dy <= r; ++dy)
                    for (long dx = -r; dx <= r; ++dx) {
                        const long y = long(tile.row) + dy, xx = long(tile.col) + dx;
                        if (y < 0 || xx < 0 || y >= long(slide.grid_h) || xx >= long(slide.grid_w)) continue;
                        const long src = layout.cell[std::size_t(y) * slide.grid_w + std::size_t(xx)];
                        if (src < 0) continue;
                        for (std::size_t ci = 0; ci < d; ++ci)
                            acc += w[kk](std::size_t(((dy + r) * k + (dx + r)) * long(d) + long(ci)), co) *
                                   x_raster(std::size_t(src), ci);
                    }
                out(pos, co) += acc / 3.0;
            }
        }
    }
    return out;
}

TEST(GridLayout, RasterOrderAndErrors) {
    Rng rng(1);
    auto s = random_slide(3, 4, 2, rng, 1, true);
    std::reverse(s.tiles.begin(), s.tiles.end());
    const auto layout = grid_layout(s);
    ASSERT_EQ(layout.raster.size(), s.num_tiles());
    for (std::size_t p = 1; p < layout.raster.size(); ++p) {
        const auto& a = s.tiles[layout.raster[p - 1]];
        const auto& b = s.tiles[layout.raster[p]];
        EXPECT_LT(a.row * 4 + a.col, b.row * 4 + b.col);
    }
    for (std::size_t i = 0; i < s.num_tiles(); ++i) EXPECT_EQ(layout.raster[layout.tile[i]], i);
    auto outside = s;
    outside.tiles[0].col = 4;
    EXPECT_THROW(grid_layout(outside), InvalidInput);
    auto dup = s;
    dup.tiles[1].row = dup.tiles[0].row;
    dup.tiles[1].col = dup.tiles[0].col;
    EXPECT_THROW(grid_layout(dup), InvalidInput);
}

TEST(GridConv, MatchesThreeExplicitConvolutions) {
    Rng rng(2);
    for (bool holes : {false, true}) {
        const std::size_t d = 3;
        const auto slide = random_slide(5, 6, d, rng, 1, holes);
        const auto layout = grid_layout(slide);
        Matrix x(layout.raster.size(), d);
        for (std::size_t p = 0; p < layout.raster.size(); ++p)
            for (std::size_t j = 0; j < d; ++j) x(p, j) = slide.tiles[layout.raster[p]].feature[j];
        std::array<Matrix, 3> w, b;
        for (std::size_t k = 0; k < 3; ++k) {
            w[k] = random_matrix(kConvSizes[k] * kConvSizes[k] * d, d, rng, 0.3);
            b[k] = random_matrix(1, d, rng, 0.3);
        }
        ag::Tape t;
        std::array<ag::Var, 3> wv{t.constant(w[0]), t.constant(w[1]), t.constant(w[2])};
        std::array<ag::Var, 3> bv{t.constant(b[0]), t.constant(b[1]), t.constant(b[2])};
        const Matrix& got = t.value(grid_conv(t, t.constant(x), layout, wv, bv));
        EXPECT_LT(max_abs_diff(got, naive_local_block(slide, x, layout, w, b)), 1e-12) << "holes=" << holes;
    }
}

TEST(GridConv, GradientsMatchFiniteDifferences) {
    Rng rng(3);
    const std::size_t d = 2;
    const auto slide = random_slide(4, 4, d, rng, 1, true);
    const auto layout = grid_layout(slide);
    Parameter x("x", random_matrix(layout.raster.size(), d, rng));
    std::array<Parameter, 3> w, b;
    for (std::size_t k = 0; k < 3; ++k) {
        w[k] = Parameter("w" + std::to_string(k), random_matrix(kConvSizes[k] * kConvSizes[k] * d, d, rng, 0.3));
        b[k] = Parameter("b" + std::to_string(k), random_matrix(1, d, rng, 0.3));
    }
    const Matrix r = random_matrix(layout.raster.size(), d, rng);
    auto loss = [&](ag::Tape& t) {
        std::array<ag::Var, 3> wv{t.param(w[0]), t.param(w[1]), t.param(w[2])};
        std::array<ag::Var, 3> bv{t.param(b[0]), t.param(b[1]), t.param(b[2])};
        return pathpt::testing::project_to_scalar(t, grid_conv(t, t.param(x), layout, wv, bv), r);
    };
    const auto res = check_gradients({&x, &w[0], &w[1], &w[2], &b[0], &b[1], &b[2]}, loss);
    EXPECT_LT(res.worst_rel, 1e-6) << res.worst_where;
}

TEST(SpatialForward, ZeroPerturbationIsExactIdentity) {
    Rng rng(4);
    const auto slide = random_slide(5, 5, 8, rng, 2, true);
    const auto params = SpatialAggregatorParams::init(8, 4, 11);
    ag::Tape t;
    const Matrix& out = t.value(spatial_forward(t, slide, params));
    EXPECT_EQ(out, slide.features());
}

TEST(SpatialForward, SingleTileIsFinite) {
    Rng rng(5);
    const auto slide = random_slide(1, 1, 8, rng);
    auto params = SpatialAggregatorParams::init(8, 2, 3);
    randomize(params.parameters(), rng, 0.2);
    ag::Tape t;
    const Matrix& out = t.value(spatial_forward(t, slide, params));
    ASSERT_EQ(out.rows(), 1u);
    ASSERT_EQ(out.cols(), 8u);
    for (double v : out.flat()) EXPECT_TRUE(std::isfinite(v));
}

TEST(SpatialForward, InitRejectsHeadsThatDoNotDivideWidth) {
    EXPECT_THROW(SpatialAggregatorParams::init(8, 3, 1), ConfigError);
}

TEST(SpatialForward, AgreesAcrossKernelTables) {
    Rng rng(6);
    const auto slide = random_slide(6, 6, 16, rng, 1, true);
    auto params = SpatialAggregatorParams::init(16, 4, 9);
    randomize(params.parameters(), rng, 0.1);
    const auto& original = simd::kernels();
    Matrix reference;
    for (const auto* table : simd::available_kernels()) {
        simd::set_kernels(*table);
        ag::Tape t;
        const Matrix out = t.value(spatial_forward(t, slide, std::as_const(params)));
        if (reference.empty())
            reference = out;
        else
            EXPECT_LT(max_abs_diff(out, reference), 1e-10) << table->name;
    }
    simd::set_kernels(original);
}

struct TinyWorld {
    corpus::LabelSpace labels = corpus::LabelSpace::synthetic(3);
    corpus::FrozenTextEncoder encoder = corpus::make_encoder(labels, 5, 6, 8);
};

PathPTModel tiny_model(const TinyWorld& w, ModelConfig cfg, std::size_t k, std::uint64_t seed = 1) {
    std::vector<std::string> prompts;
    for (const auto& n : w.labels.names()) prompts.push_back("a slide of " + n);
    auto bank = PromptBank::from_prompts(prompts, w.labels, w.encoder, k);
    const auto zs = encode_prompts(bank, w.encoder);
    return PathPTModel(cfg, w.encoder, std::move(bank), zs, seed);
}

// Every trainable tensor of spatial_forward + encode_prompts + softmax(cos / tau).
TEST(FullModel, GradientsMatchFiniteDifferencesOnThreeByThreeGrid) {
    TinyWorld w;
    ModelConfig cfg;
    cfg.heads = 2;
    cfg.context_length = 3;
    auto model = tiny_model(w, cfg, 3);
    Rng rng(7);
    randomize(model.parameters(), rng, 0.15);
    const auto slide = random_slide(3, 3, 8, rng, 2);
    const Matrix r = random_matrix(9, w.labels.size(), rng);
    auto loss = [&](ag::Tape& t) {
        auto pass = model.forward(t, slide);
        return pathpt::testing::project_to_scalar(t, ag::softmax_rows(t, pass.logits), r);
    };
    const auto res = check_gradients(model.parameters(), loss);
    EXPECT_LT(res.worst_rel, 1e-4) << res.worst_where;
    EXPECT_GT(res.checked, 5000u);
}

TEST(EncodePrompts, EmptyContextGivesBareClassNameEmbeddings) {
    TinyWorld w;
    std::vector<Matrix> ctx, names;
    for (const auto& n : w.labels.names()) {
        ctx.emplace_back(0, w.encoder.token_dim());
        names.push_back(w.encoder.embed_text(n));
    }
    const PromptBank bank(ctx, names);
    const auto e = encode_prompts(bank, w.encoder);
    for (std::size_t c = 0; c < w.labels.size(); ++c) {
        const auto direct = w.encoder.encode_text(w.labels.name(c));
        for (std::size_t j = 0; j < direct.size(); ++j) EXPECT_NEAR(e.matrix()(c, j), direct[j], 1e-14);
    }
}

TEST(EncodePrompts, IdenticalContextsAndNamesGiveIdenticalRows) {
    TinyWorld w;
    Rng rng(8);
    const Matrix ctx = random_matrix(4, w.encoder.token_dim(), rng);
    const Matrix name = w.encoder.embed_text("glioma");
    const PromptBank bank({ctx, ctx, random_matrix(4, w.encoder.token_dim(), rng)}, {name, name, name});
    const auto e = encode_prompts(bank, w.encoder).matrix();
    for (std::size_t j = 0; j < e.cols(); ++j) EXPECT_EQ(e(0, j), e(1, j));
}

TEST(EncodePrompts, CosineGradientReachesContextsOnly) {
    TinyWorld w;
    ModelConfig cfg;
    cfg.use_spatial = false;
    cfg.context_length = 5;
    auto model = tiny_model(w, cfg, 5);
    Rng rng(9);
    const auto slide = random_slide(2, 2, 8, rng);
    const Matrix r = random_matrix(4, w.labels.size(), rng);
    auto loss = [&](ag::Tape& t) { return pathpt::testing::project_to_scalar(t, model.forward(t, slide).scores, r); };
    const auto params = model.parameters();
    ASSERT_EQ(params.size(), w.labels.size());
    const auto res = check_gradients(params, loss);
    EXPECT_LT(res.worst_rel, 1e-4) << res.worst_where;
}

TEST(TileProbabilities, ClosedFormsAndSharpening) {
    const Matrix f(1, 2, {1, 0});
    const Matrix e(2, 2, {1, 0, 0, 1});
    const Matrix p = tile_probabilities(f, e, 1.0);
    EXPECT_NEAR(p(0, 0), std::exp(1.0) / (std::exp(1.0) + 1), 1e-15);
    EXPECT_NEAR(p(0, 0), 0.7311, 1e-4);
    EXPECT_NEAR(p(0, 1), 0.2689, 1e-4);

    const Matrix eq = tile_probabilities(Matrix(1, 2, {1, 1}), Matrix(2, 2, {1, 0, 0, 1}), 0.5);
    EXPECT_NEAR(eq(0, 0), 0.5, 1e-15);

    // Cosines 0.9, 0.8, 0.7, 0.6 against the feature (1, 0).
    Matrix spaced(4, 2);
    for (std::size_t j = 0; j < 4; ++j) {
        const double c = 0.9 - 0.1 * double(j);
        spaced(j, 0) = c;
        spaced(j, 1) = std::sqrt(1 - c * c);
    }
    const Matrix sharp = tile_probabilities(f, spaced, 0.01);
    EXPECT_GE(*std::max_element(sharp.row(0).begin(), sharp.row(0).end()), 0.999);
    EXPECT_EQ(argmax_rows(sharp).front(), 0);

    Rng rng(10);
    const Matrix feats = random_matrix(20, 6, rng);
    const Matrix rows = random_matrix(4, 6, rng);
    const Matrix soft = tile_probabilities(feats, rows, 0.07);
    for (std::size_t m = 0; m < 20; ++m) {
        double s = 0;
        for (double v : soft.row(m)) {
            EXPECT_GE(v, 0.0);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
    EXPECT_THROW(tile_probabilities(Matrix(1, 2, {0, 0}), e, 1.0), InvalidInput);
}

TEST(PredictSlide, InitializedModelReproducesZeroShotLabels) {
    const auto corpus = corpus::generate_corpus(corpus::CorpusConfig::preset(corpus::BaseQuality::medium, 3));
    const auto groups = zeroshot::build_prompt_groups(zeroshot::default_templates(), corpus.labels, 1, 4);
    auto bank = PromptBank::from_prompts(groups[0].prompts, corpus.labels, corpus.encoder, 32);
    const auto e = encode_prompts(bank, corpus.encoder);
    PathPTModel model(ModelConfig{}, corpus.encoder, bank, e, 5);
    for (std::size_t i = 0; i < 20; ++i) {
        const auto& s = corpus.slides[i * 7];
        const auto pred = model.predict_slide(s);
        const auto zs = zeroshot::zero_shot_evidence(s, e);
        EXPECT_EQ(pred.labels, zs.labels) << s.slide_id;
        EXPECT_EQ(pred.slide_label,
                  zeroshot::aggregate_wsi({pred.labels, pred.probabilities}, {zeroshot::Readout::tumor_ratio, 1},
                                          corpus.labels.size()));
    }
}

TEST(PredictSlide, LinearProbeStartsAtZeroShotReadout) {
    const auto corpus = corpus::generate_corpus(corpus::CorpusConfig::preset(corpus::BaseQuality::medium, 3));
    const auto groups = zeroshot::build_prompt_groups(zeroshot::default_templates(), corpus.labels, 1, 4);
    auto bank = PromptBank::from_prompts(groups[0].prompts, corpus.labels, corpus.encoder, 32);
    const auto pooled = zeroshot::encode_group(groups[0], corpus.encoder);
    ModelConfig cfg;
    cfg.use_spatial = false;
    cfg.use_learnable_prompts = false;
    PathPTModel model(cfg, corpus.encoder, bank, pooled, 5);
    for (std::size_t i = 0; i < 10; ++i) {
        const auto& s = corpus.slides[i * 13];
        const auto pred = model.predict_slide(s);
        const auto zs = zeroshot::zero_shot_evidence(s, pooled);
        EXPECT_EQ(pred.labels, zs.labels);
        EXPECT_LT(max_abs_diff(pred.probabilities, zs.probabilities), 1e-12);
    }
}

TEST(PredictSlide, PrototypeSlideOfClassTwoPredictsTwo) {
    corpus::CorpusConfig cfg;
    cfg.slides_per_class = 2;
    cfg.grid_h = cfg.grid_w = 4;
    const auto corpus = corpus::generate_corpus(cfg);
    corpus::SlideRecord s = corpus.slides.front();
    s.slide_label = 2;
    for (auto& t : s.tiles) {
        for (std::size_t j = 0; j < t.feature.size(); ++j) t.feature[j] = static_cast<float>(corpus.prototypes(2, j));
        t.gt_label = 2;
    }
    std::vector<std::string> prompts;
    for (const auto& n : corpus.labels.names()) prompts.push_back(zeroshot::default_templates().front().instantiate(n));
    auto bank = PromptBank::from_prompts(prompts, corpus.labels, corpus.encoder, 32);
    const auto e = encode_prompts(bank, corpus.encoder);
    PathPTModel model(ModelConfig{}, corpus.encoder, bank, e, 1);
    EXPECT_EQ(model.predict_slide(s).slide_label, 2);
}

TEST(PredictSlide, ArgmaxIsInvariantToFeatureScaling) {
    TinyWorld w;
    ModelConfig cfg;
    cfg.use_spatial = false;
    auto model = tiny_model(w, cfg, 4);
    Rng rng(12);
    for (int trial = 0; trial < 5; ++trial) {
        const auto s = random_slide(3, 3, 8, rng, 1);
        auto scaled = s;
        const double alpha = 0.01 + 10.0 * trial;
        for (auto& t : scaled.tiles)
            for (auto& v : t.feature) v = static_cast<float>(v * alpha);
        const auto a = model.predict_slide(s).labels;
        const auto b = model.predict_slide(scaled).labels;
        EXPECT_EQ(a, b);
    }
}

TEST(ModelConfig, Validation) {
    ModelConfig cfg;
    cfg.tau = 0;
    EXPECT_THROW(cfg.validate(8), ConfigError);
    cfg.tau = 0.07;
    cfg.heads = 3;
    EXPECT_THROW(cfg.validate(8), ConfigError);
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / (name + "_" + std::to_string(::getpid()));
}

TEST(Checkpoint, RoundTripRestoresParameters) {
    TinyWorld w;
    ModelConfig cfg;
    cfg.heads = 2;
    cfg.context_length = 3;
    auto model = tiny_model(w, cfg, 3);
    Rng rng(13);
    randomize(model.parameters(), rng, 0.2);
    const auto path = temp_file("ckpt");
    model.save(path);
    auto other = tiny_model(w, cfg, 3, 99);
    other.load(path);
    const auto a = model.parameters();
    const auto b = other.parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        ASSERT_EQ(a[i]->name, b[i]->name);
        for (std::size_t j = 0; j < a[i]->value.size(); ++j)
            EXPECT_EQ(b[i]->value.flat()[j], static_cast<double>(static_cast<float>(a[i]->value.flat()[j])));
    }
    std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsMismatchedModelsAndCorruptFiles) {
    TinyWorld w;
    ModelConfig cfg;
    cfg.heads = 2;
    cfg.context_length = 3;
    const auto path = temp_file("ckpt_bad");
    tiny_model(w, cfg, 3).save(path);

    auto longer = cfg;
    longer.context_length = 4;
    auto m2 = tiny_model(w, longer, 4);
    EXPECT_THROW(m2.load(path), LoadError);

    auto no_spatial = cfg;
    no_spatial.use_spatial = false;
    auto m3 = tiny_model(w, no_spatial, 3);
    EXPECT_THROW(m3.load(path), LoadError);

    corpus::LabelSpace wide = corpus::LabelSpace::synthetic(3);
    const auto enc16 = corpus::make_encoder(wide, 5, 6, 16);
    std::vector<std::string> prompts;
    for (const auto& n : wide.names()) prompts.push_back("a slide of " + n);
    auto bank = PromptBank::from_prompts(prompts, wide, enc16, 3);
    const auto zs = encode_prompts(bank, enc16);
    PathPTModel m4(cfg, enc16, bank, zs, 1);
    EXPECT_THROW(m4.load(path), LoadError);

    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    auto m5 = tiny_model(w, cfg, 3);
    EXPECT_THROW(m5.load(path), LoadError);
    std::filesystem::resize_file(path, 20);
    EXPECT_THROW(model::read_checkpoint(path), LoadError);
    std::filesystem::remove(path);
}

}  // namespace
