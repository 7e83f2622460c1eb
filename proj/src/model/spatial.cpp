#include "pathpt/model/spatial.hpp"

#include <cmath>

#include "pathpt/error.hpp"
#include "pathpt/random.hpp"
#include "pathpt/simd/kernels.hpp"

namespace pathpt::model {
namespace {

constexpr std::size_t kMaxKernel = 7;
constexpr long kMaxRadius = 3;
constexpr std::size_t kOffsets = kMaxKernel * kMaxKernel;

Matrix xavier(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    const double sd = std::sqrt(2.0 / double(rows + cols));
    for (double& v : m.flat()) v = sd * standard_normal(rng);
    return m;
}

std::size_t padded_row(std::size_t k, std::size_t row, std::size_t d) {
    const std::size_t r = (k - 1) / 2;
    const std::size_t offset = row / d;
    const std::size_t c_in = row % d;
    const std::size_t dy = offset / k + kMaxRadius - r;
    const std::size_t dx = offset % k + kMaxRadius - r;
    return (dy * kMaxKernel + dx) * d + c_in;
}

// Fills the M x (49 d) patch matrix; empty and out-of-grid neighbours are zero.
Matrix im2col(const Matrix& x, const GridLayout& layout) {
    const std::size_t d = x.cols();
    Matrix patches(x.rows(), kOffsets * d);
    std::size_t m = 0;
    for (std::uint32_t r = 0; r < layout.height; ++r) {
        for (std::uint32_t c = 0; c < layout.width; ++c) {
            if (layout.cell[std::size_t(r) * layout.width + c] < 0) continue;
            double* out = patches.row(m).data();
            for (long dy = -kMaxRadius; dy <= kMaxRadius; ++dy) {
                const long rr = long(r) + dy;
                if (rr < 0 || rr >= long(layout.height)) continue;
                for (long dx = -kMaxRadius; dx <= kMaxRadius; ++dx) {
                    const long cc = long(c) + dx;
                    if (cc < 0 || cc >= long(layout.width)) continue;
                    const long src = layout.cell[std::size_t(rr) * layout.width + std::size_t(cc)];
                    if (src < 0) continue;
                    const std::size_t o = std::size_t((dy + kMaxRadius) * long(kMaxKernel) + dx + kMaxRadius);
                    std::copy(x.row(std::size_t(src)).begin(), x.row(std::size_t(src)).end(), out + o * d);
                }
            }
            ++m;
        }
    }
    return patches;
}

template <class Params, class Bind>
ag::Var forward_impl(ag::Tape& t, const corpus::SlideRecord& slide, Params& p, Bind bind) {
    const GridLayout layout = grid_layout(slide);
    const std::size_t d = p.dim;
    if (slide.feature_dim() != d) throw InvalidInput("spatial_forward: feature dimension mismatch on " + slide.slide_id);

    Matrix raster(slide.num_tiles(), d);
    for (std::size_t i = 0; i < layout.raster.size(); ++i) {
        const auto& f = slide.tiles[layout.raster[i]].feature;
        for (std::size_t c = 0; c < d; ++c) raster(i, c) = f[c];
    }
    const ag::Var x = t.constant(std::move(raster));

    const std::array<ag::Var, 3> w{bind(p.conv_weight[0]), bind(p.conv_weight[1]), bind(p.conv_weight[2])};
    const std::array<ag::Var, 3> b{bind(p.conv_bias[0]), bind(p.conv_bias[1]), bind(p.conv_bias[2])};
    const ag::Var local = grid_conv(t, x, layout, w, b);

    // Attention over the M real tiles.
    const ag::Var h1 = ag::layer_norm_rows(t, local, bind(p.ln1_gamma), bind(p.ln1_beta));
    const ag::Var q = ag::add_row(t, ag::matmul(t, h1, bind(p.wq)), bind(p.bq));
    const ag::Var k = ag::add_row(t, ag::matmul(t, h1, bind(p.wk)), bind(p.bk));
    const ag::Var v = ag::add_row(t, ag::matmul(t, h1, bind(p.wv)), bind(p.bv));
    const ag::Var mixed = ag::multi_head_attention(t, q, k, v, p.heads);
    const ag::Var x2 = ag::add(t, local, ag::add_row(t, ag::matmul(t, mixed, bind(p.wo)), bind(p.bo)));

    const ag::Var h2 = ag::layer_norm_rows(t, x2, bind(p.ln2_gamma), bind(p.ln2_beta));
    const ag::Var f = ag::relu(t, ag::add_row(t, ag::matmul(t, h2, bind(p.w1)), bind(p.b1)));
    const ag::Var out = ag::add(t, x2, ag::add_row(t, ag::matmul(t, f, bind(p.w2)), bind(p.b2)));

    return ag::gather_rows(t, out, layout.tile);
}

}  // namespace

GridLayout grid_layout(const corpus::SlideRecord& slide) {
    GridLayout g;
    g.height = slide.grid_h;
    g.width = slide.grid_w;
    g.cell.assign(std::size_t(g.height) * g.width, -1);
    for (std::size_t i = 0; i < slide.tiles.size(); ++i) {
        const auto& tile = slide.tiles[i];
        if (tile.row >= g.height || tile.col >= g.width)
            throw InvalidInput("slide " + slide.slide_id + ": tile (" + std::to_string(tile.row) + "," +
                               std::to_string(tile.col) + ") outside its grid");
        long& slot = g.cell[std::size_t(tile.row) * g.width + tile.col];
        if (slot >= 0) throw InvalidInput("slide " + slide.slide_id + ": duplicate tile coordinate");
        slot = long(i);
    }
    g.tile.resize(slide.tiles.size());
    for (long& slot : g.cell) {
        if (slot < 0) continue;
        const auto tile = std::size_t(slot);
        slot = long(g.raster.size());
        g.tile[tile] = g.raster.size();
        g.raster.push_back(tile);
    }
    return g;
}

ag::Var grid_conv(ag::Tape& t, ag::Var x, const GridLayout& layout, std::span<const ag::Var, 3> weights,
                  std::span<const ag::Var, 3> biases) {
    const Matrix& X = t.value(x);
    const std::size_t d = X.cols();
    const std::size_t m = X.rows();
    if (m != layout.raster.size()) throw InvalidInput("grid_conv: row count differs from layout");

    // The mean of three same-padded convolutions is one 7x7 convolution with
    // the zero-padded kernels averaged.
    Matrix w_eff(kOffsets * d, d);
    Matrix b_eff(1, d);
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t k = kConvSizes[i];
        const Matrix& W = t.value(weights[i]);
        const Matrix& B = t.value(biases[i]);
        if (W.rows() != k * k * d || W.cols() != d || B.rows() != 1 || B.cols() != d)
            throw InvalidInput("grid_conv: kernel shape mismatch");
        for (std::size_t r = 0; r < W.rows(); ++r)
            simd::kernels().axpy(1.0, W.row(r).data(), w_eff.row(padded_row(k, r, d)).data(), d);
        simd::kernels().axpy(1.0, B.data(), b_eff.data(), d);
    }
    for (double& v : w_eff.flat()) v /= 3.0;
    for (double& v : b_eff.flat()) v /= 3.0;

    Matrix patches = im2col(X, layout);
    Matrix out = X;
    for (std::size_t r = 0; r < m; ++r) simd::kernels().axpy(1.0, b_eff.data(), out.row(r).data(), d);
    simd::gemm(simd::Trans::no, simd::Trans::no, m, d, kOffsets * d, patches.data(), patches.cols(), w_eff.data(),
               d, out.data(), d);

    std::vector<ag::Var> parents{x, weights[0], weights[1], weights[2], biases[0], biases[1], biases[2]};
    std::array<ag::Var, 3> w{weights[0], weights[1], weights[2]};
    std::array<ag::Var, 3> b{biases[0], biases[1], biases[2]};
    return t.record(std::move(out), parents,
                    [x, w, b, layout, patches = std::move(patches), w_eff = std::move(w_eff)](ag::Tape& tp,
                                                                                             const Matrix& g) {
        const std::size_t d = g.cols();
        const std::size_t m = g.rows();
        tp.accumulate(x, g);
        if (tp.requires_grad(x)) {
            Matrix dp(m, kOffsets * d);
            simd::gemm(simd::Trans::no, simd::Trans::yes, m, kOffsets * d, d, g.data(), d, w_eff.data(), d,
                       dp.data(), dp.cols());
            Matrix& gx = tp.grad_of(x);
            std::size_t row = 0;
            for (std::uint32_t r = 0; r < layout.height; ++r) {
                for (std::uint32_t c = 0; c < layout.width; ++c) {
                    if (layout.cell[std::size_t(r) * layout.width + c] < 0) continue;
                    for (long dy = -kMaxRadius; dy <= kMaxRadius; ++dy) {
                        const long rr = long(r) + dy;
                        if (rr < 0 || rr >= long(layout.height)) continue;
                        for (long dx = -kMaxRadius; dx <= kMaxRadius; ++dx) {
                            const long cc = long(c) + dx;
                            if (cc < 0 || cc >= long(layout.width)) continue;
                            const long src = layout.cell[std::size_t(rr) * layout.width + std::size_t(cc)];
                            if (src < 0) continue;
                            const std::size_t o =
                                std::size_t((dy + kMaxRadius) * long(kMaxKernel) + dx + kMaxRadius);
                            simd::kernels().axpy(1.0, dp.row(row).data() + o * d, gx.row(std::size_t(src)).data(),
                                                 d);
                        }
                    }
                    ++row;
                }
            }
        }
        bool any_w = false;
        for (ag::Var v : w) any_w = any_w || tp.requires_grad(v);
        if (any_w) {
            // dW^T = g^T P keeps the long patch dimension as the wide output.
            Matrix dwt(d, kOffsets * d);
            simd::gemm(simd::Trans::yes, simd::Trans::no, d, kOffsets * d, m, g.data(), d, patches.data(),
                       patches.cols(), dwt.data(), dwt.cols());
            for (std::size_t i = 0; i < 3; ++i) {
                if (!tp.requires_grad(w[i])) continue;
                Matrix& gw = tp.grad_of(w[i]);
                for (std::size_t r = 0; r < gw.rows(); ++r) {
                    const std::size_t src = padded_row(kConvSizes[i], r, d);
                    for (std::size_t c = 0; c < d; ++c) gw(r, c) += dwt(c, src) / 3.0;
                }
            }
        }
        Matrix db(1, d);
        for (std::size_t r = 0; r < m; ++r) simd::kernels().axpy(1.0, g.row(r).data(), db.data(), d);
        for (std::size_t i = 0; i < 3; ++i) {
            if (!tp.requires_grad(b[i])) continue;
            simd::kernels().axpy(1.0 / 3.0, db.data(), tp.grad_of(b[i]).data(), d);
        }
    });
}

SpatialAggregatorParams SpatialAggregatorParams::init(std::size_t dim, std::size_t heads, std::uint64_t seed) {
    if (dim == 0 || heads == 0 || dim % heads != 0)
        throw ConfigError("spatial module: heads must divide the feature dimension");
    Rng rng(derive_seed(seed, "spatial-init"));
    SpatialAggregatorParams p;
    p.dim = dim;
    p.heads = heads;
    for (std::size_t i = 0; i < 3; ++i) {
        const std::size_t k = kConvSizes[i];
        p.conv_weight[i] = Parameter("spatial.conv" + std::to_string(k) + ".weight", Matrix(k * k * dim, dim));
        p.conv_bias[i] = Parameter("spatial.conv" + std::to_string(k) + ".bias", Matrix(1, dim));
    }
    p.ln1_gamma = Parameter("spatial.ln1.gamma", Matrix(1, dim, 1.0));
    p.ln1_beta = Parameter("spatial.ln1.beta", Matrix(1, dim));
    p.wq = Parameter("spatial.attn.wq", xavier(dim, dim, rng));
    p.bq = Parameter("spatial.attn.bq", Matrix(1, dim));
    p.wk = Parameter("spatial.attn.wk", xavier(dim, dim, rng));
    p.bk = Parameter("spatial.attn.bk", Matrix(1, dim));
    p.wv = Parameter("spatial.attn.wv", xavier(dim, dim, rng));
    p.bv = Parameter("spatial.attn.bv", Matrix(1, dim));
    p.wo = Parameter("spatial.attn.wo", Matrix(dim, dim));
    p.bo = Parameter("spatial.attn.bo", Matrix(1, dim));
    p.ln2_gamma = Parameter("spatial.ln2.gamma", Matrix(1, dim, 1.0));
    p.ln2_beta = Parameter("spatial.ln2.beta", Matrix(1, dim));
    p.w1 = Parameter("spatial.ffn.w1", xavier(dim, 2 * dim, rng));
    p.b1 = Parameter("spatial.ffn.b1", Matrix(1, 2 * dim));
    p.w2 = Parameter("spatial.ffn.w2", Matrix(2 * dim, dim));
    p.b2 = Parameter("spatial.ffn.b2", Matrix(1, dim));
    return p;
}

std::vector<Parameter*> SpatialAggregatorParams::parameters() {
    std::vector<Parameter*> out;
    for (auto& w : conv_weight) out.push_back(&w);
    for (auto& b : conv_bias) out.push_back(&b);
    for (Parameter* p : {&ln1_gamma, &ln1_beta, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln2_gamma, &ln2_beta, &w1,
                         &b1, &w2, &b2})
        out.push_back(p);
    return out;
}

std::vector<const Parameter*> SpatialAggregatorParams::parameters() const {
    auto mutable_params = const_cast<SpatialAggregatorParams*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
}

ag::Var spatial_forward(ag::Tape& tape, const corpus::SlideRecord& slide, SpatialAggregatorParams& params) {
    return forward_impl(tape, slide, params, [&](Parameter& p) { return tape.param(p); });
}

ag::Var spatial_forward(ag::Tape& tape, const corpus::SlideRecord& slide, const SpatialAggregatorParams& params) {
    return forward_impl(tape, slide, params, [&](const Parameter& p) { return tape.constant(p.value); });
}

}  // namespace pathpt::model
