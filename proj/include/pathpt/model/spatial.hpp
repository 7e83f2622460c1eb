#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pathpt/autograd.hpp"
#include "pathpt/corpus/slide.hpp"
#include "pathpt/tensor.hpp"

namespace pathpt::model {

inline constexpr std::array<std::size_t, 3> kConvSizes{3, 5, 7};

// Raster (row-major) placement of a slide's tiles.
struct GridLayout {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<std::size_t> raster;  // raster position -> tile index
    std::vector<std::size_t> tile;    // tile index -> raster position
    std::vector<long> cell;           // grid cell -> raster position, -1 when empty
};

// Throws InvalidInput for a coordinate outside the grid or a repeated cell.
GridLayout grid_layout(const corpus::SlideRecord& slide);

// Local block: three same-padded convolutions (3x3, 5x5, 7x7), averaged and
// added residually. Then one pre-norm self-attention layer:
//   x2  = x + MHA(LN1(x)) Wo + bo
//   out = x2 + ReLU(LN2(x2) W1 + b1) W2 + b2
//
// Conv weight rows are indexed ((dy + r) * k + (dx + r)) * d + c_in for
// offset (dy, dx) with r = (k - 1) / 2; columns are output channels.
struct SpatialAggregatorParams {
    std::size_t dim = 0;
    std::size_t heads = 0;

    std::array<Parameter, 3> conv_weight;
    std::array<Parameter, 3> conv_bias;

    Parameter ln1_gamma, ln1_beta;
    Parameter wq, bq, wk, bk, wv, bv;
    Parameter wo, bo;
    Parameter ln2_gamma, ln2_beta;
    Parameter w1, b1, w2, b2;

    // Perturbation paths (conv, Wo, bo, W2, b2) start at zero so the block is
    // an exact identity; Q/K/V and W1 are Xavier-normal from `seed`.
    static SpatialAggregatorParams init(std::size_t dim, std::size_t heads, std::uint64_t seed);

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
};

// M x d contextualized features in the slide's tile order. The non-const
// overload records parameters for back-propagation; the const one treats them
// as constants.
ag::Var spatial_forward(ag::Tape& tape, const corpus::SlideRecord& slide, SpatialAggregatorParams& params);
ag::Var spatial_forward(ag::Tape& tape, const corpus::SlideRecord& slide, const SpatialAggregatorParams& params);

// The local block alone, on features already in raster order. Exposed for tests.
ag::Var grid_conv(ag::Tape& tape, ag::Var x, const GridLayout& layout, std::span<const ag::Var, 3> weights,
                  std::span<const ag::Var, 3> biases);

}  // namespace pathpt::model
