#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pathpt/tensor.hpp"

namespace pathpt::corpus {

enum class Split { train, test };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct Tile {
    std::uint32_t row = 0;
    std::uint32_t col = 0;
    std::vector<float> feature;
    std::optional<int> gt_label;  // ground-truth class from a mask, when known

    friend bool operator==(const Tile&, const Tile&) = default;
};

// One whole slide as a sparse grid of tile features.
struct SlideRecord {
    std::string slide_id;
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::vector<Tile> tiles;
    int slide_label = 1;
    Split split = Split::train;

    std::size_t num_tiles() const { return tiles.size(); }
    std::size_t feature_dim() const { return tiles.empty() ? 0 : tiles.front().feature.size(); }

    // M x d matrix of features in tile order.
    Matrix features() const;

    friend bool operator==(const SlideRecord&, const SlideRecord&) = default;
};

// Checks every SlideRecord and Tile invariant. Throws InvalidInput naming the
// slide. `num_classes` is C + 1.
void validate_slide(const SlideRecord& slide, std::size_t feature_dim, std::size_t num_classes);

}  // namespace pathpt::corpus
