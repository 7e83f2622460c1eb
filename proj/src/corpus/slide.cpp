#include "pathpt/corpus/slide.hpp"

#include <cmath>
#include <set>
#include <utility>

#include "pathpt/error.hpp"

namespace pathpt::corpus {

std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw InvalidInput("unknown split \"" + std::string(s) + "\"");
}

Matrix SlideRecord::features() const {
    const std::size_t d = feature_dim();
    Matrix out(tiles.size(), d);
    for (std::size_t m = 0; m < tiles.size(); ++m)
        for (std::size_t c = 0; c < d; ++c) out(m, c) = tiles[m].feature[c];
    return out;
}

void validate_slide(const SlideRecord& slide, std::size_t feature_dim, std::size_t num_classes) {
    const auto fail = [&](const std::string& what) {
        throw InvalidInput("slide \"" + slide.slide_id + "\": " + what);
    };
    if (slide.slide_id.empty()) throw InvalidInput("slide with empty id");
    if (slide.grid_h == 0 || slide.grid_w == 0) fail("grid dimensions must be positive");
    if (slide.tiles.empty()) fail("slide has no tiles");
    if (slide.tiles.size() > std::size_t(slide.grid_h) * slide.grid_w) fail("more tiles than grid cells");
    if (slide.slide_label < 1 || static_cast<std::size_t>(slide.slide_label) >= num_classes)
        fail("slide label " + std::to_string(slide.slide_label) + " is not a subtype index");
    std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
    for (const Tile& t : slide.tiles) {
        const std::string where = "tile (" + std::to_string(t.row) + "," + std::to_string(t.col) + ")";
        if (t.row >= slide.grid_h || t.col >= slide.grid_w) fail(where + " lies outside the grid");
        if (!seen.emplace(t.row, t.col).second) fail("duplicate coordinates at " + where);
        if (t.feature.size() != feature_dim)
            fail(where + " has dimension " + std::to_string(t.feature.size()) + ", expected " +
                 std::to_string(feature_dim));
        double norm2 = 0.0;
        for (float v : t.feature) {
            if (!std::isfinite(v)) fail(where + " has a non-finite feature");
            norm2 += double(v) * double(v);
        }
        if (norm2 == 0.0) fail(where + " has a zero-norm feature");
        if (t.gt_label && (*t.gt_label < 0 || static_cast<std::size_t>(*t.gt_label) >= num_classes))
            fail(where + " has an out-of-range ground-truth label");
    }
}

}  // namespace pathpt::corpus
