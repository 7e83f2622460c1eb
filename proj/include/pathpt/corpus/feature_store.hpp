#pragma once

// On-disk tile-feature store.
//
//   <dir>/manifest.json        schema version, d, label space, slide list
//   <dir>/<slide_id>.npyish    "PTPF" | u32 version | u32 M | u32 d |
//                              M x (u32 row, u32 col, i32 gt_label or -1, d x f32) |
//                              u32 slide_label
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "pathpt/corpus/label_space.hpp"
#include "pathpt/corpus/slide.hpp"

namespace pathpt::corpus {

inline constexpr std::uint32_t kFeatureStoreSchemaVersion = 1;
inline constexpr std::uint32_t kSlideFileVersion = 1;

// Seed of the synthetic text encoder paired with the features, when known.
struct EncoderInfo {
    std::uint64_t seed = 0;
    std::size_t token_dim = 0;

    friend bool operator==(const EncoderInfo&, const EncoderInfo&) = default;
};

struct FeatureStore {
    LabelSpace labels;
    std::size_t feature_dim = 0;
    std::vector<SlideRecord> slides;
    std::optional<EncoderInfo> encoder;
    std::string base_quality;  // free-form provenance tag, may be empty
};

void write_feature_store(const FeatureStore& store, const std::filesystem::path& dir);

// Throws LoadError naming the offending slide.
FeatureStore read_feature_store(const std::filesystem::path& dir);

// Single-slide binary codec (exposed for tests and tooling).
std::vector<std::uint8_t> encode_slide_file(const SlideRecord& slide, std::size_t feature_dim);
void decode_slide_file(std::span<const std::uint8_t> bytes, SlideRecord& slide, std::size_t feature_dim);

}  // namespace pathpt::corpus
