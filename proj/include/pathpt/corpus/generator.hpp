#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "pathpt/corpus/label_space.hpp"
#include "pathpt/corpus/slide.hpp"
#include "pathpt/corpus/text_encoder.hpp"

namespace pathpt::corpus {

// Zero-shot quality of the emulated base model.
enum class BaseQuality { good, medium, poor };

std::string_view to_string(BaseQuality q);
BaseQuality parse_base_quality(std::string_view s);

// Knobs of the synthetic frozen-encoder world. Noise vectors are drawn
// N(0, I/d), so sigma values are relative to the unit-norm prototypes
// independent of d.
struct CorpusConfig {
    std::uint64_t seed = 7;
    std::size_t feature_dim = 64;
    std::size_t token_dim = 32;
    std::size_t num_subtypes = 4;
    std::size_t slides_per_class = 40;
    std::uint32_t grid_h = 16;
    std::uint32_t grid_w = 16;
    double sigma_align = 0.0;   // text prompt -> visual prototype misalignment
    double sigma_tile = 0.0;    // within-class tile scatter
    double tumor_fraction = 0.35;

    // Throws ConfigError.
    void validate() const;

    // Reference corpus (C=4, d=64, 40 slides/class, 16x16) at a given quality.
    static CorpusConfig preset(BaseQuality quality, std::uint64_t seed = 7);
};

struct GeneratedCorpus {
    LabelSpace labels;
    FrozenTextEncoder encoder;
    std::vector<SlideRecord> slides;
    Matrix prototypes;  // (C+1) x d visual class centers
};

// Pure function of cfg: same cfg gives a bit-identical corpus.
GeneratedCorpus generate_corpus(const CorpusConfig& cfg);

// Number of training slides for a class with n slides: 15 when at least 30
// exist, otherwise about half (at least one).
std::size_t train_count_for(std::size_t n);

// Encoder matching a generated corpus, rebuilt from its seed.
FrozenTextEncoder make_encoder(const LabelSpace& labels, std::uint64_t seed, std::size_t token_dim,
                               std::size_t feature_dim);

// Nearest-prototype tile accuracy against gt labels (difficulty probe).
double nearest_prototype_accuracy(const GeneratedCorpus& corpus);

}  // namespace pathpt::corpus
