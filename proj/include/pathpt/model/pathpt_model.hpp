#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pathpt/autograd.hpp"
#include "pathpt/corpus/slide.hpp"
#include "pathpt/corpus/text_encoder.hpp"
#include "pathpt/model/prompts.hpp"
#include "pathpt/model/readout.hpp"
#include "pathpt/model/spatial.hpp"
#include "pathpt/zeroshot/zeroshot.hpp"

namespace pathpt::model {

struct ModelConfig {
    double tau = kDefaultTemperature;
    std::size_t heads = 4;
    std::size_t context_length = kDefaultContextLength;
    bool use_spatial = true;
    bool use_learnable_prompts = true;

    // Throws ConfigError.
    void validate(std::size_t feature_dim) const;
};

// Per-class affine head on normalized features, used when learnable prompts
// are disabled. Starts as the zero-shot cosine readout: W = E / tau, b = 0.
struct LinearProbe {
    Parameter weight;  // (C+1) x d
    Parameter bias;    // 1 x (C+1)

    static LinearProbe from_embeddings(const zeroshot::ClassEmbeddings& embeddings, double tau);
};

struct SlidePrediction {
    Matrix probabilities;    // M x (C+1), tile order
    std::vector<int> labels;  // argmax per tile
    int slide_label = 1;      // tumor-ratio readout
};

// Tape outputs of one forward pass.
struct ForwardPass {
    ag::Var logits;  // M x (C+1); softmax gives tile probabilities
    ag::Var scores;  // cosines (prompt head) or logits (probe); argmax gives tile labels
};

class PathPTModel {
public:
    PathPTModel(ModelConfig cfg, const corpus::FrozenTextEncoder& encoder, PromptBank bank,
                const zeroshot::ClassEmbeddings& zero_shot, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    std::size_t num_classes() const { return num_classes_; }
    std::size_t feature_dim() const { return dim_; }

    // Non-const: parameters are recorded for back-propagation.
    ForwardPass forward(ag::Tape& tape, const corpus::SlideRecord& slide);
    ForwardPass forward(ag::Tape& tape, const corpus::SlideRecord& slide) const;

    // Class embeddings currently used by the prompt head.
    zeroshot::ClassEmbeddings class_embeddings() const;

    SlidePrediction predict_slide(const corpus::SlideRecord& slide) const;

    // Trainable tensors, in a fixed order. Disabled paths contribute nothing.
    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;

    SpatialAggregatorParams& spatial() { return spatial_; }
    const SpatialAggregatorParams& spatial() const { return spatial_; }
    PromptBank& bank() { return bank_; }
    const PromptBank& bank() const { return bank_; }
    LinearProbe& probe() { return probe_; }

    // Single-file parameter checkpoint. load() throws LoadError on any
    // dimension, flag or tensor mismatch.
    void save(const std::filesystem::path& path) const;
    void load(const std::filesystem::path& path);

private:
    template <class Self, class Bind>
    static ForwardPass forward_impl(Self& self, ag::Tape& tape, const corpus::SlideRecord& slide, Bind bind);

    ModelConfig cfg_;
    const corpus::FrozenTextEncoder* encoder_;
    std::size_t dim_ = 0;
    std::size_t num_classes_ = 0;
    SpatialAggregatorParams spatial_;
    PromptBank bank_;
    zeroshot::ClassEmbeddings fixed_embeddings_;
    LinearProbe probe_;
};

}  // namespace pathpt::model
