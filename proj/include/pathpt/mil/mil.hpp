#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "pathpt/autograd.hpp"
#include "pathpt/corpus/slide.hpp"
#include "pathpt/tensor.hpp"
#include "pathpt/training/training.hpp"

namespace pathpt::mil {

enum class MilVariant { abmil_gated, mean_pool };

std::string_view to_string(MilVariant v);
MilVariant parse_mil_variant(std::string_view s);

inline constexpr std::size_t kDefaultHidden = 128;
// Same epochs and warm-up as prompt tuning, but a larger step: at 1e-4 the
// classifier barely leaves its initialization in 20 epochs.
inline constexpr double kDefaultLr = 1e-3;

// Slide-level comparator: attention pooling over tiles, then a linear
// classifier over the C subtypes. Gated attention score of tile m:
//   w . (tanh(V v_m + b_V) * sigmoid(U v_m + b_U))
struct MILModel {
    MilVariant variant = MilVariant::abmil_gated;
    std::size_t dim = 0;
    std::size_t hidden = 0;
    std::size_t num_subtypes = 0;

    Parameter attn_v, attn_v_bias;  // d x H, 1 x H
    Parameter attn_u, attn_u_bias;  // d x H, 1 x H
    Parameter attn_w;               // H x 1
    Parameter classifier, classifier_bias;  // d x C, 1 x C

    // Xavier-normal weights and zero biases from `seed`. mean_pool has no
    // attention parameters.
    static MILModel init(MilVariant variant, std::size_t dim, std::size_t num_subtypes, std::uint64_t seed,
                         std::size_t hidden = kDefaultHidden);

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;

    void save(const std::filesystem::path& path) const;
    // Throws LoadError on any header or tensor mismatch.
    void load(const std::filesystem::path& path);
};

struct MilOutput {
    std::vector<double> logits;     // length C, index c - 1 for subtype c
    std::vector<double> attention;  // length M, sums to 1
    int prediction = 1;             // argmax subtype in 1..C
};

struct MilPass {
    ag::Var logits;     // 1 x C
    ag::Var attention;  // 1 x M
};

// Throws InvalidInput for an empty slide or a feature width mismatch.
MilPass mil_forward(ag::Tape& tape, const corpus::SlideRecord& slide, MILModel& model);
MilOutput mil_forward(const corpus::SlideRecord& slide, const MILModel& model);

struct MilTrainResult {
    std::vector<training::EpochTrace> trace;  // slide CE reported as L_labeled and total
    std::size_t steps = 0;
};

// Slide-level cross-entropy, one Adam step per slide, same epochs, lr and
// warm-up schedule as PathPT training. Deterministic given cfg.seed.
MilTrainResult mil_train(MILModel& model, std::span<const corpus::SlideRecord> slides,
                         const training::TrainConfig& cfg);

}  // namespace pathpt::mil
