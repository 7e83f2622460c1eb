#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pathpt/corpus/slide.hpp"
#include "pathpt/model/pathpt_model.hpp"
#include "pathpt/tensor.hpp"
#include "pathpt/zeroshot/zeroshot.hpp"

namespace pathpt::training {

struct TrainConfig {
    std::size_t epochs = 20;
    double lr = 1e-4;
    std::size_t warmup_epochs = 2;
    double w_labeled = 1.0;
    double w_unlabeled = 0.5;
    double w_pseudo = 0.1;
    std::size_t pseudo_start_epoch = 10;  // 1-indexed
    bool enable_pseudo = true;
    std::uint64_t seed = 0;
    std::size_t k_shot = 10;

    // Throws ConfigError.
    void validate() const;
};

// Linear warm-up from 0 to cfg.lr over warmup_epochs * steps_per_epoch steps,
// then constant. `step` is 0-based.
double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t steps_per_epoch);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(std::vector<Parameter*> params, AdamConfig cfg = {});

    // Applies one update from the accumulated gradients, then clears them.
    void step(double lr);
    void zero_grad();
    std::size_t steps() const { return t_; }

private:
    std::vector<Parameter*> params_;
    AdamConfig cfg_;
    std::vector<Matrix> m_, v_;
    std::size_t t_ = 0;
};

// Positions in the slide list handed to sample_few_shot.
struct FewShotSplit {
    std::vector<std::vector<std::size_t>> train;  // per subtype 1..C (index c - 1), k entries each
    std::vector<std::size_t> test;

    std::vector<std::size_t> train_flat() const;
};

// k draws per subtype among the train-split slides: without replacement when
// at least k exist, with replacement otherwise. Test = every test-split slide.
// Throws ConfigError when a subtype has no training slide.
FewShotSplit sample_few_shot(std::span<const corpus::SlideRecord> slides, std::size_t num_subtypes, std::size_t k,
                             std::uint64_t seed);

// For each tile unlabeled in `labels`: argmax over {0, slide_label} of the
// probabilities (ties to 0). Other tiles stay kUnlabeled.
std::vector<int> refresh_pseudo_labels(const Matrix& probabilities, const zeroshot::SlidePseudoLabels& labels);

std::vector<std::vector<int>> pseudo_label_refresh(const model::PathPTModel& model,
                                                   std::span<const corpus::SlideRecord> slides,
                                                   std::span<const zeroshot::SlidePseudoLabels> labels);

struct EpochTrace {
    std::size_t epoch = 0;  // 1-indexed
    double labeled = 0.0;
    double unlabeled = 0.0;
    double pseudo = 0.0;
    double total = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochTrace> trace;
    std::size_t label_violations = 0;  // retained or refreshed labels outside {0, slide label}
    std::size_t steps = 0;
};

// One Adam step per slide per epoch, slide order shuffled per epoch from
// cfg.seed. `labels[s]` are the zero-shot pseudo-labels of `slides[s]`.
// Throws TrainingError naming the epoch and slide on a non-finite loss.
TrainResult train(model::PathPTModel& model, std::span<const corpus::SlideRecord> slides,
                  std::span<const zeroshot::SlidePseudoLabels> labels, const TrainConfig& cfg);

// CSV columns: epoch,L_labeled,L_unlabeled,L_pseudo,total,lr
void write_trace_csv(const std::filesystem::path& path, std::span<const EpochTrace> trace);
std::vector<EpochTrace> read_trace_csv(const std::filesystem::path& path);

}  // namespace pathpt::training
