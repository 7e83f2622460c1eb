#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pathpt/corpus/label_space.hpp"
#include "pathpt/corpus/slide.hpp"
#include "pathpt/corpus/text_encoder.hpp"
#include "pathpt/model/readout.hpp"
#include "pathpt/tensor.hpp"
#include "pathpt/zeroshot/templates.hpp"

namespace pathpt::zeroshot {

// One unit-norm row per class, ordered like the LabelSpace.
class ClassEmbeddings {
public:
    ClassEmbeddings() = default;
    // Throws InvalidInput unless every row has unit norm (within 1e-9).
    explicit ClassEmbeddings(Matrix rows);
    // Normalizes each row first.
    static ClassEmbeddings normalized(Matrix rows);

    const Matrix& matrix() const { return rows_; }
    std::size_t num_classes() const { return rows_.rows(); }
    std::size_t dim() const { return rows_.cols(); }

private:
    Matrix rows_;
};

// argmax_i cos(v, E_i); ties go to the lowest class index.
int classify_tile(std::span<const double> feature, const ClassEmbeddings& embeddings);

// One instantiated prompt per class.
struct PromptGroup {
    std::vector<std::size_t> template_index;  // per class
    std::vector<std::string> prompts;         // per class
};

std::vector<PromptGroup> build_prompt_groups(std::span<const PromptTemplate> templates,
                                             const corpus::LabelSpace& labels, std::size_t n_groups,
                                             std::uint64_t seed);

ClassEmbeddings encode_group(const PromptGroup& group, const corpus::FrozenTextEncoder& encoder);

struct RankedPrompts {
    ClassEmbeddings pooled;             // mean of the top_m groups, re-normalized
    std::vector<std::size_t> order;     // all group indices, best first
    std::vector<double> scores;         // balanced accuracy per group (by group index)
    std::size_t top_m = 0;

    std::size_t best_group() const { return order.front(); }
    std::span<const std::size_t> selected() const { return {order.data(), top_m}; }
};

// Scores every group by slide-level balanced accuracy (tumor-ratio readout)
// on `train`, sorts descending with ties by group index and mean-pools the
// top_m groups' class embeddings.
RankedPrompts rank_and_pool(std::span<const PromptGroup> groups, std::span<const corpus::SlideRecord> train,
                            const corpus::FrozenTextEncoder& encoder, std::size_t num_classes,
                            std::size_t top_m = 100, double tau = model::kDefaultTemperature);

// Tile-level supervision retained from zero-shot predictions.
inline constexpr int kUnlabeled = -1;

struct SlidePseudoLabels {
    int slide_label = 1;
    std::vector<int> tiles;  // kUnlabeled, 0 (normal) or slide_label

    std::size_t count(int state) const;
};

// Keeps predictions of normal or of the slide's own subtype; everything else
// becomes unlabeled.
SlidePseudoLabels pseudo_label_slide(const corpus::SlideRecord& slide, const ClassEmbeddings& embeddings);

// Entries that are neither unlabeled, normal nor the slide label.
std::size_t count_conflicts(const SlidePseudoLabels& labels);

// Per-tile predictions fed into the WSI readouts.
struct TileEvidence {
    std::vector<int> labels;  // predicted class per tile
    Matrix probabilities;     // M x (C+1); may be empty for label-only readouts
};

enum class Readout { majority, topk, tumor_ratio };

struct ReadoutSpec {
    Readout kind = Readout::tumor_ratio;
    std::size_t k = 1;  // topk only
};

// Always returns a tumor class in 1..C.
int aggregate_wsi(const TileEvidence& evidence, ReadoutSpec spec, std::size_t num_classes);

// Cosine readout over a whole slide: labels plus softmax(cos / tau).
TileEvidence zero_shot_evidence(const corpus::SlideRecord& slide, const ClassEmbeddings& embeddings,
                                double tau = model::kDefaultTemperature);

}  // namespace pathpt::zeroshot
