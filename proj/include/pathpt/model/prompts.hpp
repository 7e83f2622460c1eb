#pragma once

#include <span>
#include <string>
#include <vector>

#include "pathpt/autograd.hpp"
#include "pathpt/corpus/label_space.hpp"
#include "pathpt/corpus/text_encoder.hpp"
#include "pathpt/tensor.hpp"
#include "pathpt/zeroshot/zeroshot.hpp"

namespace pathpt::model {

inline constexpr std::size_t kDefaultContextLength = 32;

// Per class: K learnable context token embeddings followed by the frozen
// token embeddings of the class name.
class PromptBank {
public:
    PromptBank() = default;
    // Throws InvalidInput on mismatched counts, ragged widths or non-finite contexts.
    PromptBank(std::vector<Matrix> contexts, std::vector<Matrix> name_tokens);

    // Context j = the first K token embeddings of prompts[j], repeated to
    // length K when the prompt is shorter.
    static PromptBank from_prompts(std::span<const std::string> prompts, const corpus::LabelSpace& labels,
                                   const corpus::FrozenTextEncoder& encoder, std::size_t context_length);

    std::size_t num_classes() const { return contexts_.size(); }
    std::size_t context_length() const { return contexts_.empty() ? 0 : contexts_.front().value.rows(); }
    std::size_t token_dim() const { return name_tokens_.empty() ? 0 : name_tokens_.front().cols(); }

    std::vector<Parameter>& contexts() { return contexts_; }
    const std::vector<Parameter>& contexts() const { return contexts_; }
    const Matrix& name_tokens(std::size_t j) const { return name_tokens_.at(j); }

    std::vector<Parameter*> parameters();

private:
    std::vector<Parameter> contexts_;
    std::vector<Matrix> name_tokens_;
};

// (C+1) x d unit rows E_j = encoder(context_j ++ name_j). Gradients reach the
// contexts through the non-const overload only.
ag::Var encode_prompts(ag::Tape& tape, PromptBank& bank, const corpus::FrozenTextEncoder& encoder);
ag::Var encode_prompts(ag::Tape& tape, const PromptBank& bank, const corpus::FrozenTextEncoder& encoder);
zeroshot::ClassEmbeddings encode_prompts(const PromptBank& bank, const corpus::FrozenTextEncoder& encoder);

}  // namespace pathpt::model
