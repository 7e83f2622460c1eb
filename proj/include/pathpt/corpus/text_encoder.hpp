#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pathpt/autograd.hpp"
#include "pathpt/tensor.hpp"

namespace pathpt::corpus {

struct TextEncoderConfig {
    std::uint64_t seed = 7;
    std::size_t token_dim = 32;
    std::size_t output_dim = 64;
};

// Frozen stand-in for a vision-language text tower.
//
//   tokens -> embeddings X (T x token_dim)
//   H = X + softmax(X Wq (X Wk)^T / sqrt(token_dim)) X Wv
//   out = normalize(mean_rows(H) * P)          (1 x output_dim, unit norm)
//
// Every token embedding is a pure function of (seed, word); the vocabulary
// table caches the words known at construction. All weights are immutable.
class FrozenTextEncoder {
public:
    FrozenTextEncoder(TextEncoderConfig cfg, std::span<const std::string> vocabulary_words);

    static std::vector<std::string> tokenize(std::string_view text);

    Matrix embed_tokens(std::span<const std::string> tokens) const;
    Matrix embed_text(std::string_view text) const { return embed_tokens(tokenize(text)); }

    // Differentiable w.r.t. `sequence` only; weights enter the tape as constants.
    ag::Var forward(ag::Tape& tape, ag::Var sequence) const;

    std::vector<double> encode(const Matrix& sequence) const;
    std::vector<double> encode_text(std::string_view text) const { return encode(embed_text(text)); }

    const TextEncoderConfig& config() const { return cfg_; }
    std::size_t token_dim() const { return cfg_.token_dim; }
    std::size_t output_dim() const { return cfg_.output_dim; }
    const std::unordered_map<std::string, std::size_t>& vocab() const { return vocab_; }
    const Matrix& token_embeddings() const { return table_; }

private:
    void word_embedding(std::string_view word, std::span<double> out) const;

    TextEncoderConfig cfg_;
    std::unordered_map<std::string, std::size_t> vocab_;
    Matrix table_;  // V x token_dim
    Matrix wq_, wk_, wv_;
    Matrix proj_;  // token_dim x output_dim
};

// Vocabulary covering the label names and the built-in template registry.
std::vector<std::string> default_vocabulary(std::span<const std::string> label_names);

}  // namespace pathpt::corpus
