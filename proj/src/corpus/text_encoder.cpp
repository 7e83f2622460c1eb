#include "pathpt/corpus/text_encoder.hpp"

#include <cctype>
#include <cmath>
#include <set>

#include "pathpt/error.hpp"
#include "pathpt/random.hpp"
#include "pathpt/zeroshot/templates.hpp"

namespace pathpt::corpus {
namespace {

Matrix gaussian(Rng& rng, std::size_t rows, std::size_t cols, double std) {
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = std * standard_normal(rng);
    return m;
}

}  // namespace

FrozenTextEncoder::FrozenTextEncoder(TextEncoderConfig cfg, std::span<const std::string> vocabulary_words)
    : cfg_(cfg) {
    if (cfg_.token_dim == 0 || cfg_.output_dim == 0) throw ConfigError("text encoder dims must be positive");
    std::vector<std::string> words;
    for (const auto& w : vocabulary_words)
        if (vocab_.emplace(w, words.size()).second) words.push_back(w);
    table_.resize(words.size(), cfg_.token_dim);
    for (std::size_t i = 0; i < words.size(); ++i) word_embedding(words[i], table_.row(i));

    Rng rng(derive_seed(cfg_.seed, "text-encoder/weights"));
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg_.token_dim));
    wq_ = gaussian(rng, cfg_.token_dim, cfg_.token_dim, s);
    wk_ = gaussian(rng, cfg_.token_dim, cfg_.token_dim, s);
    wv_ = gaussian(rng, cfg_.token_dim, cfg_.token_dim, s);
    proj_ = gaussian(rng, cfg_.token_dim, cfg_.output_dim, s);
}

std::vector<std::string> FrozenTextEncoder::tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

void FrozenTextEncoder::word_embedding(std::string_view word, std::span<double> out) const {
    Rng rng(derive_seed(cfg_.seed, hash_string(word)));
    const double s = 1.0 / std::sqrt(static_cast<double>(cfg_.token_dim));
    for (double& v : out) v = s * standard_normal(rng);
}

Matrix FrozenTextEncoder::embed_tokens(std::span<const std::string> tokens) const {
    Matrix out(tokens.size(), cfg_.token_dim);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (auto it = vocab_.find(tokens[i]); it != vocab_.end()) {
            const auto src = table_.row(it->second);
            std::copy(src.begin(), src.end(), out.row(i).begin());
        } else {
            word_embedding(tokens[i], out.row(i));
        }
    }
    return out;
}

ag::Var FrozenTextEncoder::forward(ag::Tape& tape, ag::Var sequence) const {
    if (tape.value(sequence).cols() != cfg_.token_dim) throw InvalidInput("text encoder: token dim mismatch");
    if (tape.value(sequence).rows() == 0) throw InvalidInput("text encoder: empty token sequence");
    const ag::Var wq = tape.constant(wq_);
    const ag::Var wk = tape.constant(wk_);
    const ag::Var wv = tape.constant(wv_);
    const ag::Var proj = tape.constant(proj_);
    const ag::Var q = ag::matmul(tape, sequence, wq);
    const ag::Var k = ag::matmul(tape, sequence, wk);
    const ag::Var v = ag::matmul(tape, sequence, wv);
    const ag::Var scores = ag::scale(tape, ag::matmul_nt(tape, q, k), 1.0 / std::sqrt(double(cfg_.token_dim)));
    const ag::Var attn = ag::softmax_rows(tape, scores);
    const ag::Var hidden = ag::add(tape, sequence, ag::matmul(tape, attn, v));
    const ag::Var pooled = ag::mean_rows(tape, hidden);
    return ag::l2_normalize_rows(tape, ag::matmul(tape, pooled, proj));
}

std::vector<double> FrozenTextEncoder::encode(const Matrix& sequence) const {
    ag::Tape tape;
    const ag::Var out = forward(tape, tape.constant(sequence));
    const auto row = tape.value(out).row(0);
    return {row.begin(), row.end()};
}

std::vector<std::string> default_vocabulary(std::span<const std::string> label_names) {
    std::set<std::string> words;
    for (const auto& name : label_names)
        for (auto& w : FrozenTextEncoder::tokenize(name)) words.insert(std::move(w));
    for (const auto& t : zeroshot::default_templates())
        for (auto& w : FrozenTextEncoder::tokenize(t.text())) words.insert(std::move(w));
    return {words.begin(), words.end()};
}

}  // namespace pathpt::corpus
