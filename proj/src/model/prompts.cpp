#include "pathpt/model/prompts.hpp"

#include <cmath>

#include "pathpt/error.hpp"

namespace pathpt::model {
namespace {

template <class Bank, class Bind>
ag::Var encode_impl(ag::Tape& t, Bank& bank, const corpus::FrozenTextEncoder& encoder, Bind bind) {
    if (bank.num_classes() == 0) throw InvalidInput("encode_prompts: empty prompt bank");
    if (bank.token_dim() != encoder.token_dim()) throw InvalidInput("encode_prompts: token width differs from encoder");
    std::vector<ag::Var> rows;
    rows.reserve(bank.num_classes());
    for (std::size_t j = 0; j < bank.num_classes(); ++j) {
        const std::array<ag::Var, 2> parts{bind(bank.contexts()[j]), t.constant(bank.name_tokens(j))};
        rows.push_back(encoder.forward(t, ag::concat_rows(t, parts)));
    }
    return ag::concat_rows(t, rows);
}

}  // namespace

PromptBank::PromptBank(std::vector<Matrix> contexts, std::vector<Matrix> name_tokens) : name_tokens_(std::move(name_tokens)) {
    if (contexts.size() != name_tokens_.size() || contexts.empty())
        throw InvalidInput("PromptBank: need one context and one name per class");
    const std::size_t width = name_tokens_.front().cols();
    const std::size_t k = contexts.front().rows();
    for (std::size_t j = 0; j < contexts.size(); ++j) {
        if (name_tokens_[j].rows() == 0) throw InvalidInput("PromptBank: empty class name for class " + std::to_string(j));
        if (name_tokens_[j].cols() != width || contexts[j].rows() != k || (k > 0 && contexts[j].cols() != width))
            throw InvalidInput("PromptBank: ragged context or name shapes");
        for (double v : contexts[j].flat())
            if (!std::isfinite(v)) throw InvalidInput("PromptBank: non-finite context");
        if (k == 0) contexts[j].resize(0, width);
        contexts_.emplace_back("prompt.context." + std::to_string(j), std::move(contexts[j]));
    }
}

PromptBank PromptBank::from_prompts(std::span<const std::string> prompts, const corpus::LabelSpace& labels,
                                    const corpus::FrozenTextEncoder& encoder, std::size_t context_length) {
    if (prompts.size() != labels.size()) throw InvalidInput("PromptBank: need one prompt per class");
    std::vector<Matrix> contexts, names;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        const Matrix tokens = encoder.embed_text(prompts[j]);
        if (tokens.rows() == 0) throw InvalidInput("PromptBank: prompt without tokens");
        Matrix ctx(context_length, encoder.token_dim());
        for (std::size_t r = 0; r < context_length; ++r) {
            const auto src = tokens.row(r % tokens.rows());
            std::copy(src.begin(), src.end(), ctx.row(r).begin());
        }
        contexts.push_back(std::move(ctx));
        names.push_back(encoder.embed_text(labels.name(j)));
    }
    return PromptBank(std::move(contexts), std::move(names));
}

std::vector<Parameter*> PromptBank::parameters() {
    std::vector<Parameter*> out;
    for (auto& c : contexts_) out.push_back(&c);
    return out;
}

ag::Var encode_prompts(ag::Tape& tape, PromptBank& bank, const corpus::FrozenTextEncoder& encoder) {
    return encode_impl(tape, bank, encoder, [&](Parameter& p) { return tape.param(p); });
}

ag::Var encode_prompts(ag::Tape& tape, const PromptBank& bank, const corpus::FrozenTextEncoder& encoder) {
    return encode_impl(tape, bank, encoder, [&](const Parameter& p) { return tape.constant(p.value); });
}

zeroshot::ClassEmbeddings encode_prompts(const PromptBank& bank, const corpus::FrozenTextEncoder& encoder) {
    ag::Tape tape;
    const ag::Var e = encode_prompts(tape, bank, encoder);
    return zeroshot::ClassEmbeddings(tape.value(e));
}

}  // namespace pathpt::model
