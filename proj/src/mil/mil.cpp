#include "pathpt/mil/mil.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pathpt/error.hpp"
#include "pathpt/model/checkpoint.hpp"
#include "pathpt/model/readout.hpp"
#include "pathpt/random.hpp"
#include "pathpt/training/losses.hpp"

namespace pathpt::mil {
namespace {

Matrix xavier(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix m(rows, cols);
    const double sd = std::sqrt(2.0 / double(rows + cols));
    for (double& v : m.flat()) v = sd * standard_normal(rng);
    return m;
}

template <class Model, class Bind>
MilPass forward_impl(ag::Tape& t, const corpus::SlideRecord& slide, Model& model, Bind bind) {
    if (slide.num_tiles() == 0) throw InvalidInput("slide " + slide.slide_id + " has no tiles");
    if (slide.feature_dim() != model.dim) throw InvalidInput("slide " + slide.slide_id + ": feature width mismatch");
    const ag::Var x = t.constant(slide.features());
    ag::Var attention;
    if (model.variant == MilVariant::mean_pool) {
        attention = t.constant(Matrix(1, slide.num_tiles(), 1.0 / double(slide.num_tiles())));
    } else {
        const ag::Var gate_v = ag::tanh(t, ag::add_row(t, ag::matmul(t, x, bind(model.attn_v)), bind(model.attn_v_bias)));
        const ag::Var gate_u =
            ag::sigmoid(t, ag::add_row(t, ag::matmul(t, x, bind(model.attn_u)), bind(model.attn_u_bias)));
        const ag::Var scores = ag::matmul(t, ag::mul(t, gate_v, gate_u), bind(model.attn_w));  // M x 1
        attention = ag::softmax_rows(t, ag::transpose(t, scores));
    }
    const ag::Var pooled = ag::matmul(t, attention, x);
    const ag::Var logits = ag::add_row(t, ag::matmul(t, pooled, bind(model.classifier)), bind(model.classifier_bias));
    return {logits, attention};
}

model::CheckpointHeader header_of(const MILModel& m) {
    model::CheckpointHeader h;
    h.kind = std::string(to_string(m.variant));
    h.feature_dim = m.dim;
    h.num_classes = m.num_subtypes;
    h.heads = m.hidden;
    return h;
}

}  // namespace

std::string_view to_string(MilVariant v) {
    return v == MilVariant::abmil_gated ? "abmil_gated" : "mean_pool";
}

MilVariant parse_mil_variant(std::string_view s) {
    if (s == "abmil_gated" || s == "abmil") return MilVariant::abmil_gated;
    if (s == "mean_pool") return MilVariant::mean_pool;
    throw ConfigError("unknown MIL variant \"" + std::string(s) + "\"");
}

MILModel MILModel::init(MilVariant variant, std::size_t dim, std::size_t num_subtypes, std::uint64_t seed,
                        std::size_t hidden) {
    if (dim == 0 || num_subtypes == 0) throw ConfigError("MIL: dimensions must be positive");
    if (variant == MilVariant::abmil_gated && hidden == 0) throw ConfigError("MIL: hidden width must be positive");
    Rng rng(derive_seed(seed, "mil-init"));
    MILModel m;
    m.variant = variant;
    m.dim = dim;
    m.num_subtypes = num_subtypes;
    if (variant == MilVariant::abmil_gated) {
        m.hidden = hidden;
        m.attn_v = Parameter("mil.attn.v", xavier(dim, hidden, rng));
        m.attn_v_bias = Parameter("mil.attn.v_bias", Matrix(1, hidden));
        m.attn_u = Parameter("mil.attn.u", xavier(dim, hidden, rng));
        m.attn_u_bias = Parameter("mil.attn.u_bias", Matrix(1, hidden));
        m.attn_w = Parameter("mil.attn.w", xavier(hidden, 1, rng));
    }
    m.classifier = Parameter("mil.classifier.weight", xavier(dim, num_subtypes, rng));
    m.classifier_bias = Parameter("mil.classifier.bias", Matrix(1, num_subtypes));
    return m;
}

std::vector<Parameter*> MILModel::parameters() {
    std::vector<Parameter*> out;
    if (variant == MilVariant::abmil_gated)
        for (Parameter* p : {&attn_v, &attn_v_bias, &attn_u, &attn_u_bias, &attn_w}) out.push_back(p);
    out.push_back(&classifier);
    out.push_back(&classifier_bias);
    return out;
}

std::vector<const Parameter*> MILModel::parameters() const {
    auto params = const_cast<MILModel*>(this)->parameters();
    return {params.begin(), params.end()};
}

void MILModel::save(const std::filesystem::path& path) const {
    const auto params = parameters();
    model::write_checkpoint(path, header_of(*this), params);
}

void MILModel::load(const std::filesystem::path& path) {
    const auto params = parameters();
    model::restore_parameters(model::read_checkpoint(path), header_of(*this), params);
}

MilPass mil_forward(ag::Tape& tape, const corpus::SlideRecord& slide, MILModel& model) {
    return forward_impl(tape, slide, model, [&](Parameter& p) { return tape.param(p); });
}

MilOutput mil_forward(const corpus::SlideRecord& slide, const MILModel& model) {
    ag::Tape tape;
    const MilPass pass = forward_impl(tape, slide, model, [&](const Parameter& p) { return tape.constant(p.value); });
    MilOutput out;
    const auto logits = tape.value(pass.logits).row(0);
    const auto attention = tape.value(pass.attention).row(0);
    out.logits.assign(logits.begin(), logits.end());
    out.attention.assign(attention.begin(), attention.end());
    out.prediction = model::argmax_rows(tape.value(pass.logits)).front() + 1;
    return out;
}

MilTrainResult mil_train(MILModel& model, std::span<const corpus::SlideRecord> slides,
                         const training::TrainConfig& cfg) {
    cfg.validate();
    MilTrainResult result;
    if (cfg.epochs == 0 || slides.empty()) return result;
    for (const auto& s : slides)
        if (s.slide_label < 1 || static_cast<std::size_t>(s.slide_label) > model.num_subtypes)
            throw InvalidInput("slide " + s.slide_id + ": label outside the model's subtypes");

    training::Adam optimizer(model.parameters());
    Rng rng(derive_seed(cfg.seed, "train-order"));
    std::vector<std::size_t> order(slides.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
        training::EpochTrace tr;
        tr.epoch = epoch;
        for (std::size_t s : order) {
            ag::Tape tape;
            const MilPass pass = mil_forward(tape, slides[s], model);
            const int target = slides[s].slide_label - 1;
            const ag::Var loss = training::balanced_ce_from_logits(tape, pass.logits, std::span<const int>(&target, 1));
            const double value = tape.value(loss)(0, 0);
            if (!std::isfinite(value))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " on slide " +
                                    slides[s].slide_id);
            tape.backward(loss);
            const double lr = training::learning_rate(cfg, result.steps, slides.size());
            optimizer.step(lr);
            ++result.steps;
            tr.labeled += value;
            tr.total += value;
            tr.lr = lr;
        }
        tr.labeled /= double(slides.size());
        tr.total /= double(slides.size());
        result.trace.push_back(tr);
    }
    return result;
}

}  // namespace pathpt::mil
