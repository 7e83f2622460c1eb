#include "pathpt/model/pathpt_model.hpp"

#include "pathpt/error.hpp"
#include "pathpt/model/checkpoint.hpp"

namespace pathpt::model {

void ModelConfig::validate(std::size_t feature_dim) const {
    if (!(tau > 0.0)) throw ConfigError("model: tau must be positive");
    if (heads == 0 || feature_dim % heads != 0) throw ConfigError("model: heads must divide the feature dimension");
}

LinearProbe LinearProbe::from_embeddings(const zeroshot::ClassEmbeddings& embeddings, double tau) {
    LinearProbe p;
    Matrix w = embeddings.matrix();
    for (double& v : w.flat()) v /= tau;
    p.weight = Parameter("probe.weight", std::move(w));
    p.bias = Parameter("probe.bias", Matrix(1, embeddings.num_classes()));
    return p;
}

PathPTModel::PathPTModel(ModelConfig cfg, const corpus::FrozenTextEncoder& encoder, PromptBank bank,
                         const zeroshot::ClassEmbeddings& zero_shot, std::uint64_t seed)
    : cfg_(cfg), encoder_(&encoder), dim_(zero_shot.dim()), num_classes_(zero_shot.num_classes()),
      bank_(std::move(bank)), fixed_embeddings_(zero_shot) {
    cfg_.validate(dim_);
    if (encoder.output_dim() != dim_) throw ConfigError("model: encoder width differs from feature dimension");
    if (bank_.num_classes() != num_classes_) throw ConfigError("model: prompt bank does not cover every class");
    if (cfg_.use_spatial) spatial_ = SpatialAggregatorParams::init(dim_, cfg_.heads, seed);
    if (!cfg_.use_learnable_prompts) probe_ = LinearProbe::from_embeddings(zero_shot, cfg_.tau);
}

template <class Self, class Bind>
ForwardPass PathPTModel::forward_impl(Self& self, ag::Tape& t, const corpus::SlideRecord& slide, Bind bind) {
    if (slide.num_tiles() == 0) throw InvalidInput("slide " + slide.slide_id + " has no tiles");
    ag::Var features = self.cfg_.use_spatial ? spatial_forward(t, slide, self.spatial_) : t.constant(slide.features());
    if (!self.cfg_.use_spatial) (void)grid_layout(slide);
    const ag::Var unit = ag::l2_normalize_rows(t, features);

    if (!self.cfg_.use_learnable_prompts) {
        const ag::Var logits = ag::add_row(t, ag::matmul_nt(t, unit, bind(self.probe_.weight)), bind(self.probe_.bias));
        return {logits, logits};
    }
    const ag::Var e = encode_prompts(t, self.bank_, *self.encoder_);
    const ag::Var cos = ag::matmul_nt(t, unit, e);
    return {ag::scale(t, cos, 1.0 / self.cfg_.tau), cos};
}

ForwardPass PathPTModel::forward(ag::Tape& tape, const corpus::SlideRecord& slide) {
    return forward_impl(*this, tape, slide, [&](Parameter& p) { return tape.param(p); });
}

ForwardPass PathPTModel::forward(ag::Tape& tape, const corpus::SlideRecord& slide) const {
    return forward_impl(*this, tape, slide, [&](const Parameter& p) { return tape.constant(p.value); });
}

zeroshot::ClassEmbeddings PathPTModel::class_embeddings() const {
    return cfg_.use_learnable_prompts ? encode_prompts(bank_, *encoder_) : fixed_embeddings_;
}

SlidePrediction PathPTModel::predict_slide(const corpus::SlideRecord& slide) const {
    ag::Tape tape;
    const ForwardPass pass = forward(tape, slide);
    SlidePrediction out;
    out.probabilities = softmax_scaled(tape.value(pass.logits), 1.0);
    out.labels = argmax_rows(tape.value(pass.scores));
    zeroshot::TileEvidence evidence{out.labels, out.probabilities};
    out.slide_label = zeroshot::aggregate_wsi(evidence, {zeroshot::Readout::tumor_ratio, 1}, num_classes_);
    return out;
}

std::vector<Parameter*> PathPTModel::parameters() {
    std::vector<Parameter*> out;
    if (cfg_.use_spatial)
        for (Parameter* p : spatial_.parameters()) out.push_back(p);
    if (cfg_.use_learnable_prompts) {
        for (Parameter* p : bank_.parameters()) out.push_back(p);
    } else {
        out.push_back(&probe_.weight);
        out.push_back(&probe_.bias);
    }
    return out;
}

std::vector<const Parameter*> PathPTModel::parameters() const {
    auto params = const_cast<PathPTModel*>(this)->parameters();
    return {params.begin(), params.end()};
}

namespace {

CheckpointHeader header_of(const PathPTModel& m, const corpus::FrozenTextEncoder& encoder) {
    CheckpointHeader h;
    h.kind = "pathpt";
    h.feature_dim = m.feature_dim();
    h.token_dim = encoder.token_dim();
    h.context_length = m.bank().context_length();
    h.num_classes = m.num_classes();
    h.heads = m.config().heads;
    h.tau = m.config().tau;
    h.use_spatial = m.config().use_spatial;
    h.use_learnable_prompts = m.config().use_learnable_prompts;
    return h;
}

}  // namespace

void PathPTModel::save(const std::filesystem::path& path) const {
    const auto params = parameters();
    write_checkpoint(path, header_of(*this, *encoder_), params);
}

void PathPTModel::load(const std::filesystem::path& path) {
    const auto params = parameters();
    restore_parameters(read_checkpoint(path), header_of(*this, *encoder_), params);
}

}  // namespace pathpt::model
