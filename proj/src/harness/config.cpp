#include "pathpt/harness/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "pathpt/error.hpp"

namespace pathpt::harness {
namespace {

using nlohmann::json;

constexpr std::pair<Method, std::string_view> kMethodNames[] = {
    {Method::zeroshot, "zeroshot"},         {Method::pathpt, "pathpt"},
    {Method::prompt_only, "prompt_only"},   {Method::linear_probe, "linear_probe"},
    {Method::abmil, "abmil"},               {Method::mean_pool, "mean_pool"},
};

// Rejects keys outside `allowed` so typos do not pass silently.
void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) throw ConfigError(std::string(where) + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool known = false;
        for (auto a : allowed) known = known || key == a;
        if (!known) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
    }
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
}

}  // namespace

std::string_view to_string(Method m) {
    for (auto [method, name] : kMethodNames)
        if (method == m) return name;
    return "?";
}

Method parse_method(std::string_view s) {
    for (auto [method, name] : kMethodNames)
        if (name == s) return method;
    throw ConfigError("unknown method '" + std::string(s) + "'");
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> methods = {Method::zeroshot,     Method::pathpt, Method::prompt_only,
                                                Method::linear_probe, Method::abmil,  Method::mean_pool};
    return methods;
}

bool is_trained(Method m) { return m != Method::zeroshot; }
bool is_mil(Method m) { return m == Method::abmil || m == Method::mean_pool; }

void apply_train_json(training::TrainConfig& cfg, const json& j) {
    check_keys(j, "train", {"epochs", "lr", "warmup_epochs", "w_labeled", "w_unlabeled", "w_pseudo",
                            "pseudo_start_epoch", "enable_pseudo"});
    read(j, "epochs", cfg.epochs);
    read(j, "lr", cfg.lr);
    read(j, "warmup_epochs", cfg.warmup_epochs);
    read(j, "w_labeled", cfg.w_labeled);
    read(j, "w_unlabeled", cfg.w_unlabeled);
    read(j, "w_pseudo", cfg.w_pseudo);
    read(j, "pseudo_start_epoch", cfg.pseudo_start_epoch);
    read(j, "enable_pseudo", cfg.enable_pseudo);
}

void apply_model_json(model::ModelConfig& cfg, const json& j) {
    check_keys(j, "model", {"tau", "heads", "context_length", "use_spatial", "use_learnable_prompts"});
    read(j, "tau", cfg.tau);
    read(j, "heads", cfg.heads);
    read(j, "context_length", cfg.context_length);
    read(j, "use_spatial", cfg.use_spatial);
    read(j, "use_learnable_prompts", cfg.use_learnable_prompts);
}

void apply_corpus_json(corpus::CorpusConfig& cfg, const json& j) {
    check_keys(j, "corpus.synthetic", {"quality", "seed", "feature_dim", "token_dim", "num_subtypes",
                                       "slides_per_class", "grid_h", "grid_w", "sigma_align", "sigma_tile",
                                       "tumor_fraction"});
    read(j, "seed", cfg.seed);
    read(j, "feature_dim", cfg.feature_dim);
    read(j, "token_dim", cfg.token_dim);
    read(j, "num_subtypes", cfg.num_subtypes);
    read(j, "slides_per_class", cfg.slides_per_class);
    read(j, "grid_h", cfg.grid_h);
    read(j, "grid_w", cfg.grid_w);
    read(j, "sigma_align", cfg.sigma_align);
    read(j, "sigma_tile", cfg.sigma_tile);
    read(j, "tumor_fraction", cfg.tumor_fraction);
}

void ExperimentConfig::validate() const {
    if (synthetic.has_value() == feature_store.has_value())
        throw ConfigError("config: exactly one of corpus.synthetic and corpus.feature_store is required");
    if (synthetic) synthetic->validate();
    if (methods.empty()) throw ConfigError("config: methods is empty");
    std::set<Method> seen_methods(methods.begin(), methods.end());
    if (seen_methods.size() != methods.size()) throw ConfigError("config: duplicate method");
    if (k_shots.empty()) throw ConfigError("config: k_shots is empty");
    std::set<std::size_t> seen_k;
    for (auto k : k_shots) {
        if (k != 1 && k != 5 && k != 10) throw ConfigError("config: k_shots must be drawn from {1, 5, 10}");
        if (!seen_k.insert(k).second) throw ConfigError("config: duplicate k in k_shots");
    }
    if (n_repeats == 0) throw ConfigError("config: n_repeats must be >= 1");
    if (n_prompt_groups == 0) throw ConfigError("config: n_prompt_groups must be >= 1");
    if (top_m == 0 || top_m > n_prompt_groups) throw ConfigError("config: top_m must be in [1, n_prompt_groups]");
    if (mil_hidden == 0) throw ConfigError("config: mil_hidden must be >= 1");
    if (!(mil_lr > 0.0) || !std::isfinite(mil_lr)) throw ConfigError("config: mil_lr must be positive");
    if (output_dir.empty()) throw ConfigError("config: output_dir is empty");
    for (Method m : methods) {
        if (!is_trained(m)) continue;
        for (auto k : k_shots) {
            auto t = train_for(m);
            t.k_shot = k;
            t.validate();
        }
    }
    if (synthetic)
        for (Method m : methods)
            if (!is_mil(m)) model_for(m).validate(synthetic->feature_dim);
}

training::TrainConfig ExperimentConfig::train_for(Method m) const {
    auto cfg = train;
    if (is_mil(m)) cfg.lr = mil_lr;
    if (auto it = overrides.find(m); it != overrides.end()) apply_train_json(cfg, it->second.train);
    if (is_mil(m)) cfg.enable_pseudo = false;
    return cfg;
}

model::ModelConfig ExperimentConfig::model_for(Method m) const {
    auto cfg = model;
    if (auto it = overrides.find(m); it != overrides.end()) apply_model_json(cfg, it->second.model);
    if (m == Method::prompt_only) cfg.use_spatial = false;
    if (m == Method::linear_probe) {
        cfg.use_spatial = false;
        cfg.use_learnable_prompts = false;
    }
    return cfg;
}

ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
    check_keys(j, "config", {"corpus", "methods", "k_shots", "n_repeats", "base_seed", "output_dir", "train",
                             "model", "overrides", "prompts", "mil_hidden", "mil_lr", "save_checkpoints"});
    ExperimentConfig cfg;
    if (!j.contains("corpus")) throw ConfigError("config: missing 'corpus'");
    const json& c = j.at("corpus");
    check_keys(c, "corpus", {"synthetic", "feature_store", "encoder_seed", "encoder_token_dim"});
    if (c.contains("synthetic")) {
        const json& s = c.at("synthetic");
        corpus::CorpusConfig cc;
        if (s.contains("quality")) {
            cfg.synthetic_quality = s.at("quality").get<std::string>();
            std::uint64_t seed = cc.seed;
            read(s, "seed", seed);
            cc = corpus::CorpusConfig::preset(corpus::parse_base_quality(cfg.synthetic_quality), seed);
        }
        apply_corpus_json(cc, s);
        cfg.synthetic = cc;
    }
    if (c.contains("feature_store"))
        cfg.feature_store = resolve(base_dir, c.at("feature_store").get<std::string>());
    if (c.contains("encoder_seed")) cfg.encoder_seed = c.at("encoder_seed").get<std::uint64_t>();
    read(c, "encoder_token_dim", cfg.encoder_token_dim);

    if (j.contains("methods")) {
        cfg.methods.clear();
        for (const auto& m : j.at("methods")) cfg.methods.push_back(parse_method(m.get<std::string>()));
    }
    read(j, "k_shots", cfg.k_shots);
    read(j, "n_repeats", cfg.n_repeats);
    read(j, "base_seed", cfg.base_seed);
    if (j.contains("output_dir")) cfg.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    if (j.contains("train")) apply_train_json(cfg.train, j.at("train"));
    if (j.contains("model")) apply_model_json(cfg.model, j.at("model"));
    if (j.contains("overrides")) {
        check_keys(j.at("overrides"), "overrides", {"zeroshot", "pathpt", "prompt_only", "linear_probe", "abmil",
                                                    "mean_pool"});
        for (const auto& [name, o] : j.at("overrides").items()) {
            check_keys(o, "overrides." + name, {"train", "model"});
            MethodOverride mo;
            if (o.contains("train")) mo.train = o.at("train");
            if (o.contains("model")) mo.model = o.at("model");
            cfg.overrides[parse_method(name)] = mo;
        }
    }
    if (j.contains("prompts")) {
        const json& p = j.at("prompts");
        check_keys(p, "prompts", {"n_groups", "top_m", "templates"});
        read(p, "n_groups", cfg.n_prompt_groups);
        read(p, "top_m", cfg.top_m);
        if (p.contains("templates")) cfg.templates = resolve(base_dir, p.at("templates").get<std::string>());
    }
    read(j, "mil_hidden", cfg.mil_hidden);
    read(j, "mil_lr", cfg.mil_lr);
    read(j, "save_checkpoints", cfg.save_checkpoints);
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_config(j, path.parent_path());
}

json to_json(const ExperimentConfig& cfg) {
    json j;
    json corpus_j = json::object();
    if (cfg.synthetic) {
        const auto& s = *cfg.synthetic;
        json sj = {{"seed", s.seed},
                   {"feature_dim", s.feature_dim},
                   {"token_dim", s.token_dim},
                   {"num_subtypes", s.num_subtypes},
                   {"slides_per_class", s.slides_per_class},
                   {"grid_h", s.grid_h},
                   {"grid_w", s.grid_w},
                   {"sigma_align", s.sigma_align},
                   {"sigma_tile", s.sigma_tile},
                   {"tumor_fraction", s.tumor_fraction}};
        if (!cfg.synthetic_quality.empty()) sj["quality"] = cfg.synthetic_quality;
        corpus_j["synthetic"] = sj;
    }
    if (cfg.feature_store) corpus_j["feature_store"] = cfg.feature_store->string();
    if (cfg.encoder_seed) corpus_j["encoder_seed"] = *cfg.encoder_seed;
    corpus_j["encoder_token_dim"] = cfg.encoder_token_dim;
    j["corpus"] = corpus_j;
    json methods = json::array();
    for (Method m : cfg.methods) methods.push_back(std::string(to_string(m)));
    j["methods"] = methods;
    j["k_shots"] = cfg.k_shots;
    j["n_repeats"] = cfg.n_repeats;
    j["base_seed"] = cfg.base_seed;
    j["output_dir"] = cfg.output_dir.string();
    const auto& t = cfg.train;
    j["train"] = {{"epochs", t.epochs},
                  {"lr", t.lr},
                  {"warmup_epochs", t.warmup_epochs},
                  {"w_labeled", t.w_labeled},
                  {"w_unlabeled", t.w_unlabeled},
                  {"w_pseudo", t.w_pseudo},
                  {"pseudo_start_epoch", t.pseudo_start_epoch},
                  {"enable_pseudo", t.enable_pseudo}};
    const auto& m = cfg.model;
    j["model"] = {{"tau", m.tau},
                  {"heads", m.heads},
                  {"context_length", m.context_length},
                  {"use_spatial", m.use_spatial},
                  {"use_learnable_prompts", m.use_learnable_prompts}};
    json overrides = json::object();
    for (const auto& [method, o] : cfg.overrides)
        overrides[std::string(to_string(method))] = {{"train", o.train}, {"model", o.model}};
    j["overrides"] = overrides;
    json prompts = {{"n_groups", cfg.n_prompt_groups}, {"top_m", cfg.top_m}};
    if (cfg.templates) prompts["templates"] = cfg.templates->string();
    j["prompts"] = prompts;
    j["mil_hidden"] = cfg.mil_hidden;
    j["mil_lr"] = cfg.mil_lr;
    j["save_checkpoints"] = cfg.save_checkpoints;
    return j;
}

std::size_t worker_count_from_env() {
    const char* env = std::getenv(std::string(kWorkersEnv).c_str());
    if (env == nullptr || *env == '\0') return 1;
    std::string_view s(env);
    std::size_t n = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), n);
    if (ec != std::errc() || ptr != s.data() + s.size() || n == 0)
        throw ConfigError(std::string(kWorkersEnv) + " must be a positive integer, got '" + env + "'");
    return n;
}

}  // namespace pathpt::harness
