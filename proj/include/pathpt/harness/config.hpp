#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pathpt/corpus/generator.hpp"
#include "pathpt/mil/mil.hpp"
#include "pathpt/model/pathpt_model.hpp"
#include "pathpt/training/training.hpp"

namespace pathpt::harness {

enum class Method { zeroshot, pathpt, prompt_only, linear_probe, abmil, mean_pool };

std::string_view to_string(Method m);
Method parse_method(std::string_view s);  // throws ConfigError
const std::vector<Method>& all_methods();
bool is_trained(Method m);
bool is_mil(Method m);

inline constexpr std::string_view kWorkersEnv = "PATHPT_WORKERS";

struct MethodOverride {
    nlohmann::json train = nlohmann::json::object();
    nlohmann::json model = nlohmann::json::object();
};

struct ExperimentConfig {
    // Exactly one of the two corpus sources is set.
    std::optional<corpus::CorpusConfig> synthetic;
    std::string synthetic_quality;  // preset name, empty for a hand-written config
    std::optional<std::filesystem::path> feature_store;
    std::optional<std::uint64_t> encoder_seed;  // for stores without encoder info
    std::size_t encoder_token_dim = 32;

    std::vector<Method> methods = all_methods();
    std::vector<std::size_t> k_shots{1, 5, 10};
    std::size_t n_repeats = 10;
    std::uint64_t base_seed = 7;
    std::filesystem::path output_dir = "pathpt-out";

    training::TrainConfig train;
    model::ModelConfig model;
    std::map<Method, MethodOverride> overrides;

    std::size_t n_prompt_groups = 200;
    std::size_t top_m = 100;
    std::optional<std::filesystem::path> templates;  // one template per line
    std::size_t mil_hidden = 128;
    double mil_lr = mil::kDefaultLr;  // MIL comparators only; overrides still win
    bool save_checkpoints = false;  // trained models under checkpoints/

    // Throws ConfigError.
    void validate() const;

    // Effective settings of one method after its overrides and the ablation
    // switches it implies.
    training::TrainConfig train_for(Method m) const;
    model::ModelConfig model_for(Method m) const;
};

// Structured key-value config (JSON). Relative paths resolve against the
// config file's directory. Throws ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& cfg);

// Worker threads: PATHPT_WORKERS when set (>= 1), otherwise 1.
std::size_t worker_count_from_env();

void apply_train_json(training::TrainConfig& cfg, const nlohmann::json& j);
void apply_model_json(model::ModelConfig& cfg, const nlohmann::json& j);
void apply_corpus_json(corpus::CorpusConfig& cfg, const nlohmann::json& j);

}  // namespace pathpt::harness
