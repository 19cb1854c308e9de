#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "refinery/experts.hpp"
#include "refinery/fusion.hpp"
#include "refinery/grpo.hpp"

namespace refinery {

struct BackendSpec {
    std::string expert_id;
    experts::BackendKind kind = experts::BackendKind::Simulated;
    experts::SimulatedExpertParams simulated;
    bool seed_explicit = false;  // otherwise the run seed is used
    experts::HttpExpertOptions http;
    // Header filled from an environment variable when the backend is built.
    std::string api_key_header;
    std::string api_key_env;
    std::string api_key_prefix;
};

struct PipelinePaths {
    std::filesystem::path corpus;
    std::filesystem::path priors;  // empty: no priors file
    std::filesystem::path output_dir = "out";
    std::filesystem::path rollouts;  // empty: sample rollouts on-policy
};

struct TrainingOptions {
    double learning_rate = 0.5;
    std::size_t positions = 4;
};

struct PromptTemplates {
    std::string critique;
    std::string rewrite;
};

struct PipelineConfig {
    PipelinePaths paths;
    std::vector<BackendSpec> roster;
    std::optional<BackendSpec> rescorer;  // defaults to the first roster entry
    fusion::FusionConfig fusion;
    grpo::GrpoConfig grpo{0.2, 0.01, 8, 1e-8};
    TrainingOptions training;
    PromptTemplates templates;
    std::size_t concurrency_limit = 4;
    std::uint64_t seed = 42;
    bool allow_partial = false;
    bool allow_missing_priors = false;
    std::optional<double> filter_threshold;

    /// Throws ConfigError on any invalid field.
    void validate() const;
};

/// Parses a config document. Relative paths resolve against `base_dir`.
/// Throws ConfigError on unknown backend kinds, wrong types or invalid values.
PipelineConfig parse_config(const nlohmann::json& document, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);

/// Canonical form used for hashing and for the run manifest.
nlohmann::ordered_json to_json(const PipelineConfig& config);
std::string config_hash(const PipelineConfig& config);

experts::SimulatedExpertParams simulated_params_from_json(const nlohmann::json& j, std::uint64_t default_seed);
nlohmann::ordered_json to_json(const experts::SimulatedExpertParams& params);

std::shared_ptr<const experts::ExpertBackend> make_backend(const BackendSpec& spec, const PromptTemplates& templates);
experts::Roster make_roster(const PipelineConfig& config);
std::shared_ptr<const experts::ExpertBackend> make_rescorer(const PipelineConfig& config);

}  // namespace refinery
