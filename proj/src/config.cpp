#include "refinery/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

#include "refinery/errors.hpp"
#include "refinery/random.hpp"

namespace refinery {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config field '") + key + "' has the wrong type");
    }
}

std::filesystem::path resolve(const json& j, const char* key, const std::filesystem::path& base) {
    const auto value = get_or<std::string>(j, key, "");
    if (value.empty()) return {};
    std::filesystem::path p(value);
    return p.is_absolute() || base.empty() ? p : base / p;
}

BackendSpec parse_backend(const json& j, std::uint64_t default_seed) {
    if (!j.is_object()) throw ConfigError("backend spec must be an object");
    BackendSpec spec;
    spec.expert_id = get_or<std::string>(j, "expert_id", "");
    if (spec.expert_id.empty()) throw ConfigError("backend spec lacks expert_id");
    const auto kind = get_or<std::string>(j, "kind", "simulated");
    if (kind == "simulated") {
        spec.kind = experts::BackendKind::Simulated;
        spec.seed_explicit = j.contains("seed");
        spec.simulated = simulated_params_from_json(j, default_seed);
    } else if (kind == "http") {
        spec.kind = experts::BackendKind::Http;
        auto& http = spec.http;
        http.endpoint = get_or<std::string>(j, "endpoint", "");
        if (http.endpoint.empty()) throw ConfigError("http backend '" + spec.expert_id + "' lacks endpoint");
        http.headers = get_or<std::map<std::string, std::string>>(j, "headers", {});
        http.request_timeout = std::chrono::milliseconds(get_or<long>(j, "timeout_ms", 30000));
        http.send_prompt = get_or<bool>(j, "send_prompt", false);
        if (auto it = j.find("retry"); it != j.end()) {
            http.retry.max_attempts = get_or<int>(*it, "max_attempts", 3);
            http.retry.initial_backoff = std::chrono::milliseconds(get_or<long>(*it, "initial_backoff_ms", 250));
            http.retry.backoff_multiplier = get_or<double>(*it, "backoff_multiplier", 2.0);
            http.retry.deadline = std::chrono::milliseconds(get_or<long>(*it, "deadline_ms", 60000));
        }
        if (auto it = j.find("api_key"); it != j.end()) {
            spec.api_key_header = get_or<std::string>(*it, "header", "Authorization");
            spec.api_key_env = get_or<std::string>(*it, "env", "");
            spec.api_key_prefix = get_or<std::string>(*it, "prefix", "");
            if (spec.api_key_env.empty()) throw ConfigError("api_key.env is required");
        }
    } else {
        throw ConfigError("unknown backend kind '" + kind + "'");
    }
    return spec;
}

ojson backend_to_json(const BackendSpec& spec) {
    ojson j;
    j["expert_id"] = spec.expert_id;
    if (spec.kind == experts::BackendKind::Simulated) {
        j["kind"] = "simulated";
        const auto params = to_json(spec.simulated);
        for (const auto& [k, v] : params.items()) j[k] = v;
    } else {
        j["kind"] = "http";
        j["endpoint"] = spec.http.endpoint;
        j["headers"] = spec.http.headers;
        j["timeout_ms"] = spec.http.request_timeout.count();
        j["send_prompt"] = spec.http.send_prompt;
        j["retry"] = {{"max_attempts", spec.http.retry.max_attempts},
                      {"initial_backoff_ms", spec.http.retry.initial_backoff.count()},
                      {"backoff_multiplier", spec.http.retry.backoff_multiplier},
                      {"deadline_ms", spec.http.retry.deadline.count()}};
        if (!spec.api_key_env.empty()) {
            // The key itself never enters the manifest.
            j["api_key"] = {{"header", spec.api_key_header}, {"env", spec.api_key_env}, {"prefix", spec.api_key_prefix}};
        }
    }
    return j;
}

}  // namespace

experts::SimulatedExpertParams simulated_params_from_json(const json& j, std::uint64_t default_seed) {
    experts::SimulatedExpertParams p;
    p.default_noise_std = get_or<double>(j, "default_noise_std", 0.5);
    p.noise_std = get_or<std::map<std::string, double>>(j, "noise_std", {});
    p.default_bias = get_or<double>(j, "default_bias", 0.0);
    p.bias = get_or<std::map<std::string, double>>(j, "bias", {});
    p.rewrite_bias = get_or<double>(j, "rewrite_bias", 0.0);
    p.seed = get_or<std::uint64_t>(j, "seed", default_seed);
    p.validate();
    return p;
}

ojson to_json(const experts::SimulatedExpertParams& p) {
    return ojson{{"default_noise_std", p.default_noise_std},
                 {"noise_std", p.noise_std},
                 {"default_bias", p.default_bias},
                 {"bias", p.bias},
                 {"rewrite_bias", p.rewrite_bias},
                 {"seed", p.seed}};
}

void PipelineConfig::validate() const {
    fusion.validate();
    grpo.validate();
    if (roster.empty()) throw ConfigError("roster must list at least one expert");
    std::set<std::string> ids;
    for (const auto& spec : roster) {
        if (!ids.insert(spec.expert_id).second) throw ConfigError("duplicate expert_id '" + spec.expert_id + "'");
        if (spec.kind == experts::BackendKind::Simulated) spec.simulated.validate();
    }
    if (concurrency_limit < 1) throw ConfigError("concurrency_limit must be >= 1");
    if (!(training.learning_rate > 0.0)) throw ConfigError("training.learning_rate must be > 0");
    if (training.positions < 1) throw ConfigError("training.positions must be >= 1");
    if (filter_threshold && !(*filter_threshold >= kScoreMin && *filter_threshold <= kScoreMax)) {
        throw ConfigError("filter_threshold must lie in [0,5]");
    }
}

PipelineConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    PipelineConfig c;
    c.seed = get_or<std::uint64_t>(doc, "seed", 42);
    c.concurrency_limit = get_or<std::size_t>(doc, "concurrency_limit", 4);
    c.allow_partial = get_or<bool>(doc, "allow_partial", false);
    c.allow_missing_priors = get_or<bool>(doc, "allow_missing_priors", false);
    if (auto it = doc.find("filter_threshold"); it != doc.end() && !it->is_null()) {
        c.filter_threshold = get_or<double>(doc, "filter_threshold", 0.0);
    }

    if (auto it = doc.find("paths"); it != doc.end()) {
        c.paths.corpus = resolve(*it, "corpus", base_dir);
        c.paths.priors = resolve(*it, "priors", base_dir);
        c.paths.rollouts = resolve(*it, "rollouts", base_dir);
        auto out = resolve(*it, "output_dir", base_dir);
        if (!out.empty()) c.paths.output_dir = out;
    }
    if (auto it = doc.find("roster"); it != doc.end()) {
        if (!it->is_array()) throw ConfigError("roster must be an array");
        for (const auto& spec : *it) c.roster.push_back(parse_backend(spec, c.seed));
    } else {
        for (int k = 1; k <= 3; ++k) {
            c.roster.push_back(parse_backend(json{{"expert_id", "expert_" + std::to_string(k)}}, c.seed));
        }
    }
    if (auto it = doc.find("rescorer"); it != doc.end() && !it->is_null()) c.rescorer = parse_backend(*it, c.seed);

    if (auto it = doc.find("fusion"); it != doc.end()) {
        c.fusion.epsilon = get_or<double>(*it, "epsilon", c.fusion.epsilon);
        c.fusion.lambda = get_or<double>(*it, "lambda", c.fusion.lambda);
        c.fusion.q_low_pct = get_or<double>(*it, "q_low_pct", c.fusion.q_low_pct);
        c.fusion.q_high_pct = get_or<double>(*it, "q_high_pct", c.fusion.q_high_pct);
        c.fusion.scale_max = get_or<double>(*it, "scale_max", c.fusion.scale_max);
    }
    if (auto it = doc.find("grpo"); it != doc.end()) {
        c.grpo.clip_eps = get_or<double>(*it, "clip_eps", c.grpo.clip_eps);
        c.grpo.kl_beta = get_or<double>(*it, "kl_beta", c.grpo.kl_beta);
        c.grpo.group_size = get_or<std::size_t>(*it, "group_size", c.grpo.group_size);
        c.grpo.adv_eps = get_or<double>(*it, "adv_eps", c.grpo.adv_eps);
    }
    if (auto it = doc.find("training"); it != doc.end()) {
        c.training.learning_rate = get_or<double>(*it, "learning_rate", c.training.learning_rate);
        c.training.positions = get_or<std::size_t>(*it, "positions", c.training.positions);
    }
    if (auto it = doc.find("templates"); it != doc.end()) {
        c.templates.critique = get_or<std::string>(*it, "critique", "");
        c.templates.rewrite = get_or<std::string>(*it, "rewrite", "");
    }
    c.validate();
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return parse_config(doc, path.parent_path());
}

ojson to_json(const PipelineConfig& c) {
    ojson j;
    j["paths"] = {{"corpus", c.paths.corpus.string()},
                  {"priors", c.paths.priors.string()},
                  {"output_dir", c.paths.output_dir.string()},
                  {"rollouts", c.paths.rollouts.string()}};
    j["roster"] = ojson::array();
    for (const auto& spec : c.roster) {
        auto b = backend_to_json(spec);
        if (spec.kind == experts::BackendKind::Simulated && !spec.seed_explicit) b["seed"] = c.seed;
        j["roster"].push_back(std::move(b));
    }
    j["rescorer"] = c.rescorer ? backend_to_json(*c.rescorer) : ojson(nullptr);
    j["fusion"] = {{"epsilon", c.fusion.epsilon},
                   {"lambda", c.fusion.lambda},
                   {"q_low_pct", c.fusion.q_low_pct},
                   {"q_high_pct", c.fusion.q_high_pct},
                   {"scale_max", c.fusion.scale_max}};
    j["grpo"] = {{"clip_eps", c.grpo.clip_eps},
                 {"kl_beta", c.grpo.kl_beta},
                 {"group_size", c.grpo.group_size},
                 {"adv_eps", c.grpo.adv_eps}};
    j["training"] = {{"learning_rate", c.training.learning_rate}, {"positions", c.training.positions}};
    j["templates"] = {{"critique", c.templates.critique}, {"rewrite", c.templates.rewrite}};
    j["concurrency_limit"] = c.concurrency_limit;
    j["seed"] = c.seed;
    j["allow_partial"] = c.allow_partial;
    j["allow_missing_priors"] = c.allow_missing_priors;
    j["filter_threshold"] = c.filter_threshold ? ojson(*c.filter_threshold) : ojson(nullptr);
    return j;
}

std::string config_hash(const PipelineConfig& config) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json(config).dump())));
    return buf;
}

std::shared_ptr<const experts::ExpertBackend> make_backend(const BackendSpec& spec, const PromptTemplates& templates) {
    if (spec.kind == experts::BackendKind::Simulated) {
        return std::make_shared<experts::SimulatedExpert>(spec.expert_id, spec.simulated);
    }
    auto options = spec.http;
    options.critique_template = templates.critique;
    options.rewrite_template = templates.rewrite;
    if (!spec.api_key_env.empty()) {
        const char* key = std::getenv(spec.api_key_env.c_str());
        if (key == nullptr) throw ConfigError("environment variable '" + spec.api_key_env + "' is not set");
        options.headers[spec.api_key_header] = spec.api_key_prefix + key;
    }
    return std::make_shared<experts::HttpExpert>(spec.expert_id, std::move(options));
}

namespace {

BackendSpec with_run_seed(BackendSpec spec, std::uint64_t seed) {
    if (spec.kind == experts::BackendKind::Simulated && !spec.seed_explicit) spec.simulated.seed = seed;
    return spec;
}

}  // namespace

experts::Roster make_roster(const PipelineConfig& config) {
    experts::Roster roster;
    for (const auto& spec : config.roster) roster.push_back(make_backend(with_run_seed(spec, config.seed), config.templates));
    return roster;
}

std::shared_ptr<const experts::ExpertBackend> make_rescorer(const PipelineConfig& config) {
    const auto& spec = config.rescorer ? *config.rescorer : config.roster.front();
    return make_backend(with_run_seed(spec, config.seed), config.templates);
}

}  // namespace refinery
