// Command-line front end for the refinement pipeline.
//
// Every subcommand reads and writes JSONL files; the config file supplies the
// roster and hyperparameters, and path flags override the config's paths.
// Exit codes: 0 success, 1 validation, 2 backend failure, 3 I/O.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "refinery/config.hpp"
#include "refinery/corpus.hpp"
#include "refinery/errors.hpp"
#include "refinery/eval.hpp"
#include "refinery/experts.hpp"
#include "refinery/inject.hpp"
#include "refinery/pipeline.hpp"

namespace fs = std::filesystem;
using namespace refinery;

namespace {

struct GlobalOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> concurrency;
    bool allow_partial = false;
    bool allow_missing_priors = false;
};

PipelineConfig resolve_config(const GlobalOptions& g) {
    PipelineConfig config = g.config_path.empty() ? parse_config(nlohmann::json::object(), fs::current_path())
                                                  : load_config(g.config_path);
    const bool reseed = g.seed.has_value();
    if (reseed) config.seed = *g.seed;
    if (g.concurrency) config.concurrency_limit = *g.concurrency;
    if (g.allow_partial) config.allow_partial = true;
    if (g.allow_missing_priors) config.allow_missing_priors = true;
    config.validate();
    return config;
}

std::vector<VisionPrior> attach_priors(const PipelineConfig& config, std::span<const Sample> samples,
                                       const std::string& priors_path) {
    std::vector<VisionPrior> raw;
    const fs::path path = priors_path.empty() ? config.paths.priors : fs::path(priors_path);
    if (!path.empty()) raw = load_records<VisionPrior>(path);
    return pipeline::run_stage1(samples, raw, config.allow_missing_priors || path.empty());
}

fs::path pick(const std::string& flag, const fs::path& fallback, const char* what) {
    fs::path p = flag.empty() ? fallback : fs::path(flag);
    if (p.empty()) throw ConfigError(std::string("no ") + what + " path given");
    return p;
}

void ensure_parent(const fs::path& path) {
    if (!path.has_parent_path()) return;
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
}

void report_failures(const std::vector<experts::RequestFailure>& failures) {
    for (const auto& f : failures) {
        std::cerr << "warning: " << f.expert_id << " failed on " << f.sample_id << ": " << f.message << "\n";
    }
}

TierCounts parse_counts(const std::string& text) {
    std::vector<std::size_t> values;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
        try {
            std::size_t used = 0;
            const long long v = std::stoll(part, &used);
            if (used != part.size() || v < 0) throw std::invalid_argument(part);
            values.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ValidationError("--counts expects three non-negative integers H,M,L; got '" + text + "'");
        }
    }
    if (values.size() != 3) throw ValidationError("--counts expects H,M,L; got '" + text + "'");
    return {values[0], values[1], values[2]};
}

std::string histogram_csv(const std::vector<std::pair<std::string, eval::DistributionSummary>>& summaries) {
    std::string out = "estimator,lower,upper,count\n";
    char line[160];
    for (const auto& [name, summary] : summaries) {
        for (const auto& bin : summary.histogram) {
            std::snprintf(line, sizeof line, "%s,%.2f,%.2f,%zu\n", name.c_str(), bin.lower, bin.upper, bin.count);
            out += line;
        }
    }
    return out;
}

void run_eval(const PipelineConfig& config, const std::string& corpus_flag, const std::string& critiques_path,
              const std::string& fused_path, const std::string& items_path, const std::string& out_dir) {
    nlohmann::ordered_json report;
    std::vector<std::pair<std::string, eval::DistributionSummary>> summaries;

    std::vector<CritiqueRecord> critiques;
    if (!critiques_path.empty()) critiques = load_records<CritiqueRecord>(critiques_path);
    std::vector<std::string> expert_ids;
    std::map<std::string, std::map<std::string, double>> by_expert;  // expert -> sample -> score
    for (const auto& c : critiques) {
        if (!by_expert.count(c.expert_id)) expert_ids.push_back(c.expert_id);
        by_expert[c.expert_id][c.sample_id] = c.score;
    }
    std::sort(expert_ids.begin(), expert_ids.end());
    for (const auto& id : expert_ids) {
        std::vector<double> scores;
        for (const auto& [sample, s] : by_expert[id]) scores.push_back(s);
        summaries.emplace_back(id, eval::score_distribution_summary(scores));
    }

    std::vector<FusedLabel> fused;
    if (!fused_path.empty()) {
        fused = load_records<FusedLabel>(fused_path);
        std::vector<double> scores;
        for (const auto& f : fused) scores.push_back(f.fused_score);
        if (!scores.empty()) summaries.emplace_back("fused", eval::score_distribution_summary(scores));
    }
    auto distributions = nlohmann::ordered_json::object();
    for (const auto& [name, summary] : summaries) distributions[name] = eval::to_json(summary);
    report["distributions"] = distributions;

    // Estimator comparison against latent truth (synthetic corpora only).
    const fs::path corpus_path = corpus_flag.empty() ? config.paths.corpus : fs::path(corpus_flag);
    if (!corpus_path.empty() && !fused.empty() && !expert_ids.empty()) {
        const auto samples = load_records<Sample>(corpus_path);
        std::map<std::string, double> fused_of;
        for (const auto& f : fused) fused_of[f.sample_id] = f.fused_score;
        std::vector<double> latent;
        std::vector<double> fused_scores;
        std::vector<std::vector<double>> expert_scores(expert_ids.size());
        bool complete = true;
        for (const auto& s : samples) {
            if (!s.latent_truth || !fused_of.count(s.id)) {
                complete = false;
                break;
            }
            latent.push_back(*s.latent_truth);
            fused_scores.push_back(fused_of[s.id]);
            for (std::size_t m = 0; m < expert_ids.size(); ++m) {
                auto it = by_expert[expert_ids[m]].find(s.id);
                if (it == by_expert[expert_ids[m]].end()) {
                    complete = false;
                    break;
                }
                expert_scores[m].push_back(it->second);
            }
            if (!complete) break;
        }
        if (complete && latent.size() >= 2) {
            report["estimator_comparison"] = eval::to_json(
                eval::estimator_comparison(latent, expert_scores, expert_ids, fused_scores));
            report["fused_vs_latent"] = {{"pearson", eval::pearson_r(fused_scores, latent)},
                                         {"kendall_tau", eval::kendall_tau(fused_scores, latent)}};
        }
    }

    // Correlation of each critic with tiered reference scores.
    if (!items_path.empty()) {
        const auto items = load_records<QaItem>(items_path);
        auto tiers = nlohmann::ordered_json::object();
        for (const auto& id : expert_ids) {
            std::vector<double> scores;
            std::vector<double> reference;
            for (const auto& item : items) {
                auto it = by_expert[id].find(item.id);
                if (it == by_expert[id].end()) continue;
                scores.push_back(it->second);
                reference.push_back(item.reference_score);
            }
            if (scores.size() < 2) continue;
            tiers[id] = {{"n", scores.size()},
                         {"pearson", eval::pearson_r(scores, reference)},
                         {"kendall_tau", eval::kendall_tau(scores, reference)}};
        }
        report["tier_correlation"] = tiers;
    }

    const fs::path dir = out_dir;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    pipeline::write_text(dir / "report.json", report.dump(2) + "\n");
    pipeline::write_text(dir / "histogram.csv", histogram_csv(summaries));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-expert critique, fusion and refinement of SFT answer data"};
    app.require_subcommand(1);

    GlobalOptions g;
    app.add_option("--config", g.config_path, "Pipeline config (JSON)");
    app.add_option("--seed", g.seed, "Override the run seed");
    app.add_option("--concurrency", g.concurrency, "Override the backend concurrency limit")->check(CLI::PositiveNumber);
    app.add_flag("--allow-partial", g.allow_partial, "Continue past failed backend requests");
    app.add_flag("--allow-missing-priors", g.allow_missing_priors, "Attach empty priors to samples without one");

    std::string corpus, priors, critiques, fused, rewrites, rollouts, items, out, out_dir, counts = "160,170,170";
    double threshold = 0.0;

    auto* ingest = app.add_subcommand("ingest", "Validate a corpus and attach vision priors");
    ingest->add_option("--corpus", corpus, "Sample JSONL");
    ingest->add_option("--priors", priors, "Vision prior JSONL");
    ingest->add_option("--out", out, "Attached priors JSONL")->required();

    auto* critique = app.add_subcommand("critique", "Request one critique per (sample, expert)");
    critique->add_option("--corpus", corpus, "Sample JSONL");
    critique->add_option("--priors", priors, "Vision prior JSONL");
    critique->add_option("--out", out, "Critique JSONL")->required();

    auto* fuse = app.add_subcommand("fuse", "Fuse critiques into per-sample labels");
    fuse->add_option("--corpus", corpus, "Sample JSONL");
    fuse->add_option("--critiques", critiques, "Critique JSONL")->required();
    fuse->add_option("--out", out, "Fused label JSONL")->required();

    auto* train = app.add_subcommand("grpo-train", "Train the toy critic policy for one epoch");
    train->add_option("--fused", fused, "Fused label JSONL")->required();
    train->add_option("--rollouts", rollouts, "Rollout fixture JSONL (default: sample on-policy)");
    train->add_option("--out-dir", out_dir, "Directory for rollouts, curve and policy")->required();

    auto* inject = app.add_subcommand("inject", "Build a tiered set by error injection");
    inject->add_option("--items", items, "QA item JSONL")->required();
    inject->add_option("--counts", counts, "Tier sizes H,M,L");
    inject->add_option("--out", out, "Tiered QA item JSONL")->required();

    auto* rewrite = app.add_subcommand("rewrite", "Request one rewrite per (sample, expert)");
    rewrite->add_option("--corpus", corpus, "Sample JSONL");
    rewrite->add_option("--priors", priors, "Vision prior JSONL");
    rewrite->add_option("--critiques", critiques, "Critique JSONL")->required();
    rewrite->add_option("--fused", fused, "Fused label JSONL")->required();
    rewrite->add_option("--out", out, "Rewrite JSONL")->required();

    std::string candidates_out;
    auto* select = app.add_subcommand("select", "Rescore candidate pools and emit the refined set");
    select->add_option("--corpus", corpus, "Sample JSONL");
    select->add_option("--priors", priors, "Vision prior JSONL");
    select->add_option("--critiques", critiques, "Critique JSONL")->required();
    select->add_option("--fused", fused, "Fused label JSONL")->required();
    select->add_option("--rewrites", rewrites, "Rewrite JSONL")->required();
    select->add_option("--candidates-out", candidates_out, "Rescored candidate pool JSONL");
    select->add_option("--out", out, "Refined JSONL")->required();

    auto* evaluate = app.add_subcommand("eval", "Score distributions and correlation reports");
    evaluate->add_option("--corpus", corpus, "Sample JSONL (latent truth enables estimator comparison)");
    evaluate->add_option("--critiques", critiques, "Critique JSONL");
    evaluate->add_option("--fused", fused, "Fused label JSONL");
    evaluate->add_option("--items", items, "Tiered QA item JSONL for tier correlation");
    evaluate->add_option("--out-dir", out_dir, "Directory for report.json and histogram.csv")->required();

    std::optional<double> threshold_flag;
    auto* filter = app.add_subcommand("filter", "Threshold baseline: keep samples with fused score >= tau");
    filter->add_option("--corpus", corpus, "Sample JSONL");
    filter->add_option("--fused", fused, "Fused label JSONL")->required();
    filter->add_option("--threshold", threshold_flag, "tau (falls back to filter_threshold in the config)");
    filter->add_option("--out", out, "Filtered sample JSONL")->required();

    auto* run_all = app.add_subcommand("run-all", "Run stages 1-4 end to end");
    run_all->add_option("--out-dir", out_dir, "Override paths.output_dir");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const PipelineConfig config = resolve_config(g);
        const auto corpus_path = [&] { return pick(corpus, config.paths.corpus, "corpus"); };
        const fs::path out_path = out;
        if (!out.empty()) ensure_parent(out_path);

        if (*ingest) {
            const auto samples = load_records<Sample>(corpus_path());
            save_records(attach_priors(config, samples, priors), out_path);
            std::cout << samples.size() << " samples validated\n";
        } else if (*critique) {
            const auto samples = load_records<Sample>(corpus_path());
            const auto attached = attach_priors(config, samples, priors);
            auto batch = experts::request_critiques(samples, attached, make_roster(config),
                                                    config.concurrency_limit, config.allow_partial);
            report_failures(batch.failures);
            save_records(batch.records, out_path);
            std::cout << batch.records.size() << " critiques written\n";
        } else if (*fuse) {
            const auto samples = load_records<Sample>(corpus_path());
            std::vector<std::string> ids;
            for (const auto& spec : config.roster) ids.push_back(spec.expert_id);
            auto result = pipeline::fuse_critiques(samples, ids, load_records<CritiqueRecord>(critiques),
                                                   config.fusion, config.allow_partial);
            for (const auto& id : result.skipped) std::cerr << "warning: " << id << " lacks a full critique row\n";
            save_records(result.fused, out_path);
            std::cout << result.fused.size() << " fused labels written\n";
        } else if (*train) {
            std::vector<RolloutRecord> fixtures;
            const fs::path fixtures_path = rollouts.empty() ? config.paths.rollouts : fs::path(rollouts);
            if (!fixtures_path.empty()) fixtures = load_records<RolloutRecord>(fixtures_path);
            const auto labels = load_records<FusedLabel>(fused);
            const pipeline::Stage3Options options{config.grpo, config.training.learning_rate,
                                                  config.training.positions, config.seed};
            const auto result = pipeline::run_stage3(labels, fixtures, options);
            const fs::path dir = out_dir;
            std::error_code ec;
            fs::create_directories(dir, ec);
            if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
            save_records(result.records, dir / pipeline::files::kRollouts);
            pipeline::write_text(dir / pipeline::files::kCurve, pipeline::curve_to_csv(result.curve));
            pipeline::write_text(dir / pipeline::files::kPolicy, pipeline::policy_to_json(result.policy).dump(2) + "\n");
            std::cout << result.curve.size() << " GRPO steps\n";
        } else if (*inject) {
            const auto source = load_records<QaItem>(items);
            const auto tiered = build_tiered_set(source, parse_counts(counts), config.seed);
            save_records(tiered, out_path);
            std::cout << tiered.size() << " tiered items written\n";
        } else if (*rewrite) {
            const auto samples = load_records<Sample>(corpus_path());
            const auto attached = attach_priors(config, samples, priors);
            auto batch = experts::request_rewrites(samples, attached, load_records<CritiqueRecord>(critiques),
                                                   load_records<FusedLabel>(fused), make_roster(config),
                                                   config.concurrency_limit, config.allow_partial);
            report_failures(batch.failures);
            save_records(batch.records, out_path);
            std::cout << batch.records.size() << " rewrites written\n";
        } else if (*select) {
            const auto samples = load_records<Sample>(corpus_path());
            const auto attached = attach_priors(config, samples, priors);
            const auto critique_records = load_records<CritiqueRecord>(critiques);
            const auto labels = load_records<FusedLabel>(fused);
            std::vector<std::string> ids;
            for (const auto& spec : config.roster) ids.push_back(spec.expert_id);
            auto pools = pipeline::build_pools(samples, ids, load_records<RewriteRecord>(rewrites));
            pipeline::rescore_pools(pools, samples, attached, *make_rescorer(config), config.concurrency_limit);
            const auto refined = pipeline::select_refined(samples, pools, critique_records, labels, ids);
            if (!candidates_out.empty()) {
                ensure_parent(candidates_out);
                save_records(pools, candidates_out);
            }
            save_records(refined, out_path);
            std::cout << refined.size() << " refined entries written\n";
        } else if (*evaluate) {
            run_eval(config, corpus, critiques, fused, items, out_dir);
            std::cout << "report written to " << out_dir << "\n";
        } else if (*filter) {
            const std::optional<double> tau = threshold_flag ? threshold_flag : config.filter_threshold;
            if (!tau) throw ConfigError("filter needs --threshold or filter_threshold in the config");
            threshold = *tau;
            const auto samples = load_records<Sample>(corpus_path());
            const auto kept = pipeline::filter_by_threshold(samples, load_records<FusedLabel>(fused), threshold);
            save_records(kept, out_path);
            std::cout << kept.size() << " of " << samples.size() << " samples kept\n";
        } else if (*run_all) {
            PipelineConfig run_config = config;
            if (!out_dir.empty()) run_config.paths.output_dir = out_dir;
            const auto manifest = pipeline::run_all(run_config);
            std::cout << manifest.refined_samples << " refined entries written to "
                      << run_config.paths.output_dir.string() << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
