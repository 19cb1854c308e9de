#include "refinery/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "refinery/errors.hpp"
#include "refinery/rewards.hpp"

namespace refinery::pipeline {

namespace fs = std::filesystem;

namespace {

std::string join_ids(const std::vector<std::string>& ids, std::size_t limit = 10) {
    std::string out;
    for (std::size_t i = 0; i < ids.size() && i < limit; ++i) {
        if (i) out += ", ";
        out += ids[i];
    }
    if (ids.size() > limit) out += ", ... (" + std::to_string(ids.size()) + " total)";
    return out;
}

std::vector<std::string> roster_ids(const experts::Roster& roster) {
    std::vector<std::string> ids;
    ids.reserve(roster.size());
    for (const auto& backend : roster) ids.push_back(backend->expert_id());
    return ids;
}

std::string format_double(double value) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.17g", value);
    return buffer;
}

std::map<std::string, const FusedLabel*> index_fused(std::span<const FusedLabel> fused) {
    std::map<std::string, const FusedLabel*> out;
    for (const auto& f : fused) out[f.sample_id] = &f;
    return out;
}

}  // namespace

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    out.flush();
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<VisionPrior> run_stage1(std::span<const Sample> samples, std::span<const VisionPrior> priors,
                                    bool allow_missing) {
    std::map<std::string, const VisionPrior*> by_id;
    for (const auto& p : priors) by_id[p.sample_id] = &p;

    std::vector<VisionPrior> attached;
    std::vector<std::string> missing;
    attached.reserve(samples.size());
    for (const auto& s : samples) {
        auto it = by_id.find(s.id);
        if (it != by_id.end()) {
            attached.push_back(*it->second);
        } else {
            missing.push_back(s.id);
            attached.push_back(VisionPrior{s.id, {}, {}});
        }
    }
    if (!missing.empty() && !allow_missing) {
        throw ValidationError("missing vision priors for sample ids: " + join_ids(missing));
    }
    return attached;
}

fusion::ScoreMatrix build_score_matrix(std::span<const Sample> samples, std::span<const std::string> expert_ids,
                                       std::span<const CritiqueRecord> critiques) {
    std::map<std::string, std::size_t> row;
    for (std::size_t n = 0; n < samples.size(); ++n) row[samples[n].id] = n;
    std::map<std::string, std::size_t> col;
    for (std::size_t m = 0; m < expert_ids.size(); ++m) col[expert_ids[m]] = m;

    fusion::ScoreMatrix matrix(samples.size(), expert_ids.size());
    for (const auto& c : critiques) {
        auto r = row.find(c.sample_id);
        auto k = col.find(c.expert_id);
        if (r == row.end() || k == col.end()) {
            throw ValidationError("critique (" + c.sample_id + ", " + c.expert_id + ") matches no sample/expert");
        }
        matrix(r->second, k->second) = c.score;
    }
    return matrix;
}

Stage2Result fuse_critiques(std::span<const Sample> samples, std::span<const std::string> expert_ids,
                            std::vector<CritiqueRecord> critiques, const fusion::FusionConfig& config,
                            bool allow_partial) {
    Stage2Result result;
    const auto full = build_score_matrix(samples, expert_ids, critiques);

    std::vector<std::size_t> keep;
    for (std::size_t n = 0; n < full.samples(); ++n) {
        const auto row = full.row(n);
        const bool complete = std::none_of(row.begin(), row.end(), [](double v) { return std::isnan(v); });
        if (complete) {
            keep.push_back(n);
        } else if (allow_partial) {
            result.skipped.push_back(samples[n].id);
        } else {
            full.require_complete();
        }
    }

    fusion::ScoreMatrix scores(keep.size(), expert_ids.size());
    std::vector<std::string> domains;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        for (std::size_t m = 0; m < expert_ids.size(); ++m) scores(i, m) = full(keep[i], m);
        domains.push_back(samples[keep[i]].domain);
        ids.push_back(samples[keep[i]].id);
    }
    if (!keep.empty()) result.fused = fusion::fuse_pipeline(scores, domains, ids, expert_ids, config);
    result.critiques = std::move(critiques);
    return result;
}

Stage2Result run_stage2(std::span<const Sample> samples, std::span<const VisionPrior> priors,
                        const experts::Roster& roster, const fusion::FusionConfig& config,
                        std::size_t concurrency_limit, bool allow_partial) {
    config.validate();
    auto batch = experts::request_critiques(samples, priors, roster, concurrency_limit, allow_partial);
    const auto ids = roster_ids(roster);
    return fuse_critiques(samples, ids, std::move(batch.records), config, allow_partial);
}

double expected_fixture_reward(const grpo::ToyPolicy& policy, std::span<const RolloutRecord> fixtures,
                               std::span<const FusedLabel> fused) {
    const auto labels = index_fused(fused);
    std::map<std::string, std::pair<double, double>> per_question;  // (sum w*R, sum w)
    std::vector<std::string> order;
    for (const auto& r : fixtures) {
        const auto tokens = grpo::tokenize(r.text, policy.positions());
        auto it = labels.find(r.question_id);
        const double target = it != labels.end() ? it->second->fused_score : r.fused_score;
        const double w = std::exp(policy.sequence_log_prob(tokens));
        auto [slot, inserted] = per_question.try_emplace(r.question_id, 0.0, 0.0);
        if (inserted) order.push_back(r.question_id);
        slot->second.first += w * rewards::total_reward(r.text, target);
        slot->second.second += w;
    }
    if (order.empty()) return 0.0;
    double total = 0.0;
    for (const auto& q : order) {
        const auto& [num, den] = per_question.at(q);
        total += den > 0.0 ? num / den : 0.0;
    }
    return total / static_cast<double>(order.size());
}

Stage3Result run_stage3(std::span<const FusedLabel> fused, std::span<const RolloutRecord> fixtures,
                        const Stage3Options& options) {
    options.grpo.validate();
    if (options.positions == 0) throw ConfigError("training.positions must be positive");
    if (!(options.learning_rate > 0.0)) throw ConfigError("training.learning_rate must be positive");

    Stage3Result result;
    result.initial = grpo::ToyPolicy(options.positions, grpo::kVocabSize);
    result.policy = result.initial;
    const auto& ref = result.initial;
    const auto labels = index_fused(fused);

    auto record_step = [&](const grpo::RolloutGroup& group, double mean_reward) {
        const grpo::ToyPolicy next =
            grpo::grpo_step(std::span(&group, 1), result.policy, ref, options.grpo, options.learning_rate);
        result.policy = next;
        CurveRow row;
        row.step = result.curve.size() + 1;
        row.objective = grpo::grpo_objective(group, result.policy, ref, options.grpo);
        row.kl = grpo::group_kl(group, result.policy, ref);
        row.mean_reward = mean_reward;
        result.curve.push_back(row);
    };

    if (!fixtures.empty()) {
        std::vector<std::string> order;
        std::map<std::string, std::vector<const RolloutRecord*>> grouped;
        for (const auto& r : fixtures) {
            auto [it, inserted] = grouped.try_emplace(r.question_id);
            if (inserted) order.push_back(r.question_id);
            it->second.push_back(&r);
        }
        for (const auto& r : fixtures) {
            auto it = labels.find(r.question_id);
            const double target = it != labels.end() ? it->second->fused_score : r.fused_score;
            RolloutRecord out = r;
            out.fused_score = target;
            out.reward = rewards::total_reward(r.text, target);
            result.records.push_back(std::move(out));
        }
        std::map<std::string, std::vector<double>> rewards_of;
        for (const auto& rec : result.records) rewards_of[rec.question_id].push_back(*rec.reward);
        for (const auto& q : order) {
            std::vector<std::vector<int>> sequences;
            for (const auto* r : grouped.at(q)) sequences.push_back(grpo::tokenize(r->text, options.positions));
            const auto group = grpo::make_group(q, std::move(sequences), rewards_of.at(q), result.policy);
            record_step(group, 0.0);
            // Evaluated after the update so the curve tracks the trained policy.
            result.curve.back().mean_reward = expected_fixture_reward(result.policy, fixtures, fused);
        }
        return result;
    }

    for (const auto& label : fused) {
        Rng rng(derive_seed(options.seed, "stage3-rollouts", label.sample_id));
        std::vector<std::vector<int>> sequences;
        std::vector<double> group_rewards;
        for (std::size_t g = 0; g < options.grpo.group_size; ++g) {
            auto tokens = result.policy.sample(rng);
            const auto text = grpo::render_tokens(tokens);
            const double reward = rewards::total_reward(text, label.fused_score);
            result.records.push_back(RolloutRecord{label.sample_id, text, label.fused_score, reward});
            sequences.push_back(std::move(tokens));
            group_rewards.push_back(reward);
        }
        const double mean = std::accumulate(group_rewards.begin(), group_rewards.end(), 0.0) /
                            static_cast<double>(group_rewards.size());
        const auto group = grpo::make_group(label.sample_id, std::move(sequences), group_rewards, result.policy);
        record_step(group, mean);
    }
    return result;
}

std::string curve_to_csv(std::span<const CurveRow> curve) {
    std::string out = "step,objective,mean_reward,kl\n";
    for (const auto& row : curve) {
        out += std::to_string(row.step) + "," + format_double(row.objective) + "," + format_double(row.mean_reward) +
               "," + format_double(row.kl) + "\n";
    }
    return out;
}

nlohmann::ordered_json policy_to_json(const grpo::ToyPolicy& policy) {
    nlohmann::ordered_json j;
    j["positions"] = policy.positions();
    j["vocab"] = policy.vocab();
    j["theta"] = std::vector<double>(policy.theta().begin(), policy.theta().end());
    return j;
}

Selection select_best(const CandidatePool& pool) {
    if (pool.candidates.empty()) throw ValidationError("candidate pool for '" + pool.sample_id + "' is empty");
    if (pool.rescored.size() != pool.candidates.size()) {
        throw ValidationError("candidate pool for '" + pool.sample_id + "' is not fully rescored");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.rescored.size(); ++i) {
        if (pool.rescored[i] > pool.rescored[best]) best = i;
    }
    return {best, pool.candidates[best].source, pool.candidates[best].answer};
}

std::vector<CandidatePool> build_pools(std::span<const Sample> samples, std::span<const std::string> expert_ids,
                                       std::span<const RewriteRecord> rewrites) {
    std::map<std::pair<std::string, std::string>, const RewriteRecord*> by_key;
    for (const auto& r : rewrites) by_key[{r.sample_id, r.expert_id}] = &r;

    std::vector<CandidatePool> pools;
    pools.reserve(samples.size());
    for (const auto& s : samples) {
        CandidatePool pool;
        pool.sample_id = s.id;
        pool.candidates.push_back(Candidate{"original", s.answer});
        for (std::size_t k = 0; k < expert_ids.size(); ++k) {
            auto it = by_key.find({s.id, expert_ids[k]});
            if (it == by_key.end()) continue;
            pool.candidates.push_back(Candidate{"expert_" + std::to_string(k + 1), it->second->answer});
        }
        pools.push_back(std::move(pool));
    }
    return pools;
}

void rescore_pools(std::vector<CandidatePool>& pools, std::span<const Sample> samples,
                   std::span<const VisionPrior> priors, const experts::ExpertBackend& rescorer,
                   std::size_t concurrency_limit) {
    std::map<std::string, std::size_t> sample_index;
    for (std::size_t i = 0; i < samples.size(); ++i) sample_index[samples[i].id] = i;

    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    for (std::size_t p = 0; p < pools.size(); ++p) {
        if (!sample_index.count(pools[p].sample_id)) {
            throw ValidationError("candidate pool '" + pools[p].sample_id + "' matches no sample");
        }
        pools[p].rescored.assign(pools[p].candidates.size(), 0.0);
        for (std::size_t c = 0; c < pools[p].candidates.size(); ++c) jobs.emplace_back(p, c);
    }
    experts::parallel_for(jobs.size(), concurrency_limit, [&](std::size_t k) {
        auto [p, c] = jobs[k];
        const std::size_t i = sample_index.at(pools[p].sample_id);
        const experts::CritiqueRequest request{samples[i], pools[p].candidates[c].answer,
                                               experts::serialize_vision_prior(priors[i])};
        pools[p].rescored[c] = rescorer.critique(request).score;
    });
}

std::vector<RefinedEntry> select_refined(std::span<const Sample> samples, std::span<const CandidatePool> pools,
                                         std::span<const CritiqueRecord> critiques,
                                         std::span<const FusedLabel> fused,
                                         std::span<const std::string> expert_ids) {
    std::map<std::string, const Sample*> sample_of;
    for (const auto& s : samples) sample_of[s.id] = &s;
    std::map<std::pair<std::string, std::string>, const CritiqueRecord*> critique_of;
    for (const auto& c : critiques) critique_of[{c.sample_id, c.expert_id}] = &c;
    const auto labels = index_fused(fused);

    std::vector<RefinedEntry> refined;
    refined.reserve(pools.size());
    for (const auto& pool : pools) {
        const auto sample_it = sample_of.find(pool.sample_id);
        const auto label_it = labels.find(pool.sample_id);
        if (sample_it == sample_of.end() || label_it == labels.end()) {
            throw ValidationError("no sample or fused label for pool '" + pool.sample_id + "'");
        }
        const Sample& sample = *sample_it->second;
        const FusedLabel& label = *label_it->second;
        const Selection choice = select_best(pool);

        std::string rationale_expert;
        if (choice.source == "original") {
            // Highest shrunk weight in the sample's domain; first roster slot on ties.
            const auto domain_it = label.weights_used.find(sample.domain);
            double best = -1.0;
            for (const auto& id : expert_ids) {
                double w = 0.0;
                if (domain_it != label.weights_used.end()) {
                    auto w_it = domain_it->second.find(id);
                    if (w_it != domain_it->second.end()) w = w_it->second;
                }
                if (w > best) {
                    best = w;
                    rationale_expert = id;
                }
            }
        } else {
            const std::size_t k = std::stoul(choice.source.substr(std::string("expert_").size()));
            rationale_expert = expert_ids[k - 1];
        }
        std::string rationale;
        if (auto it = critique_of.find({sample.id, rationale_expert}); it != critique_of.end()) {
            rationale = it->second->rationale;
        }
        refined.push_back(RefinedEntry{sample.id, sample.image_ref, sample.question, choice.answer,
                                       label.fused_score, std::move(rationale), choice.source});
    }
    return refined;
}

Stage4Result run_stage4(std::span<const Sample> samples, std::span<const VisionPrior> priors,
                        std::span<const CritiqueRecord> critiques, std::span<const FusedLabel> fused,
                        const experts::Roster& roster, const experts::ExpertBackend& rescorer,
                        std::size_t concurrency_limit, bool allow_partial) {
    Stage4Result result;
    auto batch = experts::request_rewrites(samples, priors, critiques, fused, roster, concurrency_limit, allow_partial);
    result.rewrites = std::move(batch.records);
    const auto ids = roster_ids(roster);
    result.pools = build_pools(samples, ids, result.rewrites);
    rescore_pools(result.pools, samples, priors, rescorer, concurrency_limit);
    result.refined = select_refined(samples, result.pools, critiques, fused, ids);
    return result;
}

std::vector<Sample> filter_by_threshold(std::span<const Sample> samples, std::span<const FusedLabel> fused,
                                        double threshold) {
    const auto labels = index_fused(fused);
    std::vector<Sample> kept;
    for (const auto& s : samples) {
        auto it = labels.find(s.id);
        if (it == labels.end()) throw ValidationError("sample '" + s.id + "' has no fused label");
        if (it->second->fused_score >= threshold) kept.push_back(s);
    }
    return kept;
}

nlohmann::ordered_json to_json(const RunManifest& manifest, bool include_timings) {
    nlohmann::ordered_json j;
    j["config_hash"] = manifest.config_hash;
    j["seed"] = manifest.seed;
    j["input_samples"] = manifest.input_samples;
    j["refined_samples"] = manifest.refined_samples;
    auto stages = nlohmann::ordered_json::array();
    for (const auto& stage : manifest.stages) {
        nlohmann::ordered_json s;
        s["name"] = stage.name;
        if (include_timings) s["seconds"] = stage.seconds;
        s["outputs"] = stage.outputs;
        stages.push_back(std::move(s));
    }
    j["stages"] = std::move(stages);
    return j;
}

namespace {

template <typename Fn>
void timed_stage(RunManifest& manifest, const std::string& name, std::vector<std::string> outputs, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    try {
        fn();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(name, e);
    } catch (const std::exception& e) {
        throw StageError(name, ComputeError(e.what()));
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    manifest.stages.push_back(StageTiming{name, elapsed.count(), std::move(outputs)});
}

}  // namespace

RunManifest run_all(const PipelineConfig& config) {
    config.validate();
    const fs::path out_dir = config.paths.output_dir;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "': " + ec.message());

    RunManifest manifest;
    manifest.config_hash = config_hash(config);
    manifest.seed = config.seed;

    const auto samples = load_records<Sample>(config.paths.corpus);
    manifest.input_samples = samples.size();
    std::vector<VisionPrior> raw_priors;
    if (!config.paths.priors.empty()) raw_priors = load_records<VisionPrior>(config.paths.priors);

    const auto roster = make_roster(config);
    const auto rescorer = make_rescorer(config);

    std::vector<VisionPrior> priors;
    timed_stage(manifest, "stage1", {files::kPriors}, [&] {
        priors = run_stage1(samples, raw_priors, config.allow_missing_priors || config.paths.priors.empty());
        save_records(priors, out_dir / files::kPriors);
    });

    Stage2Result stage2;
    timed_stage(manifest, "stage2", {files::kCritiques, files::kFused}, [&] {
        stage2 = run_stage2(samples, priors, roster, config.fusion, config.concurrency_limit, config.allow_partial);
        save_records(stage2.critiques, out_dir / files::kCritiques);
        save_records(stage2.fused, out_dir / files::kFused);
    });

    timed_stage(manifest, "stage3", {files::kRollouts, files::kCurve, files::kPolicy}, [&] {
        std::vector<RolloutRecord> fixtures;
        if (!config.paths.rollouts.empty()) fixtures = load_records<RolloutRecord>(config.paths.rollouts);
        const Stage3Options options{config.grpo, config.training.learning_rate, config.training.positions,
                                    config.seed};
        const auto stage3 = run_stage3(stage2.fused, fixtures, options);
        save_records(stage3.records, out_dir / files::kRollouts);
        write_text(out_dir / files::kCurve, curve_to_csv(stage3.curve));
        write_text(out_dir / files::kPolicy, policy_to_json(stage3.policy).dump(2) + "\n");
    });

    timed_stage(manifest, "stage4", {files::kRewrites, files::kCandidates, files::kRefined}, [&] {
        // Samples dropped from fusion under allow_partial cannot be refined.
        std::set<std::string> fused_ids;
        for (const auto& f : stage2.fused) fused_ids.insert(f.sample_id);
        std::vector<Sample> kept;
        std::vector<VisionPrior> kept_priors;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (fused_ids.count(samples[i].id)) {
                kept.push_back(samples[i]);
                kept_priors.push_back(priors[i]);
            }
        }
        const auto stage4 = run_stage4(kept, kept_priors, stage2.critiques, stage2.fused, roster, *rescorer,
                                       config.concurrency_limit, config.allow_partial);
        save_records(stage4.rewrites, out_dir / files::kRewrites);
        save_records(stage4.pools, out_dir / files::kCandidates);
        save_records(stage4.refined, out_dir / files::kRefined);
        manifest.refined_samples = stage4.refined.size();
    });

    write_text(out_dir / files::kManifest, to_json(manifest).dump(2) + "\n");
    return manifest;
}

}  // namespace refinery::pipeline
