#pragma once

// Stage orchestration: prior attachment, critique + fusion, critic training,
// rewrite + rescoring + selection, and the end-to-end driver.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "refinery/config.hpp"
#include "refinery/corpus.hpp"
#include "refinery/experts.hpp"
#include "refinery/fusion.hpp"
#include "refinery/grpo.hpp"

namespace refinery::pipeline {

/// Output file names inside the run directory.
namespace files {
inline constexpr const char* kPriors = "stage1_priors.jsonl";
inline constexpr const char* kCritiques = "stage2_critiques.jsonl";
inline constexpr const char* kFused = "stage2_fused.jsonl";
inline constexpr const char* kRollouts = "stage3_rollouts.jsonl";
inline constexpr const char* kCurve = "stage3_curve.csv";
inline constexpr const char* kPolicy = "stage3_policy.json";
inline constexpr const char* kRewrites = "stage4_rewrites.jsonl";
inline constexpr const char* kCandidates = "stage4_candidates.jsonl";
inline constexpr const char* kRefined = "refined.jsonl";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace files

/// Pairs every sample with its prior, in corpus order. Missing priors are an
/// error listing the ids, or empty priors when allow_missing is set.
std::vector<VisionPrior> run_stage1(std::span<const Sample> samples, std::span<const VisionPrior> priors,
                                    bool allow_missing);

/// Score matrix (samples x roster) from critique records, in corpus/roster
/// order. Missing cells stay NaN.
fusion::ScoreMatrix build_score_matrix(std::span<const Sample> samples, std::span<const std::string> expert_ids,
                                       std::span<const CritiqueRecord> critiques);

struct Stage2Result {
    std::vector<CritiqueRecord> critiques;
    std::vector<FusedLabel> fused;  // corpus order
    std::vector<std::string> skipped;  // samples without a full critique row (allow_partial only)
};

/// Fuses already collected critiques. With allow_partial, samples lacking
/// any expert's score are skipped rather than failing the matrix check.
Stage2Result fuse_critiques(std::span<const Sample> samples, std::span<const std::string> expert_ids,
                            std::vector<CritiqueRecord> critiques, const fusion::FusionConfig& config,
                            bool allow_partial);

Stage2Result run_stage2(std::span<const Sample> samples, std::span<const VisionPrior> priors,
                        const experts::Roster& roster, const fusion::FusionConfig& config,
                        std::size_t concurrency_limit, bool allow_partial);

struct CurveRow {
    std::size_t step = 0;
    double objective = 0.0;
    double mean_reward = 0.0;
    double kl = 0.0;
};

struct Stage3Result {
    grpo::ToyPolicy initial;
    grpo::ToyPolicy policy;
    std::vector<CurveRow> curve;
    std::vector<RolloutRecord> records;
};

struct Stage3Options {
    grpo::GrpoConfig grpo;
    double learning_rate = 0.5;
    std::size_t positions = 4;
    std::uint64_t seed = 42;
};

/// One epoch of GRPO, one step per question group, reference = initial
/// (uniform) policy, old policy = the policy before each step.
///
/// With fixtures, groups are the fixture rollouts of each question in order
/// of first appearance; the target is the question's fused label when
/// present, else the fixture's own fused_score. mean_reward is then the
/// policy-weighted reward over all fixture rollouts after the step. Without
/// fixtures, group_size rollouts are sampled per fused label and mean_reward
/// is the sampled group mean.
Stage3Result run_stage3(std::span<const FusedLabel> fused, std::span<const RolloutRecord> fixtures,
                        const Stage3Options& options);

/// Policy-weighted mean reward of fixture rollouts (weights renormalized
/// within each question, then averaged across questions).
double expected_fixture_reward(const grpo::ToyPolicy& policy, std::span<const RolloutRecord> fixtures,
                               std::span<const FusedLabel> fused);

std::string curve_to_csv(std::span<const CurveRow> curve);
nlohmann::ordered_json policy_to_json(const grpo::ToyPolicy& policy);

struct Selection {
    std::size_t index = 0;
    std::string source;
    std::string answer;
};

/// Argmax of rescored; ties go to the earliest candidate (original first,
/// then roster order). Throws ValidationError on an empty or unscored pool.
Selection select_best(const CandidatePool& pool);

/// Pools in corpus order: original answer, then one rewrite per roster slot
/// labelled "expert_<k>".
std::vector<CandidatePool> build_pools(std::span<const Sample> samples, std::span<const std::string> expert_ids,
                                       std::span<const RewriteRecord> rewrites);

/// Fills `rescored` for every pool using the rescoring backend.
void rescore_pools(std::vector<CandidatePool>& pools, std::span<const Sample> samples,
                   std::span<const VisionPrior> priors, const experts::ExpertBackend& rescorer,
                   std::size_t concurrency_limit);

/// Selection plus the merged rationale: the critique of the expert whose
/// rewrite won, or of the highest-weighted expert in the sample's domain when
/// the original answer is kept.
std::vector<RefinedEntry> select_refined(std::span<const Sample> samples, std::span<const CandidatePool> pools,
                                         std::span<const CritiqueRecord> critiques,
                                         std::span<const FusedLabel> fused,
                                         std::span<const std::string> expert_ids);

struct Stage4Result {
    std::vector<RewriteRecord> rewrites;
    std::vector<CandidatePool> pools;
    std::vector<RefinedEntry> refined;
};

Stage4Result run_stage4(std::span<const Sample> samples, std::span<const VisionPrior> priors,
                        std::span<const CritiqueRecord> critiques, std::span<const FusedLabel> fused,
                        const experts::Roster& roster, const experts::ExpertBackend& rescorer,
                        std::size_t concurrency_limit, bool allow_partial);

/// Threshold baseline: keeps samples whose fused score is >= threshold.
std::vector<Sample> filter_by_threshold(std::span<const Sample> samples, std::span<const FusedLabel> fused,
                                        double threshold);

struct StageTiming {
    std::string name;
    double seconds = 0.0;
    std::vector<std::string> outputs;
};

struct RunManifest {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<StageTiming> stages;
    std::size_t input_samples = 0;
    std::size_t refined_samples = 0;
};

nlohmann::ordered_json to_json(const RunManifest& manifest, bool include_timings = true);

/// Executes stages 1-4 and writes every artifact plus manifest.json into
/// config.paths.output_dir. A stage failure is rethrown as StageError.
RunManifest run_all(const PipelineConfig& config);

/// Writes text atomically enough for tests: truncate + write + check.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace refinery::pipeline
