#pragma once

// Record types shared by every pipeline stage, plus their JSONL persistence.
//
// Every record kind serializes to one JSON object per line. The first key is
// always "kind", followed by the fields in declaration order, so files are
// byte-stable for identical content.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace refinery {

inline constexpr double kScoreMin = 0.0;
inline constexpr double kScoreMax = 5.0;

struct Sample {
    std::string id;
    std::string image_ref;
    std::string question;
    std::string answer;
    std::string domain;
    std::string source;
    std::optional<double> latent_truth;  // synthetic corpora only

    bool operator==(const Sample&) const = default;
};

/// Tags and OCR strings produced by external vision models for one sample.
struct VisionPrior {
    std::string sample_id;
    std::vector<std::string> tags;
    std::vector<std::string> ocr;

    bool operator==(const VisionPrior&) const = default;
};

struct CritiqueRecord {
    std::string sample_id;
    std::string expert_id;
    double score = 0.0;
    std::string rationale;

    bool operator==(const CritiqueRecord&) const = default;
};

/// domain -> expert_id -> shrunk weight.
using DomainWeights = std::map<std::string, std::map<std::string, double>>;

struct FusedLabel {
    std::string sample_id;
    double fused_score = 0.0;
    double fused_z = 0.0;
    DomainWeights weights_used;

    bool operator==(const FusedLabel&) const = default;
};

struct RefinedEntry {
    std::string sample_id;
    std::string image_ref;
    std::string question;
    std::string selected_answer;
    double confidence = 0.0;
    std::string merged_rationale;
    std::string selected_source;  // "original" or "expert_<k>", k 1-based roster slot

    bool operator==(const RefinedEntry&) const = default;
};

enum class AnswerCategory { Number, Color, Size, YesNo, Material, Shape };
enum class Tier { H, M, L };

struct QaItem {
    std::string id;
    std::string question;
    std::string answer;
    AnswerCategory answer_category = AnswerCategory::Number;
    Tier tier = Tier::H;
    std::string original_answer;
    double reference_score = 5.0;  // ordinal ground truth of the tier

    bool operator==(const QaItem&) const = default;
};

/// One GRPO training record: a critic rollout and the fused target it is
/// rewarded against.
struct RolloutRecord {
    std::string question_id;
    std::string text;
    double fused_score = 0.0;
    std::optional<double> reward;

    bool operator==(const RolloutRecord&) const = default;
};

struct RewriteRecord {
    std::string sample_id;
    std::string expert_id;
    std::string answer;

    bool operator==(const RewriteRecord&) const = default;
};

struct Candidate {
    std::string source;
    std::string answer;

    bool operator==(const Candidate&) const = default;
};

/// Original answer first, then one rewrite per roster slot.
struct CandidatePool {
    std::string sample_id;
    std::vector<Candidate> candidates;
    std::vector<double> rescored;

    bool operator==(const CandidatePool&) const = default;
};

using Record = std::variant<Sample, VisionPrior, CritiqueRecord, FusedLabel, RefinedEntry, QaItem,
                            RolloutRecord, RewriteRecord, CandidatePool>;

enum class RecordKind {
    Sample,
    VisionPrior,
    Critique,
    FusedLabel,
    RefinedEntry,
    QaItem,
    Rollout,
    Rewrite,
    CandidatePool
};

std::string to_string(RecordKind kind);
RecordKind record_kind_from_string(const std::string& name);
RecordKind kind_of(const Record& record);

std::string to_string(AnswerCategory category);
AnswerCategory answer_category_from_string(const std::string& name);
std::string to_string(Tier tier);
Tier tier_from_string(const std::string& name);

struct Violation {
    std::string field;
    std::string message;

    bool operator==(const Violation&) const = default;
};

/// Every violated invariant of a single record. An empty roster skips the
/// expert_id membership check.
std::vector<Violation> validate_record(const Record& record, std::span<const std::string> roster = {});

/// Invariants spanning records: unique ids for samples/items, one critique
/// per (sample, expert), one fused label per sample, and so on.
std::vector<Violation> validate_collection(std::span<const Record> records);

std::string to_json_line(const Record& record);
/// Parses one line against the given schema. Throws ParseError (line 0) on
/// malformed input; does not validate invariants.
Record from_json_line(const std::string& line, RecordKind kind);

/// Loads and validates a JSONL file. Throws IoError, ParseError (with line
/// number) or ValidationError naming the offending field.
std::vector<Record> load_corpus(const std::filesystem::path& path, RecordKind kind);
/// Writes one JSON object per line. Throws IoError if the path is unwritable.
void save_corpus(std::span<const Record> records, const std::filesystem::path& path);

template <typename T>
constexpr RecordKind kind_for();
template <> constexpr RecordKind kind_for<Sample>() { return RecordKind::Sample; }
template <> constexpr RecordKind kind_for<VisionPrior>() { return RecordKind::VisionPrior; }
template <> constexpr RecordKind kind_for<CritiqueRecord>() { return RecordKind::Critique; }
template <> constexpr RecordKind kind_for<FusedLabel>() { return RecordKind::FusedLabel; }
template <> constexpr RecordKind kind_for<RefinedEntry>() { return RecordKind::RefinedEntry; }
template <> constexpr RecordKind kind_for<QaItem>() { return RecordKind::QaItem; }
template <> constexpr RecordKind kind_for<RolloutRecord>() { return RecordKind::Rollout; }
template <> constexpr RecordKind kind_for<RewriteRecord>() { return RecordKind::Rewrite; }
template <> constexpr RecordKind kind_for<CandidatePool>() { return RecordKind::CandidatePool; }

template <typename T>
std::vector<T> load_records(const std::filesystem::path& path) {
    std::vector<T> out;
    for (auto& record : load_corpus(path, kind_for<T>())) {
        out.push_back(std::get<T>(std::move(record)));
    }
    return out;
}

template <typename T>
void save_records(std::span<const T> records, const std::filesystem::path& path) {
    std::vector<Record> wrapped(records.begin(), records.end());
    save_corpus(wrapped, path);
}

template <typename T>
void save_records(const std::vector<T>& records, const std::filesystem::path& path) {
    save_records(std::span<const T>(records), path);
}

}  // namespace refinery
