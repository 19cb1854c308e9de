#include "refinery/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "refinery/errors.hpp"
#include "refinery/inject.hpp"

namespace refinery {

using json = nlohmann::ordered_json;

namespace {

constexpr double kWeightSumTolerance = 1e-9;
constexpr double kRewardMax = 1.5;

template <typename... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <typename... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

bool in_score_range(double v) { return std::isfinite(v) && v >= kScoreMin && v <= kScoreMax; }

// Field accessors turn nlohmann type errors into messages that name the field.
template <typename T>
T required(const json& j, const char* field) {
    auto it = j.find(field);
    if (it == j.end()) {
        throw ParseError(0, std::string("missing field '") + field + "'");
    }
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ParseError(0, std::string("field '") + field + "' has the wrong type");
    }
}

template <typename T>
std::optional<T> optional_field(const json& j, const char* field) {
    auto it = j.find(field);
    if (it == j.end() || it->is_null()) {
        return std::nullopt;
    }
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ParseError(0, std::string("field '") + field + "' has the wrong type");
    }
}

json to_json(const Record& record) {
    json j;
    j["kind"] = to_string(kind_of(record));
    std::visit(
        Overloaded{
            [&](const Sample& s) {
                j["id"] = s.id;
                j["image_ref"] = s.image_ref;
                j["question"] = s.question;
                j["answer"] = s.answer;
                j["domain"] = s.domain;
                j["source"] = s.source;
                if (s.latent_truth) j["latent_truth"] = *s.latent_truth;
            },
            [&](const VisionPrior& p) {
                j["sample_id"] = p.sample_id;
                j["tags"] = p.tags;
                j["ocr"] = p.ocr;
            },
            [&](const CritiqueRecord& c) {
                j["sample_id"] = c.sample_id;
                j["expert_id"] = c.expert_id;
                j["score"] = c.score;
                j["rationale"] = c.rationale;
            },
            [&](const FusedLabel& f) {
                j["sample_id"] = f.sample_id;
                j["fused_score"] = f.fused_score;
                j["fused_z"] = f.fused_z;
                json weights = json::object();
                for (const auto& [domain, per_expert] : f.weights_used) {
                    json inner = json::object();
                    for (const auto& [expert, w] : per_expert) inner[expert] = w;
                    weights[domain] = std::move(inner);
                }
                j["weights_used"] = std::move(weights);
            },
            [&](const RefinedEntry& r) {
                j["sample_id"] = r.sample_id;
                j["image_ref"] = r.image_ref;
                j["question"] = r.question;
                j["selected_answer"] = r.selected_answer;
                j["confidence"] = r.confidence;
                j["merged_rationale"] = r.merged_rationale;
                j["selected_source"] = r.selected_source;
            },
            [&](const QaItem& q) {
                j["id"] = q.id;
                j["question"] = q.question;
                j["answer"] = q.answer;
                j["answer_category"] = to_string(q.answer_category);
                j["tier"] = to_string(q.tier);
                j["original_answer"] = q.original_answer;
                j["reference_score"] = q.reference_score;
            },
            [&](const RolloutRecord& r) {
                j["question_id"] = r.question_id;
                j["text"] = r.text;
                j["fused_score"] = r.fused_score;
                if (r.reward) j["reward"] = *r.reward;
            },
            [&](const RewriteRecord& r) {
                j["sample_id"] = r.sample_id;
                j["expert_id"] = r.expert_id;
                j["answer"] = r.answer;
            },
            [&](const CandidatePool& p) {
                j["sample_id"] = p.sample_id;
                json cands = json::array();
                for (const auto& c : p.candidates) {
                    cands.push_back(json{{"source", c.source}, {"answer", c.answer}});
                }
                j["candidates"] = std::move(cands);
                j["rescored"] = p.rescored;
            },
        },
        record);
    return j;
}

Record from_json(const json& j, RecordKind kind) {
    if (!j.is_object()) {
        throw ParseError(0, "expected a JSON object");
    }
    if (auto it = j.find("kind"); it != j.end()) {
        if (!it->is_string() || it->get<std::string>() != to_string(kind)) {
            throw ParseError(0, "kind mismatch: expected '" + to_string(kind) + "'");
        }
    }
    switch (kind) {
        case RecordKind::Sample:
            return Sample{required<std::string>(j, "id"),
                          required<std::string>(j, "image_ref"),
                          required<std::string>(j, "question"),
                          required<std::string>(j, "answer"),
                          required<std::string>(j, "domain"),
                          required<std::string>(j, "source"),
                          optional_field<double>(j, "latent_truth")};
        case RecordKind::VisionPrior:
            return VisionPrior{required<std::string>(j, "sample_id"),
                               optional_field<std::vector<std::string>>(j, "tags").value_or(std::vector<std::string>{}),
                               optional_field<std::vector<std::string>>(j, "ocr").value_or(std::vector<std::string>{})};
        case RecordKind::Critique:
            return CritiqueRecord{required<std::string>(j, "sample_id"), required<std::string>(j, "expert_id"),
                                  required<double>(j, "score"), required<std::string>(j, "rationale")};
        case RecordKind::FusedLabel: {
            FusedLabel f{required<std::string>(j, "sample_id"), required<double>(j, "fused_score"),
                         required<double>(j, "fused_z"), {}};
            f.weights_used = required<DomainWeights>(j, "weights_used");
            return f;
        }
        case RecordKind::RefinedEntry:
            return RefinedEntry{required<std::string>(j, "sample_id"),
                                optional_field<std::string>(j, "image_ref").value_or(""),
                                required<std::string>(j, "question"),
                                required<std::string>(j, "selected_answer"),
                                required<double>(j, "confidence"),
                                required<std::string>(j, "merged_rationale"),
                                required<std::string>(j, "selected_source")};
        case RecordKind::QaItem: {
            QaItem q;
            q.id = required<std::string>(j, "id");
            q.question = required<std::string>(j, "question");
            q.answer = required<std::string>(j, "answer");
            try {
                q.answer_category = answer_category_from_string(required<std::string>(j, "answer_category"));
                q.tier = tier_from_string(optional_field<std::string>(j, "tier").value_or("H"));
            } catch (const ParseError&) {
                throw;
            } catch (const ValidationError& e) {
                throw ParseError(0, e.what());
            }
            q.original_answer = optional_field<std::string>(j, "original_answer").value_or(q.answer);
            q.reference_score = optional_field<double>(j, "reference_score").value_or(tier_ordinal(q.tier));
            return q;
        }
        case RecordKind::Rollout:
            return RolloutRecord{required<std::string>(j, "question_id"), required<std::string>(j, "text"),
                                 required<double>(j, "fused_score"), optional_field<double>(j, "reward")};
        case RecordKind::Rewrite:
            return RewriteRecord{required<std::string>(j, "sample_id"), required<std::string>(j, "expert_id"),
                                 required<std::string>(j, "answer")};
        case RecordKind::CandidatePool: {
            CandidatePool p;
            p.sample_id = required<std::string>(j, "sample_id");
            for (const auto& c : required<json>(j, "candidates")) {
                p.candidates.push_back({required<std::string>(c, "source"), required<std::string>(c, "answer")});
            }
            p.rescored = required<std::vector<double>>(j, "rescored");
            return p;
        }
    }
    throw ParseError(0, "unknown record kind");
}

void check_score(std::vector<Violation>& out, const char* field, double v) {
    if (!in_score_range(v)) out.push_back({field, std::string(field) + " out of [0,5]"});
}

void check_nonempty(std::vector<Violation>& out, const char* field, const std::string& v) {
    if (v.empty()) out.push_back({field, std::string(field) + " is empty"});
}

bool valid_source_label(const std::string& source) {
    if (source == "original") return true;
    constexpr std::string_view prefix = "expert_";
    if (source.size() <= prefix.size() || source.compare(0, prefix.size(), prefix) != 0) return false;
    for (std::size_t i = prefix.size(); i < source.size(); ++i) {
        if (source[i] < '0' || source[i] > '9') return false;
    }
    return source[prefix.size()] != '0';
}

}  // namespace

std::string to_string(RecordKind kind) {
    switch (kind) {
        case RecordKind::Sample: return "sample";
        case RecordKind::VisionPrior: return "vision_prior";
        case RecordKind::Critique: return "critique";
        case RecordKind::FusedLabel: return "fused_label";
        case RecordKind::RefinedEntry: return "refined_entry";
        case RecordKind::QaItem: return "qa_item";
        case RecordKind::Rollout: return "rollout";
        case RecordKind::Rewrite: return "rewrite";
        case RecordKind::CandidatePool: return "candidate_pool";
    }
    return "unknown";
}

RecordKind record_kind_from_string(const std::string& name) {
    for (auto kind : {RecordKind::Sample, RecordKind::VisionPrior, RecordKind::Critique, RecordKind::FusedLabel,
                      RecordKind::RefinedEntry, RecordKind::QaItem, RecordKind::Rollout, RecordKind::Rewrite,
                      RecordKind::CandidatePool}) {
        if (to_string(kind) == name) return kind;
    }
    throw ValidationError("unknown record kind '" + name + "'");
}

RecordKind kind_of(const Record& record) {
    return std::visit(
        Overloaded{
            [](const Sample&) { return RecordKind::Sample; },
            [](const VisionPrior&) { return RecordKind::VisionPrior; },
            [](const CritiqueRecord&) { return RecordKind::Critique; },
            [](const FusedLabel&) { return RecordKind::FusedLabel; },
            [](const RefinedEntry&) { return RecordKind::RefinedEntry; },
            [](const QaItem&) { return RecordKind::QaItem; },
            [](const RolloutRecord&) { return RecordKind::Rollout; },
            [](const RewriteRecord&) { return RecordKind::Rewrite; },
            [](const CandidatePool&) { return RecordKind::CandidatePool; },
        },
        record);
}

std::string to_string(AnswerCategory category) {
    switch (category) {
        case AnswerCategory::Number: return "number";
        case AnswerCategory::Color: return "color";
        case AnswerCategory::Size: return "size";
        case AnswerCategory::YesNo: return "yesno";
        case AnswerCategory::Material: return "material";
        case AnswerCategory::Shape: return "shape";
    }
    return "unknown";
}

AnswerCategory answer_category_from_string(const std::string& name) {
    for (auto c : {AnswerCategory::Number, AnswerCategory::Color, AnswerCategory::Size, AnswerCategory::YesNo,
                   AnswerCategory::Material, AnswerCategory::Shape}) {
        if (to_string(c) == name) return c;
    }
    throw ValidationError("unknown answer_category '" + name + "'");
}

std::string to_string(Tier tier) {
    switch (tier) {
        case Tier::H: return "H";
        case Tier::M: return "M";
        case Tier::L: return "L";
    }
    return "?";
}

Tier tier_from_string(const std::string& name) {
    if (name == "H") return Tier::H;
    if (name == "M") return Tier::M;
    if (name == "L") return Tier::L;
    throw ValidationError("unknown tier '" + name + "'");
}

std::vector<Violation> validate_record(const Record& record, std::span<const std::string> roster) {
    std::vector<Violation> out;
    std::visit(
        Overloaded{
            [&](const Sample& s) {
                check_nonempty(out, "id", s.id);
                check_nonempty(out, "domain", s.domain);
                if (s.latent_truth) check_score(out, "latent_truth", *s.latent_truth);
            },
            [&](const VisionPrior& p) {
                check_nonempty(out, "sample_id", p.sample_id);
                for (const auto& t : p.tags) {
                    if (t.empty()) out.push_back({"tags", "tags contains an empty string"});
                }
                for (const auto& o : p.ocr) {
                    if (o.empty()) out.push_back({"ocr", "ocr contains an empty string"});
                }
            },
            [&](const CritiqueRecord& c) {
                check_nonempty(out, "sample_id", c.sample_id);
                check_score(out, "score", c.score);
                if (!roster.empty() && std::find(roster.begin(), roster.end(), c.expert_id) == roster.end()) {
                    out.push_back({"expert_id", "expert_id '" + c.expert_id + "' not in roster"});
                } else if (c.expert_id.empty()) {
                    out.push_back({"expert_id", "expert_id is empty"});
                }
            },
            [&](const FusedLabel& f) {
                check_nonempty(out, "sample_id", f.sample_id);
                check_score(out, "fused_score", f.fused_score);
                if (!std::isfinite(f.fused_z)) out.push_back({"fused_z", "fused_z is not finite"});
                for (const auto& [domain, per_expert] : f.weights_used) {
                    double sum = 0.0;
                    for (const auto& [expert, w] : per_expert) sum += w;
                    if (!(std::abs(sum - 1.0) <= kWeightSumTolerance)) {
                        out.push_back({"weights_used", "weights for domain '" + domain + "' sum to " +
                                                           std::to_string(sum) + ", not 1"});
                    }
                }
            },
            [&](const RefinedEntry& r) {
                check_nonempty(out, "sample_id", r.sample_id);
                check_score(out, "confidence", r.confidence);
                if (!valid_source_label(r.selected_source)) {
                    out.push_back({"selected_source", "selected_source '" + r.selected_source +
                                                          "' is neither 'original' nor 'expert_<k>'"});
                }
            },
            [&](const QaItem& q) {
                check_nonempty(out, "id", q.id);
                if (q.answer.empty()) {
                    out.push_back({"answer", "answer is empty"});
                    return;
                }
                try {
                    if (classify_answer(q.answer) != q.answer_category) {
                        out.push_back({"answer_category", "answer_category '" + to_string(q.answer_category) +
                                                              "' inconsistent with answer '" + q.answer + "'"});
                    }
                } catch (const ValidationError&) {
                    out.push_back({"answer", "answer '" + q.answer + "' is not in the lexicon"});
                }
            },
            [&](const RolloutRecord& r) {
                check_nonempty(out, "question_id", r.question_id);
                check_score(out, "fused_score", r.fused_score);
                if (r.reward && !(*r.reward >= 0.0 && *r.reward <= kRewardMax)) {
                    out.push_back({"reward", "reward out of [0,1.5]"});
                }
            },
            [&](const RewriteRecord& r) {
                check_nonempty(out, "sample_id", r.sample_id);
                check_nonempty(out, "expert_id", r.expert_id);
            },
            [&](const CandidatePool& p) {
                check_nonempty(out, "sample_id", p.sample_id);
                if (p.candidates.empty()) {
                    out.push_back({"candidates", "candidate pool is empty"});
                } else if (p.candidates.front().source != "original") {
                    out.push_back({"candidates", "first candidate must be the original answer"});
                }
                if (p.rescored.size() != p.candidates.size()) {
                    out.push_back({"rescored", "rescored has " + std::to_string(p.rescored.size()) +
                                                   " entries for " + std::to_string(p.candidates.size()) +
                                                   " candidates"});
                }
                for (double s : p.rescored) {
                    if (!std::isfinite(s)) out.push_back({"rescored", "rescored value is not finite"});
                }
            },
        },
        record);
    return out;
}

std::vector<Violation> validate_collection(std::span<const Record> records) {
    std::vector<Violation> out;
    std::set<std::string> seen;
    for (const auto& record : records) {
        std::string key;
        std::string field;
        std::visit(Overloaded{
                       [&](const Sample& s) { key = s.id, field = "id"; },
                       [&](const VisionPrior& p) { key = p.sample_id, field = "sample_id"; },
                       [&](const CritiqueRecord& c) { key = c.sample_id + "\x1f" + c.expert_id, field = "expert_id"; },
                       [&](const FusedLabel& f) { key = f.sample_id, field = "sample_id"; },
                       [&](const RefinedEntry& r) { key = r.sample_id, field = "sample_id"; },
                       [&](const QaItem& q) { key = q.id, field = "id"; },
                       [&](const RolloutRecord&) {},
                       [&](const RewriteRecord& r) { key = r.sample_id + "\x1f" + r.expert_id, field = "expert_id"; },
                       [&](const CandidatePool& p) { key = p.sample_id, field = "sample_id"; },
                   },
                   record);
        if (field.empty()) continue;
        if (!seen.insert(key).second) {
            out.push_back({field, "duplicate " + field + " '" + key.substr(0, key.find('\x1f')) + "'"});
        }
    }
    return out;
}

std::string to_json_line(const Record& record) {
    return to_json(record).dump(-1, ' ', false, json::error_handler_t::strict);
}

Record from_json_line(const std::string& line, RecordKind kind) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError(0, std::string("malformed JSON: ") + e.what());
    }
    return from_json(j, kind);
}

std::vector<Record> load_corpus(const std::filesystem::path& path, RecordKind kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    std::vector<Record> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        Record record;
        try {
            record = from_json_line(line, kind);
        } catch (const ParseError& e) {
            // Re-throw with the real line number.
            std::string what = e.what();
            throw ParseError(line_no, what.substr(what.find(": ") + 2));
        }
        auto violations = validate_record(record);
        if (!violations.empty()) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": field '" +
                                  violations.front().field + "': " + violations.front().message);
        }
        records.push_back(std::move(record));
    }
    auto violations = validate_collection(records);
    if (!violations.empty()) {
        throw ValidationError(path.string() + ": field '" + violations.front().field +
                              "': " + violations.front().message);
    }
    return records;
}

void save_corpus(std::span<const Record> records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    for (const auto& record : records) {
        out << to_json_line(record) << '\n';
    }
    out.flush();
    if (!out) {
        throw IoError("write to '" + path.string() + "' failed");
    }
}

}  // namespace refinery
