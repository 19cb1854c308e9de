#pragma once

// Rewards for critic rollouts: score accuracy against the fused label plus a
// format bonus for the three structured sections.

#include <array>
#include <optional>
#include <string_view>

namespace refinery::rewards {

inline constexpr std::string_view kQuestionAnalysis = "<Question Analysis>";
inline constexpr std::string_view kEvaluationReasons = "<Evaluation Reasons>";
inline constexpr std::string_view kScoring = "<Scoring>";
inline constexpr std::string_view kScoringClose = "</Scoring>";

inline constexpr std::array<std::string_view, 3> kMarkers{kQuestionAnalysis, kEvaluationReasons, kScoring};

struct CriticOutput {
    std::optional<int> parsed_score;
    std::array<bool, 3> markers_present{};  // in kMarkers order
};

/// First integer in [0, 5] inside the first <Scoring>...</Scoring> span.
/// A leading '-' makes the integer negative (and thus out of range).
std::optional<int> extract_score(std::string_view text);

CriticOutput parse_critic_output(std::string_view text);

/// max(0, 1 - |parsed - fused| / 5); an absent score earns 0.
double accuracy_reward(std::optional<int> parsed, double fused);

/// 0.5 * N / 3 with N the number of distinct markers present.
double format_reward(std::string_view text);

double total_reward(std::string_view text, double fused);

}  // namespace refinery::rewards
