#include "refinery/rewards.hpp"

#include <algorithm>
#include <cmath>

namespace refinery::rewards {

std::optional<int> extract_score(std::string_view text) {
    const auto open = text.find(kScoring);
    if (open == std::string_view::npos) return std::nullopt;
    const auto body_begin = open + kScoring.size();
    const auto close = text.find(kScoringClose, body_begin);
    if (close == std::string_view::npos) return std::nullopt;
    const auto body = text.substr(body_begin, close - body_begin);

    std::size_t i = 0;
    while (i < body.size()) {
        if (body[i] < '0' || body[i] > '9') {
            ++i;
            continue;
        }
        const bool negative = i > 0 && body[i - 1] == '-';
        std::size_t j = i;
        long value = 0;
        while (j < body.size() && body[j] >= '0' && body[j] <= '9') {
            value = std::min(value * 10 + (body[j] - '0'), 1000L);
            ++j;
        }
        if (!negative && value <= 5) return static_cast<int>(value);
        i = j;
    }
    return std::nullopt;
}

CriticOutput parse_critic_output(std::string_view text) {
    CriticOutput out;
    out.parsed_score = extract_score(text);
    for (std::size_t k = 0; k < kMarkers.size(); ++k) {
        out.markers_present[k] = text.find(kMarkers[k]) != std::string_view::npos;
    }
    return out;
}

double accuracy_reward(std::optional<int> parsed, double fused) {
    if (!parsed) return 0.0;
    return std::max(0.0, 1.0 - std::abs(static_cast<double>(*parsed) - fused) / 5.0);
}

double format_reward(std::string_view text) {
    const auto markers = parse_critic_output(text).markers_present;
    const auto n = std::count(markers.begin(), markers.end(), true);
    return 0.5 * (static_cast<double>(n) / 3.0);
}

double total_reward(std::string_view text, double fused) {
    return accuracy_reward(extract_score(text), fused) + format_reward(text);
}

}  // namespace refinery::rewards
