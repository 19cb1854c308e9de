#pragma once

// Rule-based answer corruption for CLEVR-style QA items, producing
// high / medium / low quality tiers with known ordinal ground truth.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "refinery/corpus.hpp"
#include "refinery/random.hpp"

namespace refinery {

/// Ground-truth ordinal of a tier: H=5, M=3, L=1.
double tier_ordinal(Tier tier);

/// Lexicon lookup on the first sentence of the answer ("Green." -> color,
/// "4." -> number). Case-insensitive. Throws ValidationError when the token
/// is outside the lexicon.
AnswerCategory classify_answer(std::string_view answer);

/// Minor, same-category error. Output always differs from the input.
std::string inject_medium(const QaItem& item, Rng& rng);

/// Clear error: a token from another category, a yes/no contradiction, a
/// nonexistent attribute, optionally followed by an irrelevant explanation.
std::string inject_low(const QaItem& item, Rng& rng);

struct TierCounts {
    std::size_t high = 0;
    std::size_t medium = 0;
    std::size_t low = 0;
};

/// Shuffles `items` with `seed`, keeps the first `counts.high` verbatim and
/// corrupts the next `counts.medium` / `counts.low`. Each corrupted item draws
/// from its own stream derived from (seed, item id). Throws ValidationError
/// when there are fewer items than requested. Output keeps the input order.
std::vector<QaItem> build_tiered_set(std::span<const QaItem> items, TierCounts counts, std::uint64_t seed);

/// True when `modified` is a valid low-tier corruption of `original`: the
/// category changed, or a yes/no answer was negated.
bool is_low_tier_corruption(std::string_view original, std::string_view modified);

}  // namespace refinery
