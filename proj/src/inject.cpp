#include "refinery/inject.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "refinery/errors.hpp"

namespace refinery {

namespace {

struct LexiconEntry {
    std::string_view word;
    AnswerCategory category;
};

// CLEVR attribute vocabulary plus the two nonexistent attributes used by
// low-tier injection (triangle, plastic).
constexpr std::array<LexiconEntry, 20> kLexicon{{
    {"gray", AnswerCategory::Color},      {"red", AnswerCategory::Color},
    {"blue", AnswerCategory::Color},      {"green", AnswerCategory::Color},
    {"brown", AnswerCategory::Color},     {"purple", AnswerCategory::Color},
    {"cyan", AnswerCategory::Color},      {"yellow", AnswerCategory::Color},
    {"large", AnswerCategory::Size},      {"small", AnswerCategory::Size},
    {"yes", AnswerCategory::YesNo},       {"no", AnswerCategory::YesNo},
    {"maybe", AnswerCategory::YesNo},     {"cannot tell", AnswerCategory::YesNo},
    {"rubber", AnswerCategory::Material}, {"metal", AnswerCategory::Material},
    {"cube", AnswerCategory::Shape},      {"sphere", AnswerCategory::Shape},
    {"cylinder", AnswerCategory::Shape},  {"triangle", AnswerCategory::Shape},
}};

// "plastic" is a material word that never appears in CLEVR.
constexpr std::string_view kPlastic = "plastic";

const std::map<std::string_view, std::vector<std::string_view>>& similar_colors() {
    static const std::map<std::string_view, std::vector<std::string_view>> table{
        {"green", {"blue", "cyan"}},   {"blue", {"cyan", "purple"}}, {"cyan", {"blue", "green"}},
        {"red", {"brown", "purple"}},  {"brown", {"red", "yellow"}}, {"yellow", {"brown", "green"}},
        {"purple", {"blue", "red"}},   {"gray", {"blue", "cyan"}},
    };
    return table;
}

const std::map<std::string_view, std::vector<std::string_view>>& similar_shapes() {
    static const std::map<std::string_view, std::vector<std::string_view>> table{
        {"cube", {"sphere", "cylinder"}},
        {"sphere", {"cube", "cylinder"}},
        {"cylinder", {"cube", "sphere"}},
    };
    return table;
}

constexpr std::array<std::string_view, 4> kIrrelevantExplanations{
    " The lighting in the scene is quite dim.",
    " This is because the objects are arranged in a row.",
    " The background is a uniform gray surface.",
    " Several objects cast soft shadows.",
};

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\n\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\n\r");
    return std::string(s.substr(b, e - b + 1));
}

/// First sentence, without the terminating period, lower-cased.
std::string head_token(std::string_view answer) {
    auto text = trim(answer);
    auto dot = text.find('.');
    if (dot != std::string::npos) text = text.substr(0, dot);
    return lower(trim(text));
}

bool is_number(const std::string& token) {
    return !token.empty() && std::all_of(token.begin(), token.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::string render(std::string_view word) {
    std::string out(word);
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
    return out + ".";
}

template <typename Container>
auto pick(const Container& options, Rng& rng) {
    return options[rng.index(options.size())];
}

std::vector<std::string_view> words_of(AnswerCategory category) {
    std::vector<std::string_view> out;
    for (const auto& e : kLexicon) {
        if (e.category == category && e.word != "triangle") out.push_back(e.word);
    }
    return out;
}

}  // namespace

double tier_ordinal(Tier tier) {
    switch (tier) {
        case Tier::H: return 5.0;
        case Tier::M: return 3.0;
        case Tier::L: return 1.0;
    }
    return 0.0;
}

AnswerCategory classify_answer(std::string_view answer) {
    const auto token = head_token(answer);
    if (is_number(token)) return AnswerCategory::Number;
    for (const auto& e : kLexicon) {
        if (e.word == token) return e.category;
    }
    if (token == kPlastic) return AnswerCategory::Material;
    throw ValidationError("unclassifiable answer '" + std::string(answer) + "'");
}

std::string inject_medium(const QaItem& item, Rng& rng) {
    const auto category = classify_answer(item.answer);
    const auto token = head_token(item.answer);
    switch (category) {
        case AnswerCategory::Number: {
            const long value = std::stol(token);
            std::vector<long> options;
            for (long delta : {-2L, -1L, 1L, 2L}) {
                if (value + delta >= 0) options.push_back(value + delta);
            }
            return std::to_string(pick(options, rng)) + ".";
        }
        case AnswerCategory::Color: {
            auto it = similar_colors().find(token);
            if (it == similar_colors().end()) break;
            return render(pick(it->second, rng));
        }
        case AnswerCategory::Size:
            return render(token == "large" ? "small" : "large");
        case AnswerCategory::YesNo: {
            if (token == "yes" || token == "no") {
                return std::string(pick(std::array<std::string_view, 2>{"Maybe.", "Cannot tell."}, rng));
            }
            return token == "maybe" ? "Cannot tell." : "Maybe.";
        }
        case AnswerCategory::Material:
            return render(token == "rubber" ? "metal" : "rubber");
        case AnswerCategory::Shape: {
            auto it = similar_shapes().find(token);
            if (it == similar_shapes().end()) break;
            return render(pick(it->second, rng));
        }
    }
    throw ValidationError("no medium-tier rule applies to '" + item.answer + "'");
}

std::string inject_low(const QaItem& item, Rng& rng) {
    const auto category = classify_answer(item.answer);
    const auto token = head_token(item.answer);

    std::string out;
    if (category == AnswerCategory::YesNo && (token == "yes" || token == "no") && rng.index(2) == 0) {
        out = token == "yes" ? "No." : "Yes.";
    } else {
        // Wrong-category replacement, including the two nonexistent attributes.
        std::vector<std::string> options;
        auto add_category = [&](AnswerCategory c) {
            if (c == category) return;
            for (auto w : words_of(c)) options.push_back(render(w));
        };
        if (category == AnswerCategory::Number) {
            add_category(AnswerCategory::Color);
            add_category(AnswerCategory::Shape);
        } else {
            for (auto c : {AnswerCategory::Color, AnswerCategory::Size, AnswerCategory::Material,
                           AnswerCategory::Shape}) {
                add_category(c);
            }
        }
        if (category != AnswerCategory::Shape) options.push_back("Triangle.");
        if (category != AnswerCategory::Material) options.push_back("Plastic.");
        out = pick(options, rng);
    }
    if (rng.index(4) == 0) {
        out += pick(kIrrelevantExplanations, rng);
    }
    return out;
}

bool is_low_tier_corruption(std::string_view original, std::string_view modified) {
    const auto before = classify_answer(original);
    const auto after = classify_answer(modified);
    if (before != after) return true;
    const auto a = head_token(original);
    const auto b = head_token(modified);
    return before == AnswerCategory::YesNo && ((a == "yes" && b == "no") || (a == "no" && b == "yes"));
}

std::vector<QaItem> build_tiered_set(std::span<const QaItem> items, TierCounts counts, std::uint64_t seed) {
    const std::size_t total = counts.high + counts.medium + counts.low;
    if (items.size() < total) {
        throw ValidationError("build_tiered_set needs " + std::to_string(total) + " items, got " +
                              std::to_string(items.size()));
    }
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffler(derive_seed(seed, "tiered-shuffle"));
    shuffler.shuffle(std::span<std::size_t>(order));

    std::vector<std::pair<std::size_t, QaItem>> picked;
    picked.reserve(total);
    for (std::size_t k = 0; k < total; ++k) {
        QaItem item = items[order[k]];
        item.original_answer = item.answer;
        item.answer_category = classify_answer(item.answer);
        if (k < counts.high) {
            item.tier = Tier::H;
        } else {
            Rng rng(derive_seed(seed, "tier-item", item.id));
            if (k < counts.high + counts.medium) {
                item.tier = Tier::M;
                item.answer = inject_medium(item, rng);
            } else {
                item.tier = Tier::L;
                item.answer = inject_low(item, rng);
            }
            item.answer_category = classify_answer(item.answer);
        }
        item.reference_score = tier_ordinal(item.tier);
        picked.emplace_back(order[k], std::move(item));
    }
    // Emit in input order so the tier assignment, not the shuffle, is the
    // only visible effect; counts (n, 0, 0) then return the input unchanged.
    std::sort(picked.begin(), picked.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<QaItem> out;
    out.reserve(total);
    for (auto& [index, item] : picked) out.push_back(std::move(item));
    return out;
}

}  // namespace refinery
