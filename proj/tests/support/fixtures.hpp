#pragma once

// Synthetic inputs shared by unit and acceptance tests.

#include <array>
#include <string>
#include <vector>

#include "refinery/corpus.hpp"
#include "refinery/random.hpp"

namespace fixtures {

/// CLEVR-style QA items cycling through every answer category.
inline std::vector<refinery::QaItem> clevr_items(std::size_t n, std::uint64_t seed) {
    using refinery::AnswerCategory;
    static const std::array<const char*, 8> colors{"Gray.", "Red.", "Blue.", "Green.",
                                                   "Brown.", "Purple.", "Cyan.", "Yellow."};
    static const std::array<const char*, 3> shapes{"Cube.", "Sphere.", "Cylinder."};
    refinery::Rng rng(seed);
    std::vector<refinery::QaItem> items;
    for (std::size_t i = 0; i < n; ++i) {
        refinery::QaItem item;
        item.id = "clevr_" + std::to_string(i);
        switch (i % 6) {
            case 0:
                item.question = "How many objects are there?";
                item.answer = std::to_string(rng.index(10)) + ".";
                item.answer_category = AnswerCategory::Number;
                break;
            case 1:
                item.question = "What color is the large sphere?";
                item.answer = colors[rng.index(colors.size())];
                item.answer_category = AnswerCategory::Color;
                break;
            case 2:
                item.question = "What size is the cube?";
                item.answer = rng.index(2) ? "Large." : "Small.";
                item.answer_category = AnswerCategory::Size;
                break;
            case 3:
                item.question = "Is there a red cylinder?";
                item.answer = rng.index(2) ? "Yes." : "No.";
                item.answer_category = AnswerCategory::YesNo;
                break;
            case 4:
                item.question = "What material is the small ball?";
                item.answer = rng.index(2) ? "Rubber." : "Metal.";
                item.answer_category = AnswerCategory::Material;
                break;
            default:
                item.question = "What shape is the green object?";
                item.answer = shapes[rng.index(shapes.size())];
                item.answer_category = AnswerCategory::Shape;
                break;
        }
        item.original_answer = item.answer;
        items.push_back(item);
    }
    return items;
}

/// Samples with latent quality y ~ U[0, 5], spread evenly over `domains`.
inline std::vector<refinery::Sample> synthetic_corpus(std::size_t n, std::size_t domains, std::uint64_t seed) {
    refinery::Rng rng(seed);
    std::vector<refinery::Sample> out;
    for (std::size_t i = 0; i < n; ++i) {
        refinery::Sample s;
        char id[32];
        std::snprintf(id, sizeof id, "s%05zu", i);
        s.id = id;
        s.image_ref = "images/" + s.id + ".png";
        s.question = "What is shown in image " + std::to_string(i) + "?";
        s.answer = "Answer " + std::to_string(i) + ".";
        s.domain = "domain_" + std::to_string(i % domains);
        s.source = "synthetic";
        s.latent_truth = 5.0 * rng.uniform();
        out.push_back(s);
    }
    return out;
}

inline std::vector<refinery::VisionPrior> synthetic_priors(const std::vector<refinery::Sample>& samples) {
    std::vector<refinery::VisionPrior> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        out.push_back({samples[i].id, {"object_" + std::to_string(i % 7), "table"}, {"text " + std::to_string(i)}});
    }
    return out;
}

}  // namespace fixtures
