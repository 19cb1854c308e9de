#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace refinery {

/// FNV-1a, 64 bit. Used to turn string ids into seed material.
std::uint64_t fnv1a(std::string_view text, std::uint64_t state = 0xcbf29ce484222325ULL);

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Combines a base seed with any number of string ids into a stream seed.
template <typename... Ids>
std::uint64_t derive_seed(std::uint64_t seed, const Ids&... ids) {
    std::uint64_t state = mix64(seed);
    ((state = mix64(state ^ fnv1a(std::string_view(ids)))), ...);
    return state;
}

/// Portable random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The std distributions are not, so the transforms live here:
/// uniform() takes the top 53 bits, normal() is the Box-Muller cosine branch,
/// index(n) rejects the biased tail of the 64-bit range. The same seed thus
/// gives bit-identical draws on every conforming platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform on [0, 1).
    double uniform();
    /// Standard normal.
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    /// Uniform on {0, ..., n-1}; n must be positive.
    std::size_t index(std::size_t n);

    template <typename T>
    void shuffle(std::span<T> values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::swap(values[i - 1], values[index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace refinery
