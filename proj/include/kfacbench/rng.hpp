#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

#include "kfacbench/common.hpp"

namespace kfacbench {

// SplitMix64: portable 64-bit generator with splittable sub-streams.
// All randomness in the library flows through this type so that runs are
// bit-identical across platforms; std::random distributions are avoided
// because their output is implementation-defined.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller (cosine branch). Consumes exactly two
    // uniforms per draw, keeping the stream position independent of history.
    double next_gaussian() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Unbiased uniform in [0, n) by rejection.
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) {
            throw ParameterError("next_below: n must be positive");
        }
        const std::uint64_t threshold = (0 - n) % n; // 2^64 mod n
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) {
                return r % n;
            }
        }
    }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

// Named sub-streams: stream identity is a hash of the purpose tag mixed with
// the seed (and an optional index, e.g. the epoch or iteration number).
inline SplitMix64 stream(std::uint64_t seed, std::string_view tag) {
    return SplitMix64(mix64(mix64(seed) ^ fnv1a64(tag)));
}

inline SplitMix64 stream(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
    return SplitMix64(mix64((mix64(seed) ^ fnv1a64(tag)) + mix64(index)));
}

} // namespace kfacbench
