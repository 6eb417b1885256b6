// Copyright (C) 2026 The amk authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace amk {

/// SplitMix64 stream. Every seeded quantity in the toolkit (toy weights, prompt
/// embeddings, synthetic clusters, mock metric adapters) is drawn from this
/// generator so results are identical across platforms and compilers.
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
///
/// uniform() takes the top 24 bits: (next() >> 40) * 2^-24, so it is exact in float.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// In [0, 1).
    float uniform() { return static_cast<float>(next() >> 40) * 0x1.0p-24f; }

    /// In [-1, 1).
    float symmetric() { return 2.0f * uniform() - 1.0f; }

    /// Box-Muller in double, rounded to float.
    float gaussian() {
        double u1 = (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
        double u2 = static_cast<double>(next() >> 11) * 0x1.0p-53;
        return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2));
    }

private:
    std::uint64_t state_;
};

/// 64-bit FNV-1a; used for stable content hashes (not security).
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derive an independent stream seed from a base seed and a label.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
    SplitMix64 mix(base ^ fnv1a64(label));
    return mix.next();
}

}  // namespace amk
