#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace xilab::rng {

// mt19937_64 raw output is pinned by the standard; distributions are not.
// All sampling goes through these helpers so streams are reproducible
// across platforms and standard libraries.

using Engine = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double uniform01(Engine& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform(Engine& g, double lo, double hi) {
    return lo + (hi - lo) * uniform01(g);
}

/// Unbiased integer in [0, n) via rejection sampling.
inline std::uint64_t uniform_int(Engine& g, std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
    std::uint64_t x;
    do {
        x = g();
    } while (x >= limit);
    return x % n;
}

/// In-place Fisher-Yates shuffle with a fixed draw order.
template <typename T>
void shuffle(std::vector<T>& v, Engine& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(uniform_int(g, i));
        std::swap(v[i - 1], v[j]);
    }
}

/// First k indices of a seeded permutation of [0, n).
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Engine g(seed);
    shuffle(idx, g);
    if (k < n) idx.resize(k);
    return idx;
}

} // namespace xilab::rng
