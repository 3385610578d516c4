#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace subspace_probe {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gaussian(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

/// First `m` entries of a seeded partial Fisher-Yates shuffle of [0, n).
inline std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t m) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t j = i + uniform_index(rng, n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(m);
    return idx;
}

}  // namespace subspace_probe
