#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "subspace_probe/linalg.hpp"

namespace test_support {

using subspace_probe::DenseMatrix;

inline DenseMatrix random_matrix(std::size_t rows, std::size_t cols, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    DenseMatrix m(rows, cols);
    for (auto& v : m.data()) v = nd(rng);
    return m;
}

// Plain-loop signless distance, kept separate from the library code path.
inline double naive_signless(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    const double d = 1.0 - ab / std::sqrt(aa * bb);
    return std::min(d, 2.0 - d);
}

// Greedy one-to-one matching of each truth row to its closest unused
// estimate row; returns the matched distances in truth-row order.
inline std::vector<double> greedy_match(const DenseMatrix& truth, const DenseMatrix& estimate) {
    std::vector<bool> used(estimate.rows(), false);
    std::vector<double> out(truth.rows(), std::numeric_limits<double>::infinity());
    std::vector<bool> done(truth.rows(), false);
    for (std::size_t round = 0; round < truth.rows(); ++round) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bt = 0, be = 0;
        for (std::size_t t = 0; t < truth.rows(); ++t) {
            if (done[t]) continue;
            for (std::size_t e = 0; e < estimate.rows(); ++e) {
                if (used[e]) continue;
                const double dist = naive_signless(truth.row_vector(t), estimate.row_vector(e));
                if (dist < best) {
                    best = dist;
                    bt = t;
                    be = e;
                }
            }
        }
        if (!std::isfinite(best)) break;
        done[bt] = true;
        used[be] = true;
        out[bt] = best;
    }
    return out;
}

}  // namespace test_support

namespace test_support {

// Runs fn and returns the kind of the toolkit error it throws.
template <class F>
std::optional<subspace_probe::ErrorKind> error_kind(F&& fn) {
    try {
        fn();
    } catch (const subspace_probe::Error& e) {
        return e.kind();
    }
    return std::nullopt;
}

inline std::filesystem::path data_dir() { return SUBSPACE_PROBE_SOURCE_DATA_DIR; }

}  // namespace test_support
