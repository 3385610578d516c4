#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "subspace_probe/error.hpp"

namespace subspace_probe {

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    double df = 0.0;
};

inline double mean(std::span<const double> xs) {
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double sample_variance(std::span<const double> xs) {
    const double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

/// Two-tailed unequal-variance t-test with Welch-Satterthwaite degrees of freedom.
inline TTestResult welch_t_test(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() < 2 || ys.size() < 2)
        fail(ErrorKind::TooFewSamples,
             "group sizes " + std::to_string(xs.size()) + " and " + std::to_string(ys.size()));
    const double nx = static_cast<double>(xs.size()), ny = static_cast<double>(ys.size());
    const double vx = sample_variance(xs) / nx, vy = sample_variance(ys) / ny;
    const double se2 = vx + vy;
    if (!(se2 > 0.0)) fail(ErrorKind::ZeroVariance, "both groups are constant");
    TTestResult r;
    r.t = (mean(xs) - mean(ys)) / std::sqrt(se2);
    r.df = se2 * se2 / (vx * vx / (nx - 1.0) + vy * vy / (ny - 1.0));
    const boost::math::students_t dist(r.df);
    r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
    return r;
}

/// Ranks with ties sharing their average rank (1-based).
inline std::vector<double> average_ranks(std::span<const double> xs) {
    std::vector<std::size_t> idx(xs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

/// Spearman rank correlation; nullopt when either side has no rank variance.
inline std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size())
        fail(ErrorKind::DimensionMismatch, "spearman inputs differ in length");
    if (xs.size() < 2) return std::nullopt;
    const auto rx = average_ranks(xs), ry = average_ranks(ys);
    const double mx = mean(rx), my = mean(ry);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace subspace_probe
