#include <gtest/gtest.h>

#include <cmath>

#include "subspace_probe/stats.hpp"
#include "support.hpp"

using namespace subspace_probe;
using test_support::error_kind;

namespace {

// Two-sided tail of Student's t by composite Simpson integration of the density.
double t_two_sided_quadrature(double t, double df) {
    const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
    auto f = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
    const double a = std::abs(t);
    const int n = 400000;
    const double h = a / n;
    double s = f(0) + f(a);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * f(i * h);
    return 1.0 - 2.0 * s * h / 3.0;
}

// Fixture samples.
const std::vector<double> kXs{0.42, 0.51, 0.39, 0.47, 0.55, 0.44, 0.49, 0.58, 0.41, 0.46, 0.53, 0.50};
const std::vector<double> kYs{0.61, 0.48, 0.70, 0.57, 0.66, 0.52, 0.74, 0.59};

}  // namespace

TEST(Welch, IdenticalSamples) {
    const auto r = welch_t_test(kXs, kXs);
    EXPECT_EQ(r.t, 0.0);
    EXPECT_NEAR(r.p, 1.0, 1e-12);
}

TEST(Welch, ExtremeSeparation) {
    const std::vector<double> xs{0, 0.01, 0, 0.02, 0.01}, ys{1000, 1000.01, 1000.02, 999.99, 1000};
    EXPECT_LT(welch_t_test(xs, ys).p, 1e-6);
}

TEST(Welch, MatchesQuadratureOracle) {
    const auto r = welch_t_test(kXs, kYs);
    // Hand-expanded statistic.
    double mx = 0, my = 0;
    for (double x : kXs) mx += x / kXs.size();
    for (double y : kYs) my += y / kYs.size();
    double sx = 0, sy = 0;
    for (double x : kXs) sx += (x - mx) * (x - mx) / (kXs.size() - 1);
    for (double y : kYs) sy += (y - my) * (y - my) / (kYs.size() - 1);
    const double vx = sx / kXs.size(), vy = sy / kYs.size();
    EXPECT_NEAR(r.t, (mx - my) / std::sqrt(vx + vy), 1e-12);
    EXPECT_NEAR(r.df, (vx + vy) * (vx + vy) / (vx * vx / (kXs.size() - 1) + vy * vy / (kYs.size() - 1)), 1e-9);
    EXPECT_NEAR(r.p, t_two_sided_quadrature(r.t, r.df), 1e-6);
    EXPECT_LT(r.p, 0.05);
}

TEST(Welch, QuadratureAcrossShifts) {
    for (double shift : {0.0, 0.02, 0.05, 0.1, 0.3}) {
        std::vector<double> ys = kYs;
        for (auto& y : ys) y -= 0.15 - shift;
        const auto r = welch_t_test(kXs, ys);
        EXPECT_NEAR(r.p, t_two_sided_quadrature(r.t, r.df), 1e-6) << shift;
        EXPECT_GE(r.p, 0.0);
        EXPECT_LE(r.p, 1.0);
    }
}

TEST(Welch, SymmetricInGroups) {
    const auto a = welch_t_test(kXs, kYs), b = welch_t_test(kYs, kXs);
    EXPECT_DOUBLE_EQ(a.p, b.p);
    EXPECT_DOUBLE_EQ(a.t, -b.t);
}

TEST(Welch, Errors) {
    EXPECT_EQ(error_kind([] { welch_t_test(std::vector<double>{1.0}, kYs); }), ErrorKind::TooFewSamples);
    EXPECT_EQ(error_kind([] { welch_t_test(std::vector<double>{1, 1, 1}, std::vector<double>{2, 2}); }),
              ErrorKind::ZeroVariance);
}

TEST(Spearman, PerfectAndReversed) {
    const std::vector<double> x{1, 2, 3, 4, 5}, y{10, 20, 30, 40, 100}, z{5, 4, 3, 2, 1};
    EXPECT_NEAR(*spearman(x, y), 1.0, 1e-15);
    EXPECT_NEAR(*spearman(x, z), -1.0, 1e-15);
}

TEST(Spearman, TiesUseAverageRanks) {
    const std::vector<double> x{1, 2, 2, 3};
    EXPECT_EQ(average_ranks(x), (std::vector<double>{1, 2.5, 2.5, 4}));
    // Pearson of (1,2.5,2.5,4) with (1,2,3,4) by hand: cross sum 4.5, squares 4.5 and 5.
    EXPECT_NEAR(*spearman(x, std::vector<double>{1, 2, 3, 4}), 4.5 / std::sqrt(4.5 * 5.0), 1e-12);
}

TEST(Spearman, UndefinedWhenConstant) {
    EXPECT_FALSE(spearman(std::vector<double>{0, 0, 0}, std::vector<double>{1, 2, 3}).has_value());
    EXPECT_FALSE(spearman(std::vector<double>{1}, std::vector<double>{1}).has_value());
}
