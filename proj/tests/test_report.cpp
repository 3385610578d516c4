#include <gtest/gtest.h>

#include "subspace_probe/report.hpp"
#include "support.hpp"

using namespace subspace_probe;
using test_support::error_kind;

namespace {

std::size_t count(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
}

}  // namespace

TEST(Csv, PreambleCarriesVersionAndConfig) {
    const nlohmann::json cfg{{"command", "distances"}, {"k", "20"}};
    const auto line = csv_preamble(cfg);
    EXPECT_EQ(line, std::string("# subspace-probe ") + kVersion + " config={\"command\":\"distances\",\"k\":\"20\"}\n");
}

TEST(Csv, GridRoundTripsExactly) {
    const auto a = normalize_rows(test_support::random_matrix(3, 6, 1));
    const auto b = normalize_rows(test_support::random_matrix(4, 6, 2));
    const auto dm = pairwise_distances(a, b, true);
    const auto h = parse_grid_csv(distance_grid_csv(dm, {}));
    EXPECT_EQ(h.corner, "separator_ic");
    EXPECT_EQ(h.row_labels, (std::vector<std::string>{"S0", "S1", "S2"}));
    EXPECT_EQ(h.col_labels, (std::vector<std::string>{"A0", "A1", "A2", "A3"}));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(h.values[i][j], dm.values(i, j));
}

TEST(Csv, TraceAndRatioLayouts) {
    AlignmentTrace tr;
    tr.layers = 2;
    tr.k = 2;
    tr.coefficients = DenseMatrix(2, 2, {0.0, 0.5, 0.25, 1.0});
    const auto h = parse_grid_csv(trace_csv(tr, {}));
    EXPECT_EQ(h.corner, "layer");
    EXPECT_EQ(h.row_labels, (std::vector<std::string>{"L0", "L1"}));
    EXPECT_EQ(h.values[1][0], 0.25);

    DiagnosisResult r;
    r.per_prompt = {{"p00000", 0.5, true}, {"p00001", 0.125, false}};
    const auto text = ratio_csv(r, {});
    EXPECT_NE(text.find("prompt_id,R,correct\np00000,0.5,true\np00001,0.125,false\n"), std::string::npos);

    DistanceScoreReport ds;
    ds.pairs = {{0, 0.1, 0.2}};
    EXPECT_NE(pairs_csv(ds, {}).find("# rank_correlation=none\n"), std::string::npos);
}

TEST(Csv, ParseErrors) {
    EXPECT_EQ(error_kind([] { parse_grid_csv("# only a comment\n"); }), ErrorKind::EmptyMatrix);
    EXPECT_EQ(error_kind([] { parse_grid_csv("layer,A0\nL0,abc\n"); }), ErrorKind::ParseError);
    EXPECT_EQ(error_kind([] { parse_grid_csv("layer,A0,A1\nL0,1\n"); }), ErrorKind::ParseError);
}

TEST(Svg, ViridisEndpoints) {
    EXPECT_EQ(viridis(0.0), (std::array<int, 3>{68, 1, 84}));
    EXPECT_EQ(viridis(1.0), (std::array<int, 3>{253, 231, 37}));
    EXPECT_EQ(viridis(-1.0), viridis(0.0));
    EXPECT_EQ(viridis(2.0), viridis(1.0));
}

TEST(Svg, OneCellPerValueWithLabels) {
    Heatmap h{"layer", {"L0", "L1", "L2"}, {"A0", "A1"}, {{0, 1}, {2, 3}, {4, 5}}};
    const auto svg = render_svg(h, "trace <x>", "answer component", "layer", nlohmann::json{{"k", 2}});
    EXPECT_EQ(count(svg, "<title>"), 6u);
    EXPECT_NE(svg.find("L2, A1: 5</title>"), std::string::npos);
    EXPECT_NE(svg.find("trace &lt;x&gt;"), std::string::npos);
    EXPECT_NE(svg.find(">answer component<"), std::string::npos);
    EXPECT_NE(svg.find(std::string("subspace-probe ") + kVersion), std::string::npos);
    EXPECT_NE(svg.find("fill=\"rgb(68,1,84)\"><title>L0, A0"), std::string::npos);
    EXPECT_NE(svg.find("fill=\"rgb(253,231,37)\"><title>L2, A1"), std::string::npos);
    EXPECT_EQ(svg, render_svg(h, "trace <x>", "answer component", "layer", nlohmann::json{{"k", 2}}));
}

TEST(Svg, ConstantGridStillRenders) {
    Heatmap h{"layer", {"L0"}, {"A0", "A1"}, {{0.3, 0.3}}};
    EXPECT_EQ(count(render_svg(h, "", "", ""), "<title>"), 2u);
}
