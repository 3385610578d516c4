#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "subspace_probe/decomposition.hpp"
#include "subspace_probe/dumpio.hpp"
#include "subspace_probe/linalg.hpp"
#include "subspace_probe/parallel.hpp"
#include "subspace_probe/stats.hpp"

namespace subspace_probe {

/// Inclusive layer interval; an unset bound means the first or last layer.
struct LayerRange {
    std::optional<std::size_t> first;
    std::optional<std::size_t> last;

    std::pair<std::size_t, std::size_t> resolve(std::size_t n_layers) const {
        const std::size_t lo = first.value_or(0), hi = last.value_or(n_layers);
        if (lo > hi || hi > n_layers)
            fail(ErrorKind::InvalidArgument, "layer range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                                 "] outside 0.." + std::to_string(n_layers));
        return {lo, hi};
    }
};

inline std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

/// Unit-normalized residuals of every token with the given role, ordered by
/// prompt, token, then layer.
inline DenseMatrix collect_role_matrix(const ResidualStreamDump& dump, Role role, const LayerRange& range = {}) {
    const auto [lo, hi] = range.resolve(dump.n_layers);
    std::vector<Vector> rows;
    const auto offsets = dump.token_offsets();
    for (std::size_t p = 0; p < dump.prompts.size(); ++p)
        for (std::size_t t = 0; t < dump.prompts[p].tokens.size(); ++t) {
            if (dump.prompts[p].tokens[t].role != role) continue;
            for (std::size_t l = lo; l <= hi; ++l) rows.push_back(to_double(dump.residual(offsets[p] + t, l)));
        }
    if (rows.empty()) fail(ErrorKind::NoSuchRole, "no " + role_name(role) + " tokens in dump");
    return normalize_rows(DenseMatrix::from_rows(rows));
}

struct ComponentDistanceReport {
    DistanceMatrix grid;  // rows: comp_S, columns: comp_A
    Vector minima;        // per comp_A component
};

inline ComponentDistanceReport component_distance_report(const ComponentSet& comp_S, const ComponentSet& comp_A,
                                                         unsigned threads = 1) {
    if (comp_S.d() != comp_A.d())
        fail(ErrorKind::MethodMismatch,
             "component dimensions " + std::to_string(comp_S.d()) + " and " + std::to_string(comp_A.d()));
    const bool signless = comp_S.method() == Method::ICA || comp_A.method() == Method::ICA;
    ComponentDistanceReport rep;
    rep.grid = pairwise_distances(comp_S.components(), comp_A.components(), signless, threads);
    rep.minima = min_distance_per_component(rep.grid);
    return rep;
}

struct AlignmentTrace {
    std::size_t layers = 0;  // depth count, n_layers + 1
    std::size_t k = 0;
    DenseMatrix coefficients;  // layers x k, averaged over prompts
    bool absolute = false;
    std::vector<DenseMatrix> per_prompt;  // one layers x k matrix per prompt
};

inline std::size_t final_separator_index(const DumpPrompt& p) {
    for (std::size_t t = 0; t < p.tokens.size(); ++t)
        if (p.tokens[t].role == Role::FinalSeparator) return t;
    fail(ErrorKind::InvariantViolation, "prompt '" + p.prompt_id + "' has no final separator");
}

/// Lasso codes of the final separator's unit-normalized residual at every
/// depth against fixed components; a zero residual codes to zero.
inline AlignmentTrace alignment_trace(const ResidualStreamDump& dump, const ComponentSet& comp_A, double lambda,
                                      unsigned threads = 1) {
    if (dump.hidden_dim != comp_A.d())
        fail(ErrorKind::DimensionMismatch, "dump width " + std::to_string(dump.hidden_dim) + ", components " +
                                               std::to_string(comp_A.d()));
    if (dump.prompts.empty()) fail(ErrorKind::EmptyMatrix, "dump has no prompts");
    AlignmentTrace tr;
    tr.layers = dump.n_layers + 1;
    tr.k = comp_A.k();
    tr.absolute = comp_A.method() == Method::ICA;
    tr.per_prompt.assign(dump.prompts.size(), DenseMatrix(tr.layers, tr.k));
    const auto offsets = dump.token_offsets();
    parallel_for(dump.prompts.size(), threads, [&](std::size_t p) {
        const std::size_t tok = offsets[p] + final_separator_index(dump.prompts[p]);
        DenseMatrix targets(tr.layers, tr.k == 0 ? 0 : comp_A.d());
        std::vector<bool> zero(tr.layers, false);
        for (std::size_t l = 0; l < tr.layers; ++l) {
            Vector v = to_double(dump.residual(tok, l));
            const double n = norm(v);
            if (n < kZeroNorm) {
                zero[l] = true;
                continue;
            }
            for (auto& x : v) x /= n;
            targets.set_row(l, v);
        }
        const auto codes = encode(targets, comp_A, lambda).codes;
        for (std::size_t l = 0; l < tr.layers; ++l)
            for (std::size_t j = 0; j < tr.k; ++j) {
                const double c = zero[l] ? 0.0 : codes(l, j);
                tr.per_prompt[p](l, j) = tr.absolute ? std::abs(c) : c;
            }
    });
    tr.coefficients = DenseMatrix(tr.layers, tr.k);
    for (const auto& m : tr.per_prompt)
        for (std::size_t i = 0; i < m.data().size(); ++i) tr.coefficients.data()[i] += m.data()[i];
    for (auto& v : tr.coefficients.data()) v /= static_cast<double>(dump.prompts.size());
    return tr;
}

struct DistanceScorePair {
    std::size_t component = 0;
    double d_min = 0.0;
    double coefficient = 0.0;
};

struct DistanceScoreReport {
    std::vector<DistanceScorePair> pairs;
    std::optional<double> rank_correlation;
};

/// Pairs each comp_A component's minimum distance to comp_S with its
/// coding coefficient at final_layer of the trace.
inline DistanceScoreReport distance_vs_score(const ComponentSet& comp_S, const ComponentSet& comp_A,
                                             const AlignmentTrace& trace, std::size_t final_layer) {
    if (trace.k != comp_A.k()) fail(ErrorKind::DimensionMismatch, "trace was not built from these components");
    if (final_layer >= trace.layers) fail(ErrorKind::InvalidArgument, "final_layer beyond trace depth");
    const auto rep = component_distance_report(comp_S, comp_A);
    DistanceScoreReport out;
    Vector ds, cs;
    for (std::size_t j = 0; j < comp_A.k(); ++j) {
        out.pairs.push_back({j, rep.minima[j], trace.coefficients(final_layer, j)});
        ds.push_back(rep.minima[j]);
        cs.push_back(trace.coefficients(final_layer, j));
    }
    out.rank_correlation = spearman(ds, cs);
    return out;
}

/// (C2 + ... + Ck) / ((k - 1) C1) over coefficients ordered by magnitude,
/// ties by index. absolute=true uses magnitudes; otherwise the signed values
/// in that order. NaN when |C1| < 1e-12.
inline double compute_R(std::span<const double> codes, std::size_t top_k = 4, bool absolute = true) {
    if (top_k < 2) fail(ErrorKind::InvalidArgument, "top_k must be at least 2");
    if (codes.size() < top_k)
        fail(ErrorKind::TooFewComponents,
             std::to_string(codes.size()) + " coefficients for top_k = " + std::to_string(top_k));
    std::vector<std::size_t> idx(codes.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(codes[a]) > std::abs(codes[b]); });
    auto c = [&](std::size_t r) { return absolute ? std::abs(codes[idx[r]]) : codes[idx[r]]; };
    if (std::abs(c(0)) < 1e-12) return std::numeric_limits<double>::quiet_NaN();
    double tail = 0.0;
    for (std::size_t r = 1; r < top_k; ++r) tail += c(r);
    return tail / (static_cast<double>(top_k - 1) * c(0));
}

struct PromptR {
    std::string prompt_id;
    double R = 0.0;
    bool correct = false;
};

enum class DiagnosisTarget { FinalSeparator, GeneratedFirst };

struct DiagnosisResult {
    std::vector<PromptR> per_prompt;             // finite R only
    std::vector<std::string> degenerate_prompts;  // |C1| below threshold, excluded
    std::optional<double> t_statistic;
    std::optional<double> p_value;
    std::size_t top_k = 4;
    std::size_t n_correct = 0;
    std::size_t n_incorrect = 0;
    std::string status = "ok";  // or "AllOneClass"
};

/// Welch test of R between correct and incorrect prompts; AllOneClass and
/// too-small groups are reported in status rather than thrown.
inline void test_R_groups(DiagnosisResult& res) {
    Vector good, bad;
    for (const auto& p : res.per_prompt) (p.correct ? good : bad).push_back(p.R);
    res.n_correct = good.size();
    res.n_incorrect = bad.size();
    res.t_statistic.reset();
    res.p_value.reset();
    if (good.empty() || bad.empty()) {
        res.status = std::string(to_string(ErrorKind::AllOneClass));
        return;
    }
    try {
        const auto t = welch_t_test(good, bad);
        res.t_statistic = t.t;
        res.p_value = t.p;
        res.status = "ok";
    } catch (const Error& e) {
        res.status = std::string(to_string(e.kind()));
    }
}

/// Encodes each prompt's last-layer target residual against comp_A,
/// computes R and Welch-tests it across correctness labels.
inline DiagnosisResult diagnose(const ResidualStreamDump& dump, const ComponentSet& comp_A, double lambda,
                                std::size_t top_k = 4, DiagnosisTarget target = DiagnosisTarget::FinalSeparator,
                                unsigned threads = 1) {
    if (dump.hidden_dim != comp_A.d())
        fail(ErrorKind::DimensionMismatch, "dump width " + std::to_string(dump.hidden_dim) + ", components " +
                                               std::to_string(comp_A.d()));
    for (const auto& p : dump.prompts)
        if (!p.correct) fail(ErrorKind::MissingLabels, "prompt '" + p.prompt_id + "' has no correctness label");
    const Role want = target == DiagnosisTarget::FinalSeparator ? Role::FinalSeparator : Role::GeneratedFirst;
    const auto offsets = dump.token_offsets();
    DenseMatrix targets(dump.prompts.size(), dump.hidden_dim);
    for (std::size_t p = 0; p < dump.prompts.size(); ++p) {
        const auto& toks = dump.prompts[p].tokens;
        std::optional<std::size_t> t;
        for (std::size_t i = 0; i < toks.size(); ++i)
            if (toks[i].role == want) t = i;
        if (!t) fail(ErrorKind::NoSuchRole, "prompt '" + dump.prompts[p].prompt_id + "' has no " + role_name(want));
        const auto v = dump.residual(offsets[p] + *t, dump.n_layers);
        for (std::size_t k = 0; k < dump.hidden_dim; ++k) targets(p, k) = v[k];
    }
    const auto codes = encode(targets, comp_A, lambda, threads).codes;
    const bool absolute = comp_A.method() == Method::ICA;
    DiagnosisResult res;
    res.top_k = top_k;
    for (std::size_t p = 0; p < dump.prompts.size(); ++p) {
        const double R = compute_R(codes.row(p), top_k, absolute);
        if (std::isnan(R)) {
            res.degenerate_prompts.push_back(dump.prompts[p].prompt_id);
            continue;
        }
        res.per_prompt.push_back({dump.prompts[p].prompt_id, R, *dump.prompts[p].correct});
    }
    test_R_groups(res);
    return res;
}

inline nlohmann::json to_json(const DiagnosisResult& r) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& p : r.per_prompt) per.push_back({{"prompt_id", p.prompt_id}, {"R", p.R}, {"correct", p.correct}});
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"per_prompt", per},
            {"t_statistic", opt(r.t_statistic)},
            {"p_value", opt(r.p_value)},
            {"top_k", r.top_k},
            {"n_correct", r.n_correct},
            {"n_incorrect", r.n_incorrect},
            {"degenerate_prompts", r.degenerate_prompts},
            {"status", r.status}};
}

}  // namespace subspace_probe
