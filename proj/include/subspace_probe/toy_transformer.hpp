#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "subspace_probe/error.hpp"
#include "subspace_probe/linalg.hpp"
#include "subspace_probe/prompts.hpp"
#include "subspace_probe/rng.hpp"

namespace subspace_probe {

enum class Activation { ReLU, GELU };

inline std::string activation_name(Activation a) { return a == Activation::ReLU ? "ReLU" : "GELU"; }

inline Activation parse_activation(const std::string& s) {
    if (s == "ReLU" || s == "relu") return Activation::ReLU;
    if (s == "GELU" || s == "gelu") return Activation::GELU;
    fail(ErrorKind::InvalidArgument, "unknown activation '" + s + "'");
}

/// Two-layer feed-forward block: rows of w_first are features, columns of
/// w_second the values they emit.
struct FFNSpec {
    DenseMatrix w_first;   // n_mem x d
    DenseMatrix w_second;  // d x n_mem
    Activation activation = Activation::ReLU;
};

inline double mutual_coherence(const std::vector<Vector>& features) {
    double worst = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i)
        for (std::size_t j = i + 1; j < features.size(); ++j)
            worst = std::max(worst, std::abs(dot(features[i], features[j])));
    return worst;
}

inline FFNSpec build_associative_ffn(const std::vector<Vector>& features, const std::vector<Vector>& values,
                                     Activation activation, std::vector<std::string>* warnings = nullptr) {
    if (features.size() != values.size())
        fail(ErrorKind::CountMismatch,
             std::to_string(features.size()) + " features, " + std::to_string(values.size()) + " values");
    if (features.empty()) fail(ErrorKind::CountMismatch, "no memory cells");
    const std::size_t d = features.front().size();
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].size() != d || values[i].size() != d)
            fail(ErrorKind::DimensionMismatch, "memory cell " + std::to_string(i));
        if (std::abs(norm(features[i]) - 1.0) > 1e-9)
            fail(ErrorKind::NonUnitFeature, "feature " + std::to_string(i) + " has norm " +
                                                std::to_string(norm(features[i])));
    }
    if (warnings) {
        if (features.size() > d)
            warnings->push_back(std::to_string(features.size()) + " memory cells exceed d = " + std::to_string(d));
        const double mu = mutual_coherence(features);
        if (mu > 0.5) warnings->push_back("feature mutual coherence " + std::to_string(mu) + " exceeds 0.5");
    }
    FFNSpec ffn{DenseMatrix::from_rows(features), DenseMatrix(d, features.size()), activation};
    for (std::size_t i = 0; i < values.size(); ++i)
        for (std::size_t r = 0; r < d; ++r) ffn.w_second(r, i) = values[i][r];
    return ffn;
}

inline double activate(Activation a, double x) {
    if (a == Activation::ReLU) return x > 0.0 ? x : 0.0;
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

/// O_k = sum_i w2_ki g(sum_j w1_ij x_j).
inline Vector ffn_forward(const FFNSpec& ffn, std::span<const double> x) {
    if (x.size() != ffn.w_first.cols())
        fail(ErrorKind::DimensionMismatch,
             "input has dim " + std::to_string(x.size()) + ", FFN expects " + std::to_string(ffn.w_first.cols()));
    const std::size_t n_mem = ffn.w_first.rows();
    const std::size_t d = ffn.w_second.rows();
    Vector out(d, 0.0);
    for (std::size_t i = 0; i < n_mem; ++i) {
        const double g = activate(ffn.activation, dot(ffn.w_first.row(i), x));
        if (g == 0.0) continue;
        for (std::size_t k = 0; k < d; ++k) out[k] += ffn.w_second(k, i) * g;
    }
    return out;
}

namespace detail {

inline void check_square(const DenseMatrix& m, std::size_t d, const char* name) {
    if (m.rows() != d || m.cols() != d)
        fail(ErrorKind::DimensionMismatch, std::string(name) + " must be " + std::to_string(d) + "x" +
                                               std::to_string(d));
}

}  // namespace detail

/// Causal single-head attention: A_ij = (K h_i).(Q h_j),
/// a_j = (1/sqrt d) sum_{i<=j} softmax_i(A_ij) V h_i.
inline DenseMatrix attention_forward_exact(const DenseMatrix& h, const DenseMatrix& K, const DenseMatrix& Q,
                                           const DenseMatrix& V) {
    const std::size_t d = h.cols();
    detail::check_square(K, d, "K");
    detail::check_square(Q, d, "Q");
    detail::check_square(V, d, "V");
    const Eigen::MatrixXd H = h.eigen();
    const Eigen::MatrixXd KH = H * K.eigen().transpose();
    const Eigen::MatrixXd QH = H * Q.eigen().transpose();
    const Eigen::MatrixXd VH = H * V.eigen().transpose();
    const auto T = H.rows();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(T, static_cast<Eigen::Index>(d));
    for (Eigen::Index j = 0; j < T; ++j) {
        const Eigen::VectorXd s = KH.topRows(j + 1) * QH.row(j).transpose();
        const double mx = s.maxCoeff();
        const Eigen::VectorXd w = (s.array() - mx).exp().matrix();
        out.row(j) = (w.transpose() * VH.topRows(j + 1)) / w.sum() * inv_sqrt_d;
    }
    return DenseMatrix::from_eigen(out);
}

struct RoleConstants {
    double alpha = 0.0;  // Query, TestQuery
    double beta = 0.0;   // Separator, FinalSeparator
    double gamma = 0.0;  // Answer
};

inline double role_score(Role r, const RoleConstants& c) {
    switch (r) {
        case Role::Query:
        case Role::TestQuery: return c.alpha;
        case Role::Separator:
        case Role::FinalSeparator: return c.beta;
        case Role::Answer: return c.gamma;
        case Role::GeneratedFirst: break;
    }
    fail(ErrorKind::RoleMismatch, "role " + role_name(r) + " has no attention constant");
}

/// Grouped weights for the last position: each attended token of a role
/// receives e^score / M with M = sqrt(d) (N_Q e^alpha + N_S e^beta + N_A e^gamma).
struct ConstantAttentionWeights {
    double normalizer = 0.0;  // M
    std::size_t n_query = 0, n_separator = 0, n_answer = 0;
    Vector weights;  // per token; 0 for an excluded self position
};

inline ConstantAttentionWeights constant_attention_weights(const std::vector<RoleToken>& roles, const RoleConstants& c,
                                                           std::size_t d, bool include_self = true) {
    if (roles.empty()) fail(ErrorKind::RoleMismatch, "no tokens");
    const std::size_t attended = include_self ? roles.size() : roles.size() - 1;
    if (attended == 0) fail(ErrorKind::RoleMismatch, "nothing to attend to");
    ConstantAttentionWeights w;
    for (std::size_t i = 0; i < attended; ++i) {
        role_score(roles[i].role, c);
        if (roles[i].role == Role::Query || roles[i].role == Role::TestQuery) ++w.n_query;
        else if (roles[i].role == Role::Answer) ++w.n_answer;
        else ++w.n_separator;
    }
    w.normalizer = std::sqrt(static_cast<double>(d)) *
                   (static_cast<double>(w.n_query) * std::exp(c.alpha) +
                    static_cast<double>(w.n_separator) * std::exp(c.beta) +
                    static_cast<double>(w.n_answer) * std::exp(c.gamma));
    w.weights.assign(roles.size(), 0.0);
    for (std::size_t i = 0; i < attended; ++i) w.weights[i] = std::exp(role_score(roles[i].role, c)) / w.normalizer;
    return w;
}

/// Attention output at the last row of h when every score is replaced by its
/// role constant, evaluated in grouped form: per-role sums of V h_i, each
/// scaled once by its group weight.
inline Vector attention_forward_constant(const DenseMatrix& h, const std::vector<RoleToken>& roles,
                                         const RoleConstants& c, const DenseMatrix& V, bool include_self = true) {
    if (roles.size() != h.rows())
        fail(ErrorKind::RoleMismatch,
             std::to_string(roles.size()) + " roles for " + std::to_string(h.rows()) + " residual rows");
    const std::size_t d = h.cols();
    detail::check_square(V, d, "V");
    if (h.rows() == 0) fail(ErrorKind::RoleMismatch, "empty prompt");
    const std::size_t attended = include_self ? h.rows() : h.rows() - 1;
    if (attended == 0) fail(ErrorKind::RoleMismatch, "nothing to attend to");

    // Group sums of h_i; V is applied once per group.
    Eigen::VectorXd sum_q = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    Eigen::VectorXd sum_s = sum_q, sum_a = sum_q;
    double nq = 0, ns = 0, na = 0;
    for (std::size_t i = 0; i < attended; ++i) {
        const Eigen::VectorXd hi = h.eigen().row(static_cast<Eigen::Index>(i)).transpose();
        switch (roles[i].role) {
            case Role::Query:
            case Role::TestQuery: sum_q += hi; nq += 1; break;
            case Role::Separator:
            case Role::FinalSeparator: sum_s += hi; ns += 1; break;
            case Role::Answer: sum_a += hi; na += 1; break;
            case Role::GeneratedFirst: role_score(roles[i].role, c);
        }
    }
    // Shift by the largest present score; the common factor cancels in e^s / M.
    double mx = -std::numeric_limits<double>::infinity();
    if (nq > 0) mx = std::max(mx, c.alpha);
    if (ns > 0) mx = std::max(mx, c.beta);
    if (na > 0) mx = std::max(mx, c.gamma);
    const double eq = nq > 0 ? std::exp(c.alpha - mx) : 0.0;
    const double es = ns > 0 ? std::exp(c.beta - mx) : 0.0;
    const double ea = na > 0 ? std::exp(c.gamma - mx) : 0.0;
    const double M = std::sqrt(static_cast<double>(d)) * (nq * eq + ns * es + na * ea);
    const Eigen::VectorXd grouped = (eq / M) * sum_q + (es / M) * sum_s + (ea / M) * sum_a;
    const Eigen::VectorXd out = V.eigen() * grouped;
    return Vector(out.data(), out.data() + out.size());
}

struct ContextTag {
    std::size_t context_id = 0;
    std::string value_word;
    double coefficient = 0.0;
};

struct ExactAttention {
    std::vector<DenseMatrix> K, Q, V;  // one per layer
};

struct ConstantAttention {
    std::vector<RoleConstants> constants;  // one per layer
    DenseMatrix V;
};

/// Synthetic transformer: embeddings, one FFN bank per layer, single-head
/// attention in exact or role-constant mode, no layer norm, no output matrix.
struct ToyModelConfig {
    std::string name;
    std::uint64_t seed = 0;
    std::size_t d = 0;
    std::size_t n_layers = 0;
    std::vector<std::pair<std::string, Vector>> vocab;
    std::vector<FFNSpec> ffn_per_layer;
    std::variant<ExactAttention, ConstantAttention> attention;
    std::map<std::string, std::vector<ContextTag>> context_tags;
    std::vector<Vector> context_vectors;   // ground-truth context directions, by context id
    std::vector<std::string> answer_lexicon;

    const Vector& embedding(const std::string& word) const {
        for (const auto& [w, e] : vocab)
            if (w == word) return e;
        fail(ErrorKind::UnknownWord, "'" + word + "' is not in the vocabulary");
    }

    void validate() const {
        if (d == 0) fail(ErrorKind::InvalidArgument, "d must be positive");
        std::set<std::string> seen;
        for (const auto& [w, e] : vocab) {
            if (!seen.insert(w).second) fail(ErrorKind::InvalidArgument, "duplicate vocabulary word '" + w + "'");
            if (e.size() != d) fail(ErrorKind::DimensionMismatch, "embedding of '" + w + "'");
            if (std::abs(norm(e) - 1.0) > 1e-9) fail(ErrorKind::InvariantViolation, "embedding of '" + w + "' is not unit-norm");
        }
        if (ffn_per_layer.size() != n_layers) fail(ErrorKind::CountMismatch, "one FFN per layer required");
        for (const auto& f : ffn_per_layer) {
            if (f.w_first.cols() != d || f.w_second.rows() != d || f.w_first.rows() != f.w_second.cols())
                fail(ErrorKind::DimensionMismatch, "FFN bank shape");
        }
        if (const auto* ex = std::get_if<ExactAttention>(&attention)) {
            if (ex->K.size() != n_layers || ex->Q.size() != n_layers || ex->V.size() != n_layers)
                fail(ErrorKind::CountMismatch, "exact attention needs K, Q, V per layer");
            for (std::size_t l = 0; l < n_layers; ++l) {
                detail::check_square(ex->K[l], d, "K");
                detail::check_square(ex->Q[l], d, "Q");
                detail::check_square(ex->V[l], d, "V");
            }
        } else {
            const auto& c = std::get<ConstantAttention>(attention);
            if (c.constants.size() != n_layers) fail(ErrorKind::CountMismatch, "constants per layer required");
            for (const auto& rc : c.constants)
                if (!std::isfinite(rc.alpha) || !std::isfinite(rc.beta) || !std::isfinite(rc.gamma))
                    fail(ErrorKind::NonFinite, "attention constants must be finite");
            detail::check_square(c.V, d, "V");
        }
    }
};

struct LayerTrace {
    std::vector<DenseMatrix> h;  // n_layers + 1 entries, each tokens x d
    std::vector<DenseMatrix> a;  // n_layers entries
    std::vector<DenseMatrix> m;  // n_layers entries
};

struct ModelRun {
    RenderedPrompt prompt;
    LayerTrace trace;
};

/// h^l = h^{l-1} + a^l + m^l(a^l + h^{l-1}) for each layer.
inline LayerTrace run_tokens(const ToyModelConfig& config, const std::vector<RoleToken>& tokens) {
    const std::size_t T = tokens.size();
    const std::size_t d = config.d;
    LayerTrace trace;
    DenseMatrix h0(T, d);
    for (std::size_t i = 0; i < T; ++i) h0.set_row(i, config.embedding(tokens[i].text));
    trace.h.push_back(std::move(h0));
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        const DenseMatrix& prev = trace.h.back();
        DenseMatrix a;
        if (const auto* ex = std::get_if<ExactAttention>(&config.attention)) {
            a = attention_forward_exact(prev, ex->K[l], ex->Q[l], ex->V[l]);
        } else {
            const auto& c = std::get<ConstantAttention>(config.attention);
            a = DenseMatrix(T, d);
            for (std::size_t j = 0; j < T; ++j) {
                DenseMatrix prefix(j + 1, d,
                                   std::vector<double>(prev.data().begin(),
                                                       prev.data().begin() + static_cast<std::ptrdiff_t>((j + 1) * d)));
                const std::vector<RoleToken> roles(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(j + 1));
                a.set_row(j, attention_forward_constant(prefix, roles, c.constants[l], c.V));
            }
        }
        DenseMatrix m(T, d), next(T, d);
        Vector x(d);
        for (std::size_t i = 0; i < T; ++i) {
            for (std::size_t k = 0; k < d; ++k) x[k] = a(i, k) + prev(i, k);
            m.set_row(i, ffn_forward(config.ffn_per_layer[l], x));
            for (std::size_t k = 0; k < d; ++k) next(i, k) = prev(i, k) + a(i, k) + m(i, k);
        }
        require_finite(next, "layer " + std::to_string(l + 1));
        trace.a.push_back(std::move(a));
        trace.m.push_back(std::move(m));
        trace.h.push_back(std::move(next));
    }
    return trace;
}

inline ModelRun run_model(const ToyModelConfig& config, const PromptSpec& prompt, const PromptTemplate& tpl = {}) {
    ModelRun run{render_prompt(prompt, tpl), {}};
    run.trace = run_tokens(config, run.prompt.tokens);
    return run;
}

/// Word with the largest cosine similarity to h; earlier candidates win ties.
inline std::string decode_answer(std::span<const double> h,
                                 const std::vector<std::pair<std::string, Vector>>& candidates) {
    if (candidates.empty()) fail(ErrorKind::InvalidArgument, "no decode candidates");
    const double hn = norm(h);
    std::size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const double en = norm(candidates[i].second);
        const double sim = (hn < kZeroNorm || en < kZeroNorm) ? 0.0 : dot(h, candidates[i].second) / (hn * en);
        if (sim > best_sim) {
            best_sim = sim;
            best = i;
        }
    }
    return candidates[best].first;
}

/// Readout for a toy run: the answer lexicon minus every word already present
/// in the prompt, scored against the final separator's last-layer residual.
inline std::string decode_run(const ToyModelConfig& config, const ModelRun& run) {
    std::set<std::string> present;
    for (const auto& t : run.prompt.tokens) present.insert(t.text);
    std::vector<std::pair<std::string, Vector>> cands;
    for (const auto& w : config.answer_lexicon)
        if (!present.count(w)) cands.emplace_back(w, config.embedding(w));
    const auto& last = run.trace.h.back();
    return decode_answer(last.row(last.rows() - 1), cands);
}

struct AuditReport {
    double max_abs_error = 0.0;
    Vector ffn_share;  // per depth 0..L: |sum m| / (|sum m| + |h0 + sum a|), pooled over tokens
};

inline AuditReport residual_audit(const LayerTrace& trace, double tolerance = 1e-9) {
    if (trace.h.empty() || trace.a.size() + 1 != trace.h.size() || trace.m.size() != trace.a.size())
        fail(ErrorKind::AuditFailure, "incomplete trace");
    const DenseMatrix& h0 = trace.h.front();
    const std::size_t T = h0.rows(), d = h0.cols();
    AuditReport rep;
    DenseMatrix sum_a(T, d), sum_m(T, d);
    rep.ffn_share.push_back(0.0);
    for (std::size_t l = 0; l < trace.a.size(); ++l) {
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t k = 0; k < d; ++k) {
                const double step = trace.h[l](i, k) + trace.a[l](i, k) + trace.m[l](i, k);
                if (step != trace.h[l + 1](i, k))
                    fail(ErrorKind::AuditFailure, "recursion broken at layer " + std::to_string(l + 1) + ", token " +
                                                      std::to_string(i));
                sum_a(i, k) += trace.a[l](i, k);
                sum_m(i, k) += trace.m[l](i, k);
            }
        double m_norm = 0.0, rest_norm = 0.0;
        Vector rest(d);
        for (std::size_t i = 0; i < T; ++i) {
            for (std::size_t k = 0; k < d; ++k) rest[k] = h0(i, k) + sum_a(i, k);
            m_norm += norm(sum_m.row(i));
            rest_norm += norm(rest);
        }
        rep.ffn_share.push_back(m_norm + rest_norm > 0.0 ? m_norm / (m_norm + rest_norm) : 0.0);
    }
    const DenseMatrix& hL = trace.h.back();
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t k = 0; k < d; ++k) {
            const double err = std::abs(hL(i, k) - (h0(i, k) + sum_a(i, k) + sum_m(i, k)));
            rep.max_abs_error = std::max(rep.max_abs_error, err);
            if (err > tolerance)
                fail(ErrorKind::AuditFailure, "expansion off by " + std::to_string(err) + " at token " +
                                                  std::to_string(i) + ", dim " + std::to_string(k));
        }
    return rep;
}

// ---------------------------------------------------------------------------
// Shipped configurations.

struct CountingOptions {
    std::size_t d = 64;
    std::size_t n_layers = 8;
    std::size_t n_distractor_contexts = 6;
    std::size_t max_pairs = 18;
    double context_weight = 1.0;      // context direction mixed into each value embedding
    double value_scale = 1.0;         // query memory output scale
    double context_scale = 0.1;       // value-word memory emitting its context direction
    std::pair<double, double> shared_coef{0.8, 1.2};
    std::pair<double, double> distractor_coef{0.9, 1.5};
    double attention_value_scale = 0.5;
    RoleConstants constants{};
    Activation activation = Activation::ReLU;
};

struct SharingOptions {
    std::size_t d = 64;
    std::size_t n_layers = 8;
    std::size_t n_distractor_contexts = 6;
    std::size_t max_pairs = 18;
    double context_weight = 1.0;
    double value_scale = 16.0;
    double score_gain = 10.0;
    std::pair<double, double> shared_coef{0.8, 1.2};
    std::pair<double, double> distractor_coef{0.9, 1.5};
};

struct ToyBuild {
    ToyModelConfig config;
    TaskPool pool;  // the pairs the model knows; prompts must be drawn from it
};

namespace detail {

// Hands out directions of a seeded random orthonormal basis, then random unit
// vectors once the basis is exhausted.
class DirectionAllocator {
public:
    DirectionAllocator(std::size_t d, Rng& rng) : d_(d), rng_(rng) {
        Eigen::MatrixXd g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        for (Eigen::Index i = 0; i < g.rows(); ++i)
            for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = gaussian(rng_);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        basis_ = qr.householderQ();
    }

    Vector next() {
        Vector v(d_);
        if (used_ < d_) {
            for (std::size_t k = 0; k < d_; ++k) v[k] = basis_(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(used_));
            ++used_;
            return v;
        }
        for (auto& x : v) x = gaussian(rng_);
        const double n = norm(v);
        for (auto& x : v) x /= n;
        return v;
    }

private:
    std::size_t d_;
    Rng& rng_;
    Eigen::MatrixXd basis_;
    std::size_t used_ = 0;
};

inline Vector unit_sum(const Vector& a, double w, const Vector& b) {
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + w * b[i];
    const double n = norm(out);
    for (auto& x : out) x /= n;
    return out;
}

inline DenseMatrix scaled_identity(std::size_t d, double s) {
    DenseMatrix m(d, d);
    for (std::size_t i = 0; i < d; ++i) m(i, i) = s;
    return m;
}

// Keeps pairs whose words do not cross roles (no answer word is also a query
// word), up to max_pairs.
inline TaskPool usable_pairs(const TaskPool& pool, std::size_t max_pairs) {
    std::set<std::string> query_words, answer_words;
    TaskPool out{pool.task_name, {}};
    for (const auto& [q, a] : pool.pairs) {
        if (out.pairs.size() >= max_pairs) break;
        const auto qw = split_words(q), aw = split_words(a);
        bool clash = false;
        for (const auto& w : qw) clash |= answer_words.count(w) > 0 || w == "Q:" || w == "A:";
        for (const auto& w : aw) clash |= query_words.count(w) > 0 || w == "Q:" || w == "A:";
        for (const auto& w : qw) clash |= std::find(aw.begin(), aw.end(), w) != aw.end();
        if (clash) continue;
        query_words.insert(qw.begin(), qw.end());
        answer_words.insert(aw.begin(), aw.end());
        out.pairs.emplace_back(q, a);
    }
    if (out.pairs.size() < 2) fail(ErrorKind::PoolTooSmall, "fewer than 2 usable pairs for a toy model");
    return out;
}

inline std::string distractor_word(const std::string& query_key) { return "~" + query_key; }

struct Layout {
    std::vector<std::pair<std::string, Vector>> vocab;
    std::map<std::string, Vector> identity;  // pure directions of value words
    std::vector<Vector> contexts;
    std::vector<std::string> query_keys;      // last word of each query
    std::vector<std::string> value_words;     // in allocation order
    std::map<std::string, std::size_t> value_context;

    void add(const std::string& w, Vector e) {
        for (const auto& [x, _] : vocab)
            if (x == w) return;
        vocab.emplace_back(w, std::move(e));
    }
    bool has(const std::string& w) const {
        for (const auto& [x, _] : vocab)
            if (x == w) return true;
        return false;
    }
    const Vector& emb(const std::string& w) const {
        for (const auto& [x, e] : vocab)
            if (x == w) return e;
        fail(ErrorKind::UnknownWord, w);
    }
};

// Marks, contexts, query words and value words each receive their own basis
// direction in that order; value embeddings lean toward their context.
// tags[i] lists (context, value word, coefficient) for pool pair i.
inline Layout allocate_layout(const TaskPool& pool, const std::vector<std::vector<ContextTag>>& tags,
                              std::size_t n_contexts, double context_weight, DirectionAllocator& dirs) {
    Layout lay;
    lay.add("Q:", dirs.next());
    lay.add("A:", dirs.next());
    for (std::size_t k = 0; k < n_contexts; ++k) lay.contexts.push_back(dirs.next());
    for (const auto& [q, a] : pool.pairs) {
        for (const auto& w : split_words(q))
            if (!lay.has(w)) lay.add(w, dirs.next());
        lay.query_keys.push_back(split_words(q).back());
    }
    for (const auto& pair_tags : tags)
        for (const auto& t : pair_tags) {
            if (lay.identity.count(t.value_word)) continue;
            lay.identity[t.value_word] = dirs.next();
            lay.value_words.push_back(t.value_word);
            lay.value_context[t.value_word] = t.context_id;
        }
    // Every answer's first word is a value word, even when no tag recalls it.
    for (const auto& [q, a] : pool.pairs) {
        const auto first = split_words(a).front();
        if (lay.identity.count(first)) continue;
        lay.identity[first] = dirs.next();
        lay.value_words.push_back(first);
        lay.value_context[first] = 0;
    }
    for (const auto& v : lay.value_words)
        lay.add(v, unit_sum(lay.identity[v], context_weight, lay.contexts[lay.value_context[v]]));
    for (const auto& [q, a] : pool.pairs)
        for (const auto& w : split_words(a))
            if (!lay.has(w)) lay.add(w, dirs.next());
    return lay;
}

}  // namespace detail

/// Counting configuration: every query recalls its answer under a context
/// shared by the whole task and a distractor word under one of several
/// unshared contexts. Attention is role-constant; FFN banks are identical
/// across layers.
inline ToyBuild build_counting_model(const TaskPool& source, std::uint64_t seed, const CountingOptions& opt = {}) {
    const TaskPool pool = detail::usable_pairs(source, opt.max_pairs);
    Rng rng(seed);
    detail::DirectionAllocator dirs(opt.d, rng);
    std::vector<std::vector<ContextTag>> tags;
    for (const auto& [q, a] : pool.pairs) {
        const std::size_t k = 1 + uniform_index(rng, opt.n_distractor_contexts);
        const double cs = uniform(rng, opt.shared_coef.first, opt.shared_coef.second);
        const double cd = uniform(rng, opt.distractor_coef.first, opt.distractor_coef.second);
        tags.push_back({{0, split_words(a).front(), cs}, {k, detail::distractor_word(split_words(q).back()), cd}});
    }
    const auto lay = detail::allocate_layout(pool, tags, opt.n_distractor_contexts + 1, opt.context_weight, dirs);

    ToyModelConfig cfg;
    cfg.name = "counting";
    cfg.seed = seed;
    cfg.d = opt.d;
    cfg.n_layers = opt.n_layers;
    cfg.vocab = lay.vocab;
    cfg.context_vectors = lay.contexts;
    cfg.answer_lexicon = lay.value_words;

    std::vector<Vector> features, values;
    for (std::size_t p = 0; p < pool.pairs.size(); ++p) {
        const auto& key = lay.query_keys[p];
        cfg.context_tags[key] = tags[p];
        Vector v(opt.d, 0.0);
        for (const auto& t : tags[p]) {
            const auto& e = lay.emb(t.value_word);
            for (std::size_t i = 0; i < opt.d; ++i) v[i] += t.coefficient * opt.value_scale * e[i];
        }
        features.push_back(lay.emb(key));
        values.push_back(std::move(v));
    }
    if (opt.context_scale != 0.0) {
        for (const auto& w : lay.value_words) {
            Vector v = lay.contexts[lay.value_context.at(w)];
            for (auto& x : v) x *= opt.context_scale;
            features.push_back(lay.identity.at(w));
            values.push_back(std::move(v));
        }
    }
    const FFNSpec ffn = build_associative_ffn(features, values, opt.activation);
    cfg.ffn_per_layer.assign(opt.n_layers, ffn);
    cfg.attention = ConstantAttention{std::vector<RoleConstants>(opt.n_layers, opt.constants),
                                      detail::scaled_identity(opt.d, opt.attention_value_scale)};
    cfg.validate();
    return {std::move(cfg), pool};
}

/// Sharing configuration: each query recalls a single value. With shared=true
/// that value is its answer (one context for every pair); otherwise it is a
/// distractor word under an unshared context, so separators and answers carry
/// disjoint contexts. Exact attention routes separators to queries and
/// answers to answers.
inline ToyBuild build_sharing_model(const TaskPool& source, std::uint64_t seed, bool shared,
                                    const SharingOptions& opt = {}) {
    const TaskPool pool = detail::usable_pairs(source, opt.max_pairs);
    Rng rng(seed);
    detail::DirectionAllocator dirs(opt.d, rng);
    std::vector<std::vector<ContextTag>> tags;
    for (const auto& [q, a] : pool.pairs) {
        const std::size_t k = 1 + uniform_index(rng, opt.n_distractor_contexts);
        const double cs = uniform(rng, opt.shared_coef.first, opt.shared_coef.second);
        const double cd = uniform(rng, opt.distractor_coef.first, opt.distractor_coef.second);
        if (shared)
            tags.push_back({{0, split_words(a).front(), cs}});
        else
            tags.push_back({{k, detail::distractor_word(split_words(q).back()), cd}});
    }
    const auto lay = detail::allocate_layout(pool, tags, opt.n_distractor_contexts + 1, opt.context_weight, dirs);

    ToyModelConfig cfg;
    cfg.name = shared ? "sharing-shared" : "sharing-control";
    cfg.seed = seed;
    cfg.d = opt.d;
    cfg.n_layers = opt.n_layers;
    cfg.vocab = lay.vocab;
    cfg.context_vectors = lay.contexts;
    cfg.answer_lexicon = lay.value_words;

    std::vector<Vector> features, values;
    for (std::size_t p = 0; p < pool.pairs.size(); ++p) {
        const auto& key = lay.query_keys[p];
        cfg.context_tags[key] = tags[p];
        Vector v = lay.emb(tags[p][0].value_word);
        for (auto& x : v) x *= tags[p][0].coefficient * opt.value_scale;
        features.push_back(lay.emb(key));
        values.push_back(std::move(v));
    }
    const FFNSpec ffn = build_associative_ffn(features, values, Activation::ReLU);
    cfg.ffn_per_layer.assign(opt.n_layers, ffn);

    // Keys tag queries (and "Q:") with u_q, answers with u_a, "A:" with u_s;
    // separators and queries look for u_q, answers for u_a.
    const std::size_t d = opt.d;
    Vector u_q(d, 0.0), u_a(d, 0.0), u_s(d, 0.0);
    u_q[0] = 1.0;
    u_a[1] = 1.0;
    u_s[2] = 1.0;
    DenseMatrix K(d, d), Q(d, d);
    auto add_outer = [d](DenseMatrix& m, const Vector& u, const Vector& e, double s) {
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < d; ++c) m(r, c) += s * u[r] * e[c];
    };
    std::set<std::string> q_words, a_words;
    for (const auto& [q, a] : pool.pairs) {
        for (const auto& w : split_words(q)) q_words.insert(w);
        for (const auto& w : split_words(a)) a_words.insert(w);
    }
    for (const auto& w : q_words) {
        add_outer(K, u_q, lay.emb(w), 1.0);
        add_outer(Q, u_q, lay.emb(w), opt.score_gain);
    }
    for (const auto& w : a_words) {
        add_outer(K, u_a, lay.emb(w), 1.0);
        add_outer(Q, u_a, lay.emb(w), opt.score_gain);
    }
    add_outer(K, u_q, lay.emb("Q:"), 1.0);
    add_outer(K, u_s, lay.emb("A:"), 1.0);
    add_outer(Q, u_q, lay.emb("Q:"), opt.score_gain);
    add_outer(Q, u_q, lay.emb("A:"), opt.score_gain);
    ExactAttention ex;
    ex.K.assign(opt.n_layers, K);
    ex.Q.assign(opt.n_layers, Q);
    ex.V.assign(opt.n_layers, detail::scaled_identity(d, 1.0));
    cfg.attention = std::move(ex);
    cfg.validate();
    return {std::move(cfg), pool};
}

// ---------------------------------------------------------------------------
// JSON.

inline nlohmann::json to_json(const FFNSpec& f) {
    nlohmann::json w1 = nlohmann::json::array(), w2 = nlohmann::json::array();
    for (std::size_t r = 0; r < f.w_first.rows(); ++r) w1.push_back(f.w_first.row_vector(r));
    for (std::size_t r = 0; r < f.w_second.rows(); ++r) w2.push_back(f.w_second.row_vector(r));
    return {{"w_first", w1}, {"w_second", w2}, {"activation", activation_name(f.activation)}};
}

inline nlohmann::json to_json(const ToyModelConfig& c) {
    nlohmann::json j;
    j["name"] = c.name;
    j["seed"] = c.seed;
    j["d"] = c.d;
    j["n_layers"] = c.n_layers;
    nlohmann::json vocab = nlohmann::json::array();
    for (const auto& [w, e] : c.vocab) vocab.push_back({w, e});
    j["vocab"] = vocab;
    nlohmann::json ffns = nlohmann::json::array();
    for (const auto& f : c.ffn_per_layer) ffns.push_back(to_json(f));
    j["ffn_per_layer"] = ffns;
    auto mats = [](const std::vector<DenseMatrix>& ms) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& m : ms) {
            nlohmann::json rows = nlohmann::json::array();
            for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(m.row_vector(r));
            arr.push_back(rows);
        }
        return arr;
    };
    if (const auto* ex = std::get_if<ExactAttention>(&c.attention)) {
        j["attention_mode"] = {{"type", "Exact"}, {"K", mats(ex->K)}, {"Q", mats(ex->Q)}, {"V", mats(ex->V)}};
    } else {
        const auto& ca = std::get<ConstantAttention>(c.attention);
        Vector al, be, ga;
        for (const auto& rc : ca.constants) {
            al.push_back(rc.alpha);
            be.push_back(rc.beta);
            ga.push_back(rc.gamma);
        }
        j["attention_mode"] = {{"type", "Constant"}, {"alpha", al}, {"beta", be}, {"gamma", ga},
                               {"V", mats({ca.V})[0]}};
    }
    nlohmann::json tags = nlohmann::json::object();
    for (const auto& [w, list] : c.context_tags) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& t : list) arr.push_back({t.context_id, t.value_word, t.coefficient});
        tags[w] = arr;
    }
    j["context_tags"] = tags;
    j["context_vectors"] = c.context_vectors;
    j["answer_lexicon"] = c.answer_lexicon;
    return j;
}

inline ToyModelConfig toy_config_from_json(const nlohmann::json& j) {
    try {
        auto mat = [](const nlohmann::json& rows) {
            std::vector<Vector> rs;
            for (const auto& r : rows) rs.push_back(r.get<Vector>());
            return DenseMatrix::from_rows(rs);
        };
        ToyModelConfig c;
        c.name = j.value("name", std::string("custom"));
        c.seed = j.value("seed", std::uint64_t{0});
        c.d = j.at("d").get<std::size_t>();
        c.n_layers = j.at("n_layers").get<std::size_t>();
        for (const auto& e : j.at("vocab")) c.vocab.emplace_back(e.at(0).get<std::string>(), e.at(1).get<Vector>());
        for (const auto& f : j.at("ffn_per_layer"))
            c.ffn_per_layer.push_back(
                {mat(f.at("w_first")), mat(f.at("w_second")), parse_activation(f.at("activation").get<std::string>())});
        const auto& am = j.at("attention_mode");
        const auto type = am.at("type").get<std::string>();
        if (type == "Exact") {
            ExactAttention ex;
            for (const auto& m : am.at("K")) ex.K.push_back(mat(m));
            for (const auto& m : am.at("Q")) ex.Q.push_back(mat(m));
            for (const auto& m : am.at("V")) ex.V.push_back(mat(m));
            c.attention = std::move(ex);
        } else if (type == "Constant") {
            ConstantAttention ca;
            const auto al = am.at("alpha").get<Vector>(), be = am.at("beta").get<Vector>(),
                       ga = am.at("gamma").get<Vector>();
            if (al.size() != be.size() || al.size() != ga.size())
                fail(ErrorKind::CountMismatch, "alpha/beta/gamma lengths differ");
            for (std::size_t l = 0; l < al.size(); ++l) ca.constants.push_back({al[l], be[l], ga[l]});
            ca.V = mat(am.at("V"));
            c.attention = std::move(ca);
        } else {
            fail(ErrorKind::ParseError, "unknown attention mode '" + type + "'");
        }
        for (const auto& [w, list] : j.at("context_tags").items())
            for (const auto& t : list)
                c.context_tags[w].push_back({t.at(0).get<std::size_t>(), t.at(1).get<std::string>(), t.at(2).get<double>()});
        if (j.contains("context_vectors")) c.context_vectors = j.at("context_vectors").get<std::vector<Vector>>();
        if (j.contains("answer_lexicon")) c.answer_lexicon = j.at("answer_lexicon").get<std::vector<std::string>>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("toy model config: ") + e.what());
    }
}

}  // namespace subspace_probe
