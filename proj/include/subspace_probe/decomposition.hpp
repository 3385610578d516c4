#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "subspace_probe/error.hpp"
#include "subspace_probe/linalg.hpp"
#include "subspace_probe/parallel.hpp"
#include "subspace_probe/rng.hpp"

namespace subspace_probe {

enum class Method { Dictionary, ICA };

inline std::string method_name(Method m) { return m == Method::Dictionary ? "dictionary" : "ica"; }

inline Method parse_method(const std::string& s) {
    if (s == "dictionary" || s == "Dictionary") return Method::Dictionary;
    if (s == "ica" || s == "ICA") return Method::ICA;
    fail(ErrorKind::InvalidArgument, "unknown method '" + s + "'");
}

struct Whitening {
    Vector mean;                  // d
    DenseMatrix whitening_matrix; // k x d
    DenseMatrix mixing_matrix;    // d x k
};

struct ComponentMeta {
    std::uint64_t seed = 0;
    std::optional<double> lambda;
    std::size_t iterations_run = 0;
    bool converged = false;
    std::optional<Whitening> whitening;
};

/// k unit-norm components of dimension d, one per row.
class ComponentSet {
public:
    ComponentSet(Method method, DenseMatrix components, ComponentMeta meta)
        : method_(method), components_(std::move(components)), meta_(std::move(meta)) {
        if (components_.rows() == 0) fail(ErrorKind::TooFewComponents, "component set is empty");
        for (std::size_t r = 0; r < components_.rows(); ++r) {
            const double n = norm(components_.row(r));
            if (std::abs(n - 1.0) > 1e-6)
                fail(ErrorKind::InvariantViolation,
                     "component " + std::to_string(r) + " has norm " + std::to_string(n));
        }
    }

    Method method() const noexcept { return method_; }
    std::size_t k() const noexcept { return components_.rows(); }
    std::size_t d() const noexcept { return components_.cols(); }
    const DenseMatrix& components() const noexcept { return components_; }
    const ComponentMeta& meta() const noexcept { return meta_; }

private:
    Method method_;
    DenseMatrix components_;
    ComponentMeta meta_;
};

struct CodingMatrix {
    DenseMatrix codes;  // n_samples x k
    double reconstruction_error = 0.0;
    double lambda = 0.0;
};

struct DictionaryOptions {
    double lambda = 1.0;
    std::uint64_t seed = 0;
    std::size_t max_iter = 100;
    double tol = 1e-6;
};

struct DictionaryFit {
    ComponentSet components;
    CodingMatrix coding;
    std::vector<double> objective_history;  // one value per outer iteration, after the atom update
};

struct IcaOptions {
    std::uint64_t seed = 0;
    std::size_t max_iter = 200;
    double tol = 1e-4;
};

struct IcaFit {
    ComponentSet components;
    DenseMatrix unmixing;  // k x k, in whitened space
};

namespace detail {

inline double soft_threshold(double x, double t) {
    if (x > t) return x - t;
    if (x < -t) return x + t;
    return 0.0;
}

// Cyclic coordinate descent on 0.5 c'Gc - b'c + lambda |c|_1, ascending order,
// warm-started from `c`. Each coordinate step is an exact minimization so the
// objective never increases.
inline void lasso_cd(const Eigen::MatrixXd& G, const Eigen::VectorXd& b, double lambda,
                     Eigen::VectorXd& c, std::size_t max_sweeps = 1000, double tol = 1e-12) {
    const Eigen::Index k = b.size();
    Eigen::VectorXd q = G * c;
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_delta = 0.0;
        for (Eigen::Index j = 0; j < k; ++j) {
            const double gjj = G(j, j);
            if (gjj <= 0.0) continue;
            const double r = b(j) - q(j) + gjj * c(j);
            const double next = soft_threshold(r, lambda) / gjj;
            const double delta = next - c(j);
            if (delta != 0.0) {
                q += delta * G.col(j);
                c(j) = next;
                max_delta = std::max(max_delta, std::abs(delta));
            }
        }
        if (max_delta <= tol) break;
    }
}

inline double objective(const Eigen::MatrixXd& X, const Eigen::MatrixXd& R, const Eigen::MatrixXd& V,
                        double lambda) {
    return 0.5 * (X - R * V).squaredNorm() + lambda * R.cwiseAbs().sum();
}

inline Eigen::MatrixXd sym_decorrelation(const Eigen::MatrixXd& W) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(W * W.transpose());
    const Eigen::VectorXd inv_sqrt = es.eigenvalues().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose() * W;
}

inline void sparse_code(const Eigen::MatrixXd& X, const Eigen::MatrixXd& V, double lambda,
                        Eigen::MatrixXd& R) {
    const Eigen::MatrixXd G = V * V.transpose();
    const Eigen::MatrixXd B = X * V.transpose();
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        Eigen::VectorXd c = R.row(i).transpose();
        lasso_cd(G, B.row(i).transpose(), lambda, c, 1000, 1e-10);
        R.row(i) = c.transpose();
    }
}

}  // namespace detail

/// Alternating sparse coding and atom update minimizing
/// 0.5 ||X - R V||_F^2 + lambda ||R||_1 with unit-norm atoms V.
inline DictionaryFit fit_dictionary(const DenseMatrix& X, std::size_t k, const DictionaryOptions& opt = {}) {
    if (k < 1) fail(ErrorKind::TooFewComponents, "k must be at least 1");
    if (X.rows() < k)
        fail(ErrorKind::TooFewSamples,
             std::to_string(X.rows()) + " samples for " + std::to_string(k) + " atoms");
    if (!(opt.lambda >= 0.0)) fail(ErrorKind::InvalidArgument, "lambda must be non-negative");
    require_finite(X, "fit_dictionary input");

    const Eigen::MatrixXd Xe = X.eigen();
    const auto n = Xe.rows();
    const auto d = Xe.cols();
    const auto ke = static_cast<Eigen::Index>(k);

    Rng rng(opt.seed);
    Eigen::MatrixXd V(ke, d);
    const auto init = sample_without_replacement(rng, static_cast<std::size_t>(n), k);
    for (Eigen::Index a = 0; a < ke; ++a) {
        Eigen::VectorXd v = Xe.row(static_cast<Eigen::Index>(init[static_cast<std::size_t>(a)])).transpose();
        while (v.norm() < kZeroNorm)
            for (Eigen::Index j = 0; j < d; ++j) v(j) = gaussian(rng);
        V.row(a) = v.normalized().transpose();
    }

    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(n, ke);
    std::vector<double> history;
    double prev = detail::objective(Xe, R, V, opt.lambda);
    bool converged = false;
    std::size_t it = 0;
    while (it < opt.max_iter) {
        ++it;
        detail::sparse_code(Xe, V, opt.lambda, R);

        // Worst-reconstructed samples first, for re-seeding dead atoms.
        Eigen::MatrixXd E = Xe - R * V;
        std::vector<Eigen::Index> worst(static_cast<std::size_t>(n));
        std::iota(worst.begin(), worst.end(), Eigen::Index{0});
        const Eigen::VectorXd err = E.rowwise().squaredNorm();
        std::stable_sort(worst.begin(), worst.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return err(a) > err(b); });
        std::size_t next_worst = 0;
        bool reseeded = false;

        for (Eigen::Index a = 0; a < ke; ++a) {
            const Eigen::VectorXd r = R.col(a);
            if (r.squaredNorm() == 0.0) {
                while (next_worst < worst.size() && Xe.row(worst[next_worst]).norm() < kZeroNorm) ++next_worst;
                if (next_worst < worst.size() && err(worst[next_worst]) > kZeroNorm * kZeroNorm) {
                    V.row(a) = Xe.row(worst[next_worst++]).normalized();
                    reseeded = true;
                }
                continue;
            }
            E += r * V.row(a);
            const Eigen::VectorXd u = E.transpose() * r;
            const double un = u.norm();
            if (un >= kZeroNorm) V.row(a) = (u / un).transpose();
            E -= r * V.row(a);
        }

        const double obj = detail::objective(Xe, R, V, opt.lambda);
        if (!std::isfinite(obj)) fail(ErrorKind::NonFiniteObjective, "iteration " + std::to_string(it));
        history.push_back(obj);
        if (!reseeded &&
            prev - obj <= opt.tol * std::max(std::abs(prev), std::numeric_limits<double>::min())) {
            converged = true;
            break;
        }
        prev = obj;
    }

    ComponentMeta meta;
    meta.seed = opt.seed;
    meta.lambda = opt.lambda;
    meta.iterations_run = it;
    meta.converged = converged;
    CodingMatrix coding{DenseMatrix::from_eigen(R), detail::objective(Xe, R, V, opt.lambda), opt.lambda};
    return {ComponentSet(Method::Dictionary, DenseMatrix::from_eigen(V), std::move(meta)), std::move(coding),
            std::move(history)};
}

/// Symmetric FastICA with the log-cosh contrast after SVD whitening to k
/// directions. Components are the unit-normalized columns of the mixing matrix.
inline IcaFit fit_ica_detailed(const DenseMatrix& X, std::size_t k, const IcaOptions& opt = {}) {
    if (k < 2) fail(ErrorKind::TooFewComponents, "ICA needs k >= 2");
    if (X.rows() <= k)
        fail(ErrorKind::TooFewSamples,
             std::to_string(X.rows()) + " samples for " + std::to_string(k) + " components");
    require_finite(X, "fit_ica input");

    const Eigen::MatrixXd Xe = X.eigen();
    const auto n = Xe.rows();
    const auto ke = static_cast<Eigen::Index>(k);
    const Eigen::RowVectorXd mean = Xe.colwise().mean();
    const Eigen::MatrixXd Xc = Xe.rowwise() - mean;

    Eigen::BDCSVD<Eigen::MatrixXd> svd(Xc, Eigen::ComputeThinV);
    const Eigen::VectorXd s = svd.singularValues();
    const double floor = s.size() ? s(0) * static_cast<double>(std::max(Xc.rows(), Xc.cols())) *
                                        std::numeric_limits<double>::epsilon()
                                  : 0.0;
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > floor && s(i) > 0.0) ++rank;
    if (rank < ke)
        fail(ErrorKind::RankDeficient,
             std::to_string(rank) + " nonzero singular values for k = " + std::to_string(k));

    const double sqrt_n = std::sqrt(static_cast<double>(n));
    const Eigen::MatrixXd Vk = svd.matrixV().leftCols(ke);  // d x k
    const Eigen::VectorXd sk = s.head(ke);
    // Whitened data has identity covariance: X1 = K (x - mean).
    const Eigen::MatrixXd K = (sqrt_n * sk.cwiseInverse()).asDiagonal() * Vk.transpose();  // k x d
    const Eigen::MatrixXd X1 = K * Xc.transpose();                                         // k x n

    Rng rng(opt.seed);
    Eigen::MatrixXd W(ke, ke);
    for (Eigen::Index i = 0; i < ke; ++i)
        for (Eigen::Index j = 0; j < ke; ++j) W(i, j) = gaussian(rng);
    W = detail::sym_decorrelation(W);

    bool converged = false;
    std::size_t it = 0;
    const double inv_n = 1.0 / static_cast<double>(n);
    while (it < opt.max_iter) {
        ++it;
        const Eigen::MatrixXd gwtx = (W * X1).array().tanh().matrix();
        const Eigen::VectorXd g_prime = (1.0 - gwtx.array().square()).matrix().rowwise().mean();
        const Eigen::MatrixXd W1 =
            detail::sym_decorrelation(gwtx * X1.transpose() * inv_n - g_prime.asDiagonal() * W);
        const double lim = ((W1 * W.transpose()).diagonal().cwiseAbs().array() - 1.0).abs().maxCoeff();
        W = W1;
        if (lim < opt.tol) {
            converged = true;
            break;
        }
    }

    // Unmixing in ambient space is W K; its pseudo-inverse is Vk diag(sk) W^T / sqrt(n).
    const Eigen::MatrixXd mixing = Vk * sk.asDiagonal() * W.transpose() / sqrt_n;  // d x k
    Eigen::MatrixXd comps = mixing.transpose();
    for (Eigen::Index r = 0; r < ke; ++r) comps.row(r).normalize();

    ComponentMeta meta;
    meta.seed = opt.seed;
    meta.iterations_run = it;
    meta.converged = converged;
    meta.whitening = Whitening{Vector(mean.data(), mean.data() + mean.size()), DenseMatrix::from_eigen(K),
                               DenseMatrix::from_eigen(mixing)};
    DenseMatrix cm = DenseMatrix::from_eigen(comps);
    require_finite(cm, "fit_ica");
    return {ComponentSet(Method::ICA, std::move(cm), std::move(meta)), DenseMatrix::from_eigen(W)};
}

inline ComponentSet fit_ica(const DenseMatrix& X, std::size_t k, const IcaOptions& opt = {}) {
    return fit_ica_detailed(X, k, opt).components;
}

/// Lasso codes of each target row against fixed component rows.
inline CodingMatrix encode(const DenseMatrix& targets, const ComponentSet& components, double lambda = 0.1,
                           unsigned threads = 1) {
    if (targets.cols() != components.d())
        fail(ErrorKind::DimensionMismatch,
             "targets have width " + std::to_string(targets.cols()) + ", components " +
                 std::to_string(components.d()));
    if (!(lambda >= 0.0)) fail(ErrorKind::InvalidArgument, "lambda must be non-negative");
    require_finite(targets, "encode input");
    const Eigen::MatrixXd V = components.components().eigen();
    const Eigen::MatrixXd G = V * V.transpose();
    const auto k = static_cast<Eigen::Index>(components.k());
    DenseMatrix codes(targets.rows(), components.k());
    parallel_for(targets.rows(), threads, [&](std::size_t i) {
        const Eigen::VectorXd x = targets.eigen().row(static_cast<Eigen::Index>(i)).transpose();
        Eigen::VectorXd c = Eigen::VectorXd::Zero(k);
        detail::lasso_cd(G, V * x, lambda, c, 10000, 1e-14);
        for (Eigen::Index j = 0; j < k; ++j) codes(i, static_cast<std::size_t>(j)) = c(j);
    });
    const Eigen::MatrixXd R = codes.eigen();
    return {std::move(codes), detail::objective(targets.eigen(), R, V, lambda), lambda};
}

inline nlohmann::json matrix_to_json(const DenseMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(m.row_vector(r));
    return rows;
}

inline DenseMatrix matrix_from_json(const nlohmann::json& j) {
    if (!j.is_array()) fail(ErrorKind::ParseError, "expected an array of rows");
    std::vector<Vector> rows;
    for (const auto& r : j) rows.push_back(r.get<Vector>());
    return DenseMatrix::from_rows(rows);
}

inline nlohmann::json to_json(const ComponentSet& cs) {
    const auto& m = cs.meta();
    nlohmann::json j;
    j["method"] = method_name(cs.method());
    j["k"] = cs.k();
    j["d"] = cs.d();
    j["seed"] = m.seed;
    j["lambda"] = m.lambda ? nlohmann::json(*m.lambda) : nlohmann::json(nullptr);
    j["iterations_run"] = m.iterations_run;
    j["converged"] = m.converged;
    j["components"] = matrix_to_json(cs.components());
    if (m.whitening) {
        j["whitening"] = {{"mean", m.whitening->mean},
                          {"whitening_matrix", matrix_to_json(m.whitening->whitening_matrix)},
                          {"mixing_matrix", matrix_to_json(m.whitening->mixing_matrix)}};
    }
    return j;
}

inline ComponentSet component_set_from_json(const nlohmann::json& j) {
    try {
        ComponentMeta meta;
        meta.seed = j.at("seed").get<std::uint64_t>();
        if (!j.at("lambda").is_null()) meta.lambda = j.at("lambda").get<double>();
        meta.iterations_run = j.at("iterations_run").get<std::size_t>();
        meta.converged = j.at("converged").get<bool>();
        if (j.contains("whitening")) {
            const auto& w = j.at("whitening");
            meta.whitening = Whitening{w.at("mean").get<Vector>(), matrix_from_json(w.at("whitening_matrix")),
                                       matrix_from_json(w.at("mixing_matrix"))};
        }
        DenseMatrix comps = matrix_from_json(j.at("components"));
        if (comps.rows() != j.at("k").get<std::size_t>() || comps.cols() != j.at("d").get<std::size_t>())
            fail(ErrorKind::DimensionMismatch, "components shape disagrees with k and d");
        return ComponentSet(parse_method(j.at("method").get<std::string>()), std::move(comps), std::move(meta));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::ParseError, std::string("component set: ") + e.what());
    }
}

}  // namespace subspace_probe
