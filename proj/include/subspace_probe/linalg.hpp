#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "subspace_probe/error.hpp"
#include "subspace_probe/parallel.hpp"

namespace subspace_probe {

using Vector = std::vector<double>;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Norms below this are treated as the zero vector.
inline constexpr double kZeroNorm = 1e-12;

/// Row-major dense matrix of doubles. Component sets, role matrices and
/// coding matrices all use this type with one item per row.
class DenseMatrix {
public:
    DenseMatrix() = default;

    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            fail(ErrorKind::DimensionMismatch,
                 "data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
    }

    static DenseMatrix from_rows(const std::vector<Vector>& rows) {
        if (rows.empty()) return {};
        DenseMatrix m(rows.size(), rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != m.cols_)
                fail(ErrorKind::DimensionMismatch, "ragged row " + std::to_string(i));
            m.set_row(i, rows[i]);
        }
        return m;
    }

    static DenseMatrix from_eigen(const Eigen::Ref<const Eigen::MatrixXd>& m) {
        DenseMatrix out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
        out.eigen() = m;
        return out;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    Vector row_vector(std::size_t r) const {
        auto s = row(r);
        return {s.begin(), s.end()};
    }

    void set_row(std::size_t r, std::span<const double> values) {
        if (values.size() != cols_) fail(ErrorKind::DimensionMismatch, "set_row width");
        std::copy(values.begin(), values.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * cols_));
    }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    Eigen::Map<RowMajorMatrix> eigen() {
        return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
    }
    Eigen::Map<const RowMajorMatrix> eigen() const {
        return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline void require_finite(const DenseMatrix& m, const std::string& where) {
    if (!m.all_finite()) fail(ErrorKind::NonFinite, where + " produced a non-finite entry");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Rescales every row to unit Euclidean norm.
inline DenseMatrix normalize_rows(const DenseMatrix& m) {
    DenseMatrix out = m;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double n = norm(m.row(r));
        if (!(n >= kZeroNorm)) fail(ErrorKind::ZeroRow, "row " + std::to_string(r) + " has zero norm");
        for (double& v : out.row(r)) v /= n;
    }
    require_finite(out, "normalize_rows");
    return out;
}

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size())
        fail(ErrorKind::DimensionMismatch,
             "lengths " + std::to_string(u.size()) + " and " + std::to_string(v.size()));
    const double nu = norm(u);
    const double nv = norm(v);
    if (!(nu >= kZeroNorm) || !(nv >= kZeroNorm)) fail(ErrorKind::ZeroVector, "cosine_distance");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

/// D(u, v) = 1 - cos(u, v), in [0, 2].
inline double cosine_distance(std::span<const double> u, std::span<const double> v) {
    return 1.0 - cosine_similarity(u, v);
}

/// min(D, 2 - D) = 1 - |cos(u, v)|: insensitive to the sign of either argument.
inline double signless_distance(std::span<const double> u, std::span<const double> v) {
    return 1.0 - std::abs(cosine_similarity(u, v));
}

struct DistanceMatrix {
    DenseMatrix values;  // rows index the first set, columns the second
    bool signless = false;
    std::vector<std::size_t> row_labels;
    std::vector<std::size_t> col_labels;
};

inline DistanceMatrix pairwise_distances(const DenseMatrix& a, const DenseMatrix& b, bool signless,
                                         unsigned threads = 1) {
    if (a.cols() != b.cols())
        fail(ErrorKind::DimensionMismatch,
             "component widths " + std::to_string(a.cols()) + " and " + std::to_string(b.cols()));
    DistanceMatrix out;
    out.signless = signless;
    out.values = DenseMatrix(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) out.row_labels.push_back(i);
    for (std::size_t j = 0; j < b.rows(); ++j) out.col_labels.push_back(j);
    parallel_for(a.rows(), threads, [&](std::size_t i) {
        for (std::size_t j = 0; j < b.rows(); ++j) {
            try {
                out.values(i, j) = signless ? signless_distance(a.row(i), b.row(j))
                                            : cosine_distance(a.row(i), b.row(j));
            } catch (const Error& e) {
                fail(e.kind(), "pair (" + std::to_string(i) + ", " + std::to_string(j) + "): " + e.what());
            }
        }
    });
    return out;
}

/// For each column j, the minimum over rows i: D_min of the j-th second-set component.
inline Vector min_distance_per_component(const DistanceMatrix& dm) {
    const auto& m = dm.values;
    if (m.rows() == 0 || m.cols() == 0) fail(ErrorKind::EmptyMatrix, "distance matrix is empty");
    Vector out(m.cols(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out[j] = std::min(out[j], m(i, j));
    return out;
}

}  // namespace subspace_probe
