#pragma once

// Covariance estimation and affine-invariant geometry on symmetric
// positive-definite matrices.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "isbci/error.hpp"

namespace isbci::spd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative eigenvalue floor below which a matrix is treated as singular.
inline constexpr double kEigenFloor = 1e-12;

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

inline bool is_symmetric(const Matrix& m, double rel_tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  return max_abs(m - m.transpose()) <= rel_tol * max_abs(m);
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// A covariance-like matrix. Construction checks shape, finiteness and
/// symmetry; positive-definiteness is checked by the matrix functions that
/// need it, which is every operation below.
class SpdMatrix {
public:
  SpdMatrix() = default;
  explicit SpdMatrix(Matrix m) : data_(std::move(m)) {
    if (data_.rows() != data_.cols() || data_.rows() == 0) throw Error("SPD matrix must be square and non-empty");
    if (!data_.allFinite()) throw NumericError("invalid samples");
    if (!is_symmetric(data_)) throw NumericError("matrix not symmetric");
  }

  const Matrix& matrix() const noexcept { return data_; }
  Eigen::Index dim() const noexcept { return data_.rows(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return data_(i, j); }

private:
  Matrix data_;
};

struct EigenPairs {
  Vector values;   // ascending
  Matrix vectors;  // columns
};

/// Symmetric eigendecomposition with the positive-definiteness check.
inline EigenPairs eig_spd(const SpdMatrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a.matrix());
  if (solver.info() != Eigen::Success) throw NumericError("eigendecomposition failed");
  const Vector& ev = solver.eigenvalues();
  const double largest = ev.maxCoeff();
  if (!(largest > 0.0) || ev.minCoeff() <= kEigenFloor * largest) throw NumericError("matrix not positive-definite");
  return {ev, solver.eigenvectors()};
}

/// V f(D) V^T for a scalar function f applied to the spectrum of `a`.
template <typename F>
Matrix apply_spectral(const SpdMatrix& a, F&& f) {
  const EigenPairs e = eig_spd(a);
  const Vector fd = e.values.unaryExpr(f);
  return symmetrize(e.vectors * fd.asDiagonal() * e.vectors.transpose());
}

inline Matrix logm(const SpdMatrix& a) {
  return apply_spectral(a, [](double x) { return std::log(x); });
}
inline SpdMatrix sqrtm(const SpdMatrix& a) {
  return SpdMatrix(apply_spectral(a, [](double x) { return std::sqrt(x); }));
}
inline SpdMatrix invsqrtm(const SpdMatrix& a) {
  return SpdMatrix(apply_spectral(a, [](double x) { return 1.0 / std::sqrt(x); }));
}

/// Matrix exponential of a symmetric matrix (always SPD).
inline SpdMatrix expm_sym(const Matrix& s) {
  if (!is_symmetric(s)) throw NumericError("matrix not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetrize(s));
  const Vector fd = solver.eigenvalues().unaryExpr([](double x) { return std::exp(x); });
  return SpdMatrix(symmetrize(solver.eigenvectors() * fd.asDiagonal() * solver.eigenvectors().transpose()));
}

/// C = (1/s) E E^T + shrinkage * (trace/c) I. With `center`, each channel's
/// mean is removed first; by default the signal is used as given.
template <typename Derived>
SpdMatrix covariance(const Eigen::MatrixBase<Derived>& trial, double shrinkage = 0.0, bool center = false) {
  if (trial.cols() < 1 || trial.rows() < 1) throw Error("trial must have at least one channel and one sample");
  if (shrinkage < 0.0 || !std::isfinite(shrinkage)) throw ConfigError("shrinkage must be non-negative");
  Matrix e = trial.template cast<double>();
  if (!e.allFinite()) throw NumericError("invalid samples");
  if (center) e.colwise() -= e.rowwise().mean();
  Matrix c = (e * e.transpose()) / static_cast<double>(e.cols());
  if (shrinkage > 0.0) c.diagonal().array() += shrinkage * c.trace() / static_cast<double>(c.rows());
  return SpdMatrix(symmetrize(c));
}

enum class MeanMetric { Riemannian, Arithmetic };

inline MeanMetric parse_mean_metric(const std::string& s) {
  if (s == "riemannian") return MeanMetric::Riemannian;
  if (s == "arithmetic") return MeanMetric::Arithmetic;
  throw ConfigError("unknown mean metric '" + s + "'");
}
inline std::string to_string(MeanMetric m) { return m == MeanMetric::Riemannian ? "riemannian" : "arithmetic"; }

struct MeanOptions {
  MeanMetric metric = MeanMetric::Riemannian;
  double tol = 1e-8;
  int max_iter = 50;
};

inline SpdMatrix arithmetic_mean(std::span<const SpdMatrix> mats) {
  Matrix acc = Matrix::Zero(mats.front().dim(), mats.front().dim());
  for (const auto& m : mats) acc += m.matrix();
  return SpdMatrix(symmetrize(acc / static_cast<double>(mats.size())));
}

/// Arithmetic or Riemannian (Karcher) mean. The Riemannian iteration starts
/// at the arithmetic mean and stops once the Frobenius norm of the averaged
/// tangent update drops below `tol`.
inline SpdMatrix mean_covariance(std::span<const SpdMatrix> mats, const MeanOptions& opt = {}) {
  if (mats.empty()) throw Error("mean of an empty set");
  const Eigen::Index c = mats.front().dim();
  for (const auto& m : mats)
    if (m.dim() != c) throw Error("dimension mismatch");

  SpdMatrix mean = arithmetic_mean(mats);
  if (opt.metric == MeanMetric::Arithmetic) return mean;

  const double inv_n = 1.0 / static_cast<double>(mats.size());
  for (int iter = 0; iter < opt.max_iter; ++iter) {
    const SpdMatrix half = sqrtm(mean);
    const Matrix inv_half = invsqrtm(mean).matrix();
    Matrix step = Matrix::Zero(c, c);
    for (const auto& m : mats) step += logm(SpdMatrix(symmetrize(inv_half * m.matrix() * inv_half)));
    step *= inv_n;
    mean = SpdMatrix(symmetrize(half.matrix() * expm_sym(symmetrize(step)).matrix() * half.matrix()));
    if (step.norm() < opt.tol) return mean;
  }
  throw NumericError("mean iteration diverged");
}

/// Precomputed reference point for repeated tangent projections.
class TangentSpace {
public:
  explicit TangentSpace(SpdMatrix reference)
      : reference_(std::move(reference)), half_(sqrtm(reference_)), inv_half_(invsqrtm(reference_)) {}

  /// P = R^{1/2} logm(R^{-1/2} C R^{-1/2}) R^{1/2}
  Matrix project(const SpdMatrix& c) const {
    if (c.dim() != reference_.dim()) throw Error("dimension mismatch");
    const Matrix whitened = symmetrize(inv_half_.matrix() * c.matrix() * inv_half_.matrix());
    return symmetrize(half_.matrix() * logm(SpdMatrix(whitened)) * half_.matrix());
  }

  const SpdMatrix& reference() const noexcept { return reference_; }

private:
  SpdMatrix reference_;
  SpdMatrix half_;
  SpdMatrix inv_half_;
};

inline Matrix tangent_project(const SpdMatrix& c, const SpdMatrix& reference) {
  return TangentSpace(reference).project(c);
}

enum class VectorScheme { RowConcat, UpperWeighted };

inline VectorScheme parse_vector_scheme(const std::string& s) {
  if (s == "row-concat") return VectorScheme::RowConcat;
  if (s == "upper-weighted") return VectorScheme::UpperWeighted;
  throw ConfigError("unknown vectorization scheme '" + s + "'");
}
inline std::string to_string(VectorScheme s) { return s == VectorScheme::RowConcat ? "row-concat" : "upper-weighted"; }

constexpr std::size_t vector_length(std::size_t c, VectorScheme scheme) noexcept {
  return scheme == VectorScheme::RowConcat ? c * c : c * (c + 1) / 2;
}

/// Flattens a symmetric matrix. Row concatenation keeps both copies of each
/// off-diagonal entry; the weighted upper triangle scales them by sqrt(2)
/// so that Euclidean norms match Frobenius norms.
inline Vector vectorize(const Matrix& p, VectorScheme scheme = VectorScheme::RowConcat) {
  const Eigen::Index c = p.rows();
  Vector out(static_cast<Eigen::Index>(vector_length(static_cast<std::size_t>(c), scheme)));
  Eigen::Index k = 0;
  if (scheme == VectorScheme::RowConcat) {
    for (Eigen::Index i = 0; i < c; ++i)
      for (Eigen::Index j = 0; j < c; ++j) out(k++) = p(i, j);
  } else {
    const double w = std::sqrt(2.0);
    for (Eigen::Index i = 0; i < c; ++i)
      for (Eigen::Index j = i; j < c; ++j) out(k++) = i == j ? p(i, i) : w * p(i, j);
  }
  return out;
}

/// Inverse of vectorize for a c-channel matrix.
inline Matrix unvectorize(const Vector& v, Eigen::Index c, VectorScheme scheme = VectorScheme::RowConcat) {
  if (static_cast<std::size_t>(v.size()) != vector_length(static_cast<std::size_t>(c), scheme))
    throw Error("vector length does not match channel count");
  Matrix p(c, c);
  Eigen::Index k = 0;
  if (scheme == VectorScheme::RowConcat) {
    for (Eigen::Index i = 0; i < c; ++i)
      for (Eigen::Index j = 0; j < c; ++j) p(i, j) = v(k++);
  } else {
    const double w = std::sqrt(2.0);
    for (Eigen::Index i = 0; i < c; ++i)
      for (Eigen::Index j = i; j < c; ++j) {
        const double x = v(k++);
        p(i, j) = p(j, i) = i == j ? x : x / w;
      }
  }
  return p;
}

/// ||logm(A^{-1/2} B A^{-1/2})||_F
inline double geodesic_distance(const SpdMatrix& a, const SpdMatrix& b) {
  if (a.dim() != b.dim()) throw Error("dimension mismatch");
  const Matrix ih = invsqrtm(a).matrix();
  return logm(SpdMatrix(symmetrize(ih * b.matrix() * ih))).norm();
}

/// Minimum distance to Riemannian class means. Serves as an independent
/// separability check next to the neural pipeline.
class MdmClassifier {
public:
  void fit(std::span<const SpdMatrix> covs, std::span<const int> labels, int n_classes,
           const MeanOptions& opt = {}) {
    if (covs.size() != labels.size()) throw Error("label count mismatch");
    means_.clear();
    for (int k = 0; k < n_classes; ++k) {
      std::vector<SpdMatrix> members;
      for (std::size_t i = 0; i < covs.size(); ++i)
        if (labels[i] == k) members.push_back(covs[i]);
      if (members.empty()) throw Error("class without training samples");
      means_.push_back(mean_covariance(members, opt));
    }
  }

  int predict(const SpdMatrix& c) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < means_.size(); ++k) {
      const double d = geodesic_distance(means_[k], c);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(k);
      }
    }
    return best;
  }

  const std::vector<SpdMatrix>& means() const noexcept { return means_; }

private:
  std::vector<SpdMatrix> means_;
};

}  // namespace isbci::spd
