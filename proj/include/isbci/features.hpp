#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "isbci/error.hpp"
#include "isbci/random.hpp"

namespace isbci::features {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Orthonormal projection onto the leading principal directions.
struct PcaModel {
  Vector mean;         // [n_f]
  Matrix components;   // [n_rf, n_f], orthonormal rows
  Vector eigenvalues;  // [n_rf], non-increasing

  Eigen::Index n_features() const noexcept { return mean.size(); }
  Eigen::Index n_components() const noexcept { return components.rows(); }
};

namespace detail {

/// Flip so the largest-magnitude entry is positive; the first one wins ties.
inline void fix_sign(Eigen::Ref<Vector> v) {
  Eigen::Index arg = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) > best + 1e-12 * std::max(1.0, best)) {
      best = std::abs(v(i));
      arg = i;
    }
  }
  if (v(arg) < 0.0) v = -v;
}

/// Orthonormal completion of `basis` rows starting at row `from`, used when
/// the data rank is below the requested component count.
inline void complete_basis(Matrix& basis, Eigen::Index from) {
  const Eigen::Index n_f = basis.cols();
  Eigen::Index row = from;
  for (Eigen::Index e = 0; e < n_f && row < basis.rows(); ++e) {
    Vector v = Vector::Unit(n_f, e);
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index r = 0; r < row; ++r) v -= basis.row(r).dot(v) * basis.row(r).transpose();
    const double norm = v.norm();
    if (norm > 1e-6) basis.row(row++) = (v / norm).transpose();
  }
}

}  // namespace detail

/// Fits PCA on the rows of `x`. Uses the n_f x n_f covariance when
/// n_f <= n_tr and the n_tr x n_tr Gram matrix otherwise.
inline PcaModel pca_fit(const Matrix& x, Eigen::Index n_rf) {
  const Eigen::Index n = x.rows();
  const Eigen::Index n_f = x.cols();
  if (n < 2) throw ConfigError("PCA needs at least two samples");
  if (n_rf < 1 || n_rf > std::min(n, n_f)) throw ConfigError("n_rf too large for the training data");

  PcaModel model;
  model.mean = x.colwise().mean().transpose();
  const Matrix xc = x.rowwise() - model.mean.transpose();
  const double denom = static_cast<double>(n - 1);
  model.components.resize(n_rf, n_f);
  model.eigenvalues.resize(n_rf);

  Eigen::Index filled = 0;
  if (n_f <= n) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver((xc.transpose() * xc) / denom);
    if (solver.info() != Eigen::Success) throw NumericError("PCA eigendecomposition failed");
    for (Eigen::Index k = 0; k < n_rf; ++k) {
      const Eigen::Index col = n_f - 1 - k;
      model.eigenvalues(k) = solver.eigenvalues()(col);
      model.components.row(k) = solver.eigenvectors().col(col).transpose();
    }
    filled = n_rf;
  } else {
    Eigen::SelfAdjointEigenSolver<Matrix> solver((xc * xc.transpose()) / denom);
    if (solver.info() != Eigen::Success) throw NumericError("PCA eigendecomposition failed");
    const double top = std::max(solver.eigenvalues().maxCoeff(), 0.0);
    for (Eigen::Index k = 0; k < n_rf; ++k) {
      const Eigen::Index col = n - 1 - k;
      const double lambda = solver.eigenvalues()(col);
      if (lambda <= 1e-12 * top || lambda <= 0.0) break;
      // u = X^T v / sqrt((n-1) lambda) has unit norm when v is a unit Gram eigenvector.
      model.components.row(k) = (xc.transpose() * solver.eigenvectors().col(col)).transpose() / std::sqrt(denom * lambda);
      model.eigenvalues(k) = lambda;
      ++filled;
    }
    for (Eigen::Index k = filled; k < n_rf; ++k) model.eigenvalues(k) = 0.0;
    detail::complete_basis(model.components, filled);
  }
  for (Eigen::Index k = 0; k < n_rf; ++k) {
    Vector row = model.components.row(k).transpose();
    detail::fix_sign(row);
    model.components.row(k) = row.transpose();
  }
  return model;
}

/// (X - mean) * components^T
inline Matrix pca_transform(const PcaModel& model, const Matrix& x) {
  if (x.cols() != model.n_features()) throw Error("dimension mismatch");
  return (x.rowwise() - model.mean.transpose()) * model.components.transpose();
}

/// components^T * y + mean, row-wise.
inline Matrix pca_inverse_transform(const PcaModel& model, const Matrix& y) {
  if (y.cols() != model.n_components()) throw Error("dimension mismatch");
  return (y * model.components).rowwise() + model.mean.transpose();
}

/// Fold index of each sample.
struct FoldAssignment {
  std::vector<int> fold_of;
  int k_folds = 0;

  std::vector<std::size_t> test_indices(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] == fold) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> train_indices(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] != fold) out.push_back(i);
    return out;
  }
};

/// Within each class the members are shuffled by `seed` and dealt
/// round-robin to folds. The deal continues across classes so fold totals
/// stay balanced as well.
inline FoldAssignment stratified_kfold(std::span<const int> labels, int k_folds, std::uint64_t seed) {
  if (k_folds < 2) throw ConfigError("k_folds must be at least 2");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  FoldAssignment out{std::vector<int>(labels.size(), -1), k_folds};
  int next = 0;
  for (auto& [label, members] : by_class) {
    if (members.size() < static_cast<std::size_t>(k_folds)) throw ConfigError("insufficient samples for stratification");
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label)));
    shuffle(members, rng);
    for (auto idx : members) {
      out.fold_of[idx] = next;
      next = (next + 1) % k_folds;
    }
  }
  return out;
}

}  // namespace isbci::features
