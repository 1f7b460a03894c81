#pragma once

// Accuracy, chance-corrected kappa, the paired two-tailed t-test and the
// information-transfer-rate measures used to score decoders and interfaces.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <utility>

#include "isbci/error.hpp"

namespace isbci::stats {

inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) throw Error("length mismatch");
  if (truth.empty()) throw Error("accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1u : 0u;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
  double sem = 0.0;  // std / sqrt(n)
  double max = 0.0;
  double min = 0.0;
};

inline Summary summarize(std::span<const double> xs) {
  if (xs.empty()) throw Error("summary of an empty set");
  Summary s;
  const double n = static_cast<double>(xs.size());
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - s.mean) * (x - s.mean);
  s.std = xs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  s.sem = s.std / std::sqrt(n);
  s.max = *std::max_element(xs.begin(), xs.end());
  s.min = *std::min_element(xs.begin(), xs.end());
  return s;
}

/// (acc - chance) / (1 - chance) with chance = 1 / n_classes.
inline double kappa(double acc, int n_classes) {
  if (n_classes < 2) throw ConfigError("kappa needs at least two classes");
  const double chance = 1.0 / static_cast<double>(n_classes);
  return (acc - chance) / (1.0 - chance);
}

namespace detail {

/// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw Error("incomplete beta needs positive parameters");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges quickly only on one side of the mean; use symmetry otherwise.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Student-t cumulative distribution with `dof` degrees of freedom.
inline double student_t_cdf(double t, double dof) {
  if (!(dof > 0.0)) throw Error("degrees of freedom must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * regularized_incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
  return t > 0.0 ? 1.0 - tail : tail;
}

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
};

/// Paired two-tailed t-test on a - b. With zero spread the result is
/// p = 1 for zero mean difference and p = 0 otherwise.
inline TTestResult paired_ttest_2tailed(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("length mismatch");
  if (a.size() < 2) throw Error("t-test needs at least two pairs");
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  if (sd == 0.0) {
    if (mean == 0.0) return {0.0, 1.0};
    return {mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity(), 0.0};
  }
  const double t = mean / (sd / std::sqrt(n));
  const double dof = n - 1.0;
  // Two-tailed p = 2 (1 - F(|t|)) = I_{dof/(dof+t^2)}(dof/2, 1/2).
  return {t, regularized_incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t))};
}

/// Bits per selection for an n-class channel with accuracy a:
/// log2 n + a log2 a + (1-a) log2((1-a)/(n-1)), taking 0 log 0 = 0.
inline double info_per_trial(int n_classes, double acc) {
  if (n_classes < 2) throw ConfigError("information needs at least two classes");
  if (!(acc >= 0.0 && acc <= 1.0)) throw ConfigError("accuracy must lie in [0, 1]");
  const double miss = 1.0 - acc;
  const double n = static_cast<double>(n_classes);
  double bits = std::log2(n);
  if (acc > 0.0) bits += acc * std::log2(acc);
  if (miss > 0.0) bits += miss * std::log2(miss / (n - 1.0));
  return bits;
}

/// Bits per second.
inline double itr(double bits, double trial_seconds) {
  if (!(trial_seconds > 0.0)) throw ConfigError("trial time must be positive");
  return bits / trial_seconds;
}

}  // namespace isbci::stats
