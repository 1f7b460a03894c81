#pragma once

// One-hidden-layer ReLU network with a softmax output, trained by Adam on
// L2-penalized cross-entropy, and a bootstrap-aggregated ensemble of them.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "isbci/error.hpp"
#include "isbci/random.hpp"

namespace isbci::ann {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct MlpModel {
  Matrix w1;  // [hidden, n_in]
  Vector b1;  // [hidden]
  Matrix w2;  // [n_out, hidden]
  Vector b2;  // [n_out]
  bool use_bias = true;

  Eigen::Index n_inputs() const noexcept { return w1.cols(); }
  Eigen::Index n_hidden() const noexcept { return w1.rows(); }
  Eigen::Index n_outputs() const noexcept { return w2.rows(); }

  bool all_finite() const { return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite(); }
};

/// Same layout as the model; holds partial derivatives or Adam moments.
using Gradients = MlpModel;

inline Gradients zeros_like(const MlpModel& m) {
  return {Matrix::Zero(m.w1.rows(), m.w1.cols()), Vector::Zero(m.b1.size()), Matrix::Zero(m.w2.rows(), m.w2.cols()),
          Vector::Zero(m.b2.size()), m.use_bias};
}

struct TrainConfig {
  double learning_rate = 0.001;
  double l2 = 0.0001;
  std::size_t batch_size = 200;
  std::size_t epochs = 200;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  // Stop once the epoch loss fails to improve by early_stop_tol for
  // early_stop_patience consecutive epochs. Patience 0 disables it.
  double early_stop_tol = 1e-6;
  std::size_t early_stop_patience = 10;
  bool no_bias = false;

  void validate() const {
    if (!(learning_rate > 0.0) || !(l2 >= 0.0) || batch_size == 0 || !(adam_beta1 > 0.0 && adam_beta1 < 1.0) ||
        !(adam_beta2 > 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0))
      throw ConfigError("invalid training configuration");
  }
};

/// Uniform on [-L, L] with L = sqrt(6 / (fan_in + fan_out)).
inline Matrix glorot_uniform(Eigen::Index fan_out, Eigen::Index fan_in, Rng& rng) {
  if (fan_out < 1 || fan_in < 1) throw ConfigError("layer dimensions must be positive");
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_out, fan_in);
  for (Eigen::Index i = 0; i < fan_out; ++i)
    for (Eigen::Index j = 0; j < fan_in; ++j) w(i, j) = limit * (2.0 * uniform01(rng) - 1.0);
  return w;
}

/// Glorot-initialized weights, zero biases.
inline MlpModel glorot_init(Eigen::Index n_in, Eigen::Index hidden, Eigen::Index n_out, std::uint64_t seed,
                            bool use_bias = true) {
  Rng rng(seed);
  MlpModel m;
  m.w1 = glorot_uniform(hidden, n_in, rng);
  m.b1 = Vector::Zero(hidden);
  m.w2 = glorot_uniform(n_out, hidden, rng);
  m.b2 = Vector::Zero(n_out);
  m.use_bias = use_bias;
  return m;
}

/// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

struct ForwardCache {
  Matrix hidden_pre;  // X W1^T + b1
  Matrix hidden;      // ReLU
  Matrix probs;       // softmax
};

inline ForwardCache forward_cached(const MlpModel& m, const Matrix& x) {
  if (x.cols() != m.n_inputs()) throw Error("dimension mismatch");
  ForwardCache c;
  c.hidden_pre = x * m.w1.transpose();
  if (m.use_bias) c.hidden_pre.rowwise() += m.b1.transpose();
  c.hidden = c.hidden_pre.cwiseMax(0.0);
  Matrix logits = c.hidden * m.w2.transpose();
  if (m.use_bias) logits.rowwise() += m.b2.transpose();
  c.probs = softmax_rows(logits);
  return c;
}

/// Class probabilities, one row per input row.
inline Matrix forward(const MlpModel& m, const Matrix& x) { return forward_cached(m, x).probs; }

inline constexpr double kProbFloor = 1e-12;

inline Matrix one_hot(std::span<const int> labels, Eigen::Index n_classes) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) throw Error("label out of range");
    y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return y;
}

/// Mean cross-entropy plus l2 * sum of squared weights (biases excluded),
/// with exact gradients by back-propagation.
inline std::pair<double, Gradients> loss_and_grads(const MlpModel& m, const Matrix& x, const Matrix& y_onehot, double l2) {
  if (y_onehot.rows() != x.rows() || y_onehot.cols() != m.n_outputs()) throw Error("dimension mismatch");
  const ForwardCache c = forward_cached(m, x);
  const double n = static_cast<double>(x.rows());

  const double ce = -(y_onehot.array() * c.probs.array().max(kProbFloor).log()).sum() / n;
  const double penalty = l2 * (m.w1.squaredNorm() + m.w2.squaredNorm());

  Gradients g;
  g.use_bias = m.use_bias;
  const Matrix d_logits = (c.probs - y_onehot) / n;
  g.w2 = d_logits.transpose() * c.hidden + 2.0 * l2 * m.w2;
  g.b2 = m.use_bias ? Vector(d_logits.colwise().sum().transpose()) : Vector::Zero(m.b2.size());
  const Matrix d_hidden = (d_logits * m.w2).cwiseProduct((c.hidden_pre.array() > 0.0).cast<double>().matrix());
  g.w1 = d_hidden.transpose() * x + 2.0 * l2 * m.w1;
  g.b1 = m.use_bias ? Vector(d_hidden.colwise().sum().transpose()) : Vector::Zero(m.b1.size());
  return {ce + penalty, std::move(g)};
}

struct AdamState {
  Gradients m;
  Gradients v;
  std::uint64_t t = 0;

  explicit AdamState(const MlpModel& model) : m(zeros_like(model)), v(zeros_like(model)) {}
};

namespace detail {

template <typename P>
void adam_update(P& param, P& m, P& v, const P& g, const TrainConfig& cfg, double bc1, double bc2) {
  m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
  v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
  param.array() -= cfg.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.adam_eps);
}

}  // namespace detail

/// One bias-corrected Adam update.
inline void adam_step(MlpModel& model, AdamState& state, const Gradients& g, const TrainConfig& cfg) {
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.t));
  detail::adam_update(model.w1, state.m.w1, state.v.w1, g.w1, cfg, bc1, bc2);
  detail::adam_update(model.w2, state.m.w2, state.v.w2, g.w2, cfg, bc1, bc2);
  if (model.use_bias) {
    detail::adam_update(model.b1, state.m.b1, state.v.b1, g.b1, cfg, bc1, bc2);
    detail::adam_update(model.b2, state.m.b2, state.v.b2, g.b2, cfg, bc1, bc2);
  }
}

inline Matrix gather_rows(const Matrix& x, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

/// Mini-batch Adam. Samples are reshuffled every epoch; the last batch of an
/// epoch may be short. Deterministic in (x, labels, config).
inline MlpModel train_mlp(const Matrix& x, std::span<const int> labels, Eigen::Index n_classes, Eigen::Index hidden,
                          const TrainConfig& cfg) {
  cfg.validate();
  if (hidden < 1) throw ConfigError("hidden layer size must be positive");
  if (static_cast<std::size_t>(x.rows()) != labels.size() || x.rows() == 0) throw Error("label count mismatch");
  MlpModel model = glorot_init(x.cols(), hidden, n_classes, derive_seed(cfg.seed, 0), !cfg.no_bias);
  const Matrix y = one_hot(labels, n_classes);
  AdamState state(model);
  Rng rng(derive_seed(cfg.seed, 1));
  std::vector<std::size_t> order = iota_indices(labels.size());

  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, len);
      auto [loss, grads] = loss_and_grads(model, gather_rows(x, batch), gather_rows(y, batch), cfg.l2);
      if (!std::isfinite(loss)) throw NumericError("training diverged");
      adam_step(model, state, grads, cfg);
      epoch_loss += loss * static_cast<double>(len);
    }
    epoch_loss /= static_cast<double>(order.size());
    if (!model.all_finite()) throw NumericError("training diverged");
    if (cfg.early_stop_patience == 0) continue;
    if (epoch_loss < best - cfg.early_stop_tol) {
      best = epoch_loss;
      stale = 0;
    } else if (++stale >= cfg.early_stop_patience) {
      break;
    }
  }
  return model;
}

/// Argmax per row; ties go to the lowest class index.
inline std::vector<int> argmax_rows(const Matrix& p) {
  std::vector<int> out(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < p.cols(); ++k)
      if (p(i, k) > p(i, best)) best = k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

struct BaggingConfig {
  std::size_t members = 8;
  bool bootstrap = true;
  bool parallel = false;
};

struct BaggingEnsemble {
  std::vector<MlpModel> members;
  std::vector<std::uint64_t> member_seeds;
};

/// Member i trains on a bootstrap resample drawn with its own seed
/// derive_seed(config.seed, i), so parallel and sequential training agree.
inline BaggingEnsemble train_bagging(const Matrix& x, std::span<const int> labels, Eigen::Index n_classes,
                                     Eigen::Index hidden, const TrainConfig& cfg, const BaggingConfig& bag) {
  if (bag.members < 1) throw ConfigError("ensemble needs at least one member");
  BaggingEnsemble ens;
  for (std::size_t i = 0; i < bag.members; ++i) ens.member_seeds.push_back(derive_seed(cfg.seed, i));

  auto train_member = [&](std::size_t i) {
    TrainConfig member_cfg = cfg;
    member_cfg.seed = ens.member_seeds[i];
    if (!bag.bootstrap) return train_mlp(x, labels, n_classes, hidden, member_cfg);
    Rng rng(derive_seed(member_cfg.seed, 2));
    std::vector<std::size_t> draw(labels.size());
    for (auto& d : draw) d = static_cast<std::size_t>(uniform_below(rng, labels.size()));
    std::vector<int> draw_labels;
    draw_labels.reserve(draw.size());
    for (auto d : draw) draw_labels.push_back(labels[d]);
    return train_mlp(gather_rows(x, draw), draw_labels, n_classes, hidden, member_cfg);
  };

  if (bag.parallel) {
    std::vector<std::future<MlpModel>> futures;
    for (std::size_t i = 0; i < bag.members; ++i) futures.push_back(std::async(std::launch::async, train_member, i));
    for (auto& f : futures) ens.members.push_back(f.get());
  } else {
    for (std::size_t i = 0; i < bag.members; ++i) ens.members.push_back(train_member(i));
  }
  return ens;
}

struct Prediction {
  Matrix probabilities;
  std::vector<int> labels;
};

/// Mean of member probabilities, then argmax.
inline Prediction predict(const BaggingEnsemble& ens, const Matrix& x) {
  if (ens.members.empty()) throw Error("empty ensemble");
  Matrix acc = forward(ens.members.front(), x);
  for (std::size_t i = 1; i < ens.members.size(); ++i) acc += forward(ens.members[i], x);
  acc /= static_cast<double>(ens.members.size());
  return {acc, argmax_rows(acc)};
}

}  // namespace isbci::ann
