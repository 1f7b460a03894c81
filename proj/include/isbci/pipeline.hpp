#pragma once

// covariance -> tangent space -> PCA -> bagged MLP, its nested
// cross-validation runner and the model container.

#include <algorithm>
#include <cstdint>
#include <future>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "isbci/ann.hpp"
#include "isbci/dataio.hpp"
#include "isbci/error.hpp"
#include "isbci/features.hpp"
#include "isbci/random.hpp"
#include "isbci/spd.hpp"
#include "isbci/stats.hpp"

namespace isbci::pipeline {

using Matrix = Eigen::MatrixXd;

struct Hyperparams {
  int n_rf = 16;
  int k_bag = 8;
  int hidden = 64;

  bool operator==(const Hyperparams&) const = default;
};

struct PipelineConfig {
  double shrinkage = 0.0;
  bool center = false;
  spd::MeanOptions mean{};
  spd::VectorScheme scheme = spd::VectorScheme::RowConcat;
  ann::TrainConfig train{};
  bool bootstrap = true;
};

/// Per-trial covariances. Each depends on its own trial only.
inline std::vector<spd::SpdMatrix> trial_covariances(const data::EegTrialSet& set, double shrinkage, bool center) {
  std::vector<spd::SpdMatrix> out;
  out.reserve(set.n);
  for (std::size_t i = 0; i < set.n; ++i) out.push_back(spd::covariance(set.trial(i), shrinkage, center));
  return out;
}

template <typename Seq, typename Idx>
auto gather(const Seq& xs, const Idx& idx) {
  std::vector<std::remove_cvref_t<decltype(xs[0])>> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(xs[i]);
  return out;
}

/// Tangent vectors of `covs` at `space`, one row each.
inline Matrix tangent_features(const spd::TangentSpace& space, std::span<const spd::SpdMatrix> covs, spd::VectorScheme scheme) {
  const auto c = static_cast<std::size_t>(space.reference().dim());
  Matrix x(static_cast<Eigen::Index>(covs.size()), static_cast<Eigen::Index>(spd::vector_length(c, scheme)));
  for (std::size_t i = 0; i < covs.size(); ++i)
    x.row(static_cast<Eigen::Index>(i)) = spd::vectorize(space.project(covs[i]), scheme).transpose();
  return x;
}

/// A trained decoder. Immutable after fitting and safe to share across threads.
class FittedPipeline {
public:
  FittedPipeline(double shrinkage, bool center, spd::VectorScheme scheme, spd::SpdMatrix reference, features::PcaModel pca,
                 ann::BaggingEnsemble ensemble, int n_classes)
      : shrinkage_(shrinkage),
        center_(center),
        scheme_(scheme),
        space_(std::move(reference)),
        pca_(std::move(pca)),
        ensemble_(std::move(ensemble)),
        n_classes_(n_classes) {}

  Matrix features(std::span<const spd::SpdMatrix> covs) const {
    return features::pca_transform(pca_, tangent_features(space_, covs, scheme_));
  }

  ann::Prediction predict_covariances(std::span<const spd::SpdMatrix> covs) const {
    return ann::predict(ensemble_, features(covs));
  }

  template <typename Derived>
  int decode(const Eigen::MatrixBase<Derived>& trial) const {
    const spd::SpdMatrix c = spd::covariance(trial, shrinkage_, center_);
    return predict_covariances(std::span<const spd::SpdMatrix>(&c, 1)).labels.front();
  }

  double shrinkage() const noexcept { return shrinkage_; }
  bool center() const noexcept { return center_; }
  spd::VectorScheme scheme() const noexcept { return scheme_; }
  const spd::SpdMatrix& reference() const noexcept { return space_.reference(); }
  const features::PcaModel& pca() const noexcept { return pca_; }
  const ann::BaggingEnsemble& ensemble() const noexcept { return ensemble_; }
  int n_classes() const noexcept { return n_classes_; }
  Eigen::Index channels() const noexcept { return space_.reference().dim(); }

private:
  double shrinkage_;
  bool center_;
  spd::VectorScheme scheme_;
  spd::TangentSpace space_;
  features::PcaModel pca_;
  ann::BaggingEnsemble ensemble_;
  int n_classes_;
};

/// Fits every stage on the given covariances only.
inline FittedPipeline fit_pipeline(std::span<const spd::SpdMatrix> covs, std::span<const int> labels, int n_classes,
                                   const Hyperparams& hp, const PipelineConfig& cfg) {
  if (covs.empty()) throw ConfigError("no training trials");
  spd::SpdMatrix reference = spd::mean_covariance(covs, cfg.mean);
  const spd::TangentSpace space(reference);
  const Matrix x = tangent_features(space, covs, cfg.scheme);
  features::PcaModel pca = features::pca_fit(x, hp.n_rf);
  ann::BaggingEnsemble ens = ann::train_bagging(features::pca_transform(pca, x), labels, n_classes, hp.hidden, cfg.train,
                                                {static_cast<std::size_t>(hp.k_bag), cfg.bootstrap, false});
  return {cfg.shrinkage, cfg.center, cfg.scheme, std::move(reference), std::move(pca), std::move(ens), n_classes};
}

/// Hyperparameter sets searched by inner cross-validation.
struct Grid {
  std::vector<int> pca{4, 8, 16, 32, 64};
  std::vector<int> bag{2, 4, 8, 16, 32, 64};
  std::vector<int> hidden{8, 16, 32, 64, 128, 256};

  void validate() const {
    if (pca.empty() || bag.empty() || hidden.empty()) throw ConfigError("hyperparameter grid is empty");
    for (int v : pca)
      if (v < 1) throw ConfigError("PCA dimensions must be positive");
    for (int v : bag)
      if (v < 1) throw ConfigError("bag sizes must be positive");
    for (int v : hidden)
      if (v < 1) throw ConfigError("hidden sizes must be positive");
  }
  std::size_t size() const noexcept { return pca.size() * bag.size() * hidden.size(); }
};

struct CvOptions {
  int k_folds = 10;
  int inner_folds = 3;
  std::uint64_t seed = 0;
  PipelineConfig config{};
  bool parallel_folds = false;
};

struct CvResult {
  std::string name;
  std::vector<double> fold_accuracies;
  stats::Summary summary;
  Hyperparams chosen;                     // most frequent per-fold choice
  std::vector<Hyperparams> fold_choices;  // per outer fold
};

struct GridScore {
  Hyperparams hp;
  double accuracy = 0.0;
};

namespace detail {

inline double prefix_accuracy(const ann::BaggingEnsemble& ens, std::size_t k, const Matrix& x, std::span<const int> truth) {
  ann::BaggingEnsemble prefix{{ens.members.begin(), ens.members.begin() + static_cast<std::ptrdiff_t>(k)},
                              {ens.member_seeds.begin(), ens.member_seeds.begin() + static_cast<std::ptrdiff_t>(k)}};
  return stats::accuracy(ann::predict(prefix, x).labels, truth);
}

}  // namespace detail

/// Mean inner-CV accuracy for every feasible grid point, in grid order
/// (pca, then bag, then hidden). PCA fits are shared across n_rf by taking
/// leading rows, and an ensemble of k members is the k-prefix of the largest
/// one because member seeds depend only on the member index.
inline std::vector<GridScore> score_grid(std::span<const spd::SpdMatrix> covs, std::span<const int> labels, int n_classes,
                                         const Grid& grid, const CvOptions& opt, std::uint64_t seed) {
  const int inner = opt.inner_folds;
  const features::FoldAssignment folds = features::stratified_kfold(labels, inner, derive_seed(seed, 0));
  const std::size_t max_bag = static_cast<std::size_t>(*std::max_element(grid.bag.begin(), grid.bag.end()));

  std::map<std::tuple<int, int, int>, double> total;
  std::vector<int> feasible_pca;
  for (int f = 0; f < inner; ++f) {
    const auto tr = folds.train_indices(f);
    const auto va = folds.test_indices(f);
    const auto tr_covs = gather(covs, tr);
    const auto va_covs = gather(covs, va);
    const auto tr_labels = gather(labels, tr);
    const auto va_labels = gather(labels, va);

    const spd::TangentSpace space(spd::mean_covariance(tr_covs, opt.config.mean));
    const Matrix x_tr = tangent_features(space, tr_covs, opt.config.scheme);
    const Matrix x_va = tangent_features(space, va_covs, opt.config.scheme);
    const int limit = static_cast<int>(std::min(x_tr.rows(), x_tr.cols()));

    std::vector<int> usable;
    for (int p : grid.pca)
      if (p <= limit) usable.push_back(p);
    if (f == 0) feasible_pca = usable;
    else feasible_pca.erase(std::remove_if(feasible_pca.begin(), feasible_pca.end(),
                                           [&](int p) { return std::find(usable.begin(), usable.end(), p) == usable.end(); }),
                            feasible_pca.end());
    if (usable.empty()) continue;

    const features::PcaModel full = features::pca_fit(x_tr, *std::max_element(usable.begin(), usable.end()));
    for (int p : usable) {
      features::PcaModel pca = full;
      pca.components = full.components.topRows(p);
      pca.eigenvalues = full.eigenvalues.head(p);
      const Matrix z_tr = features::pca_transform(pca, x_tr);
      const Matrix z_va = features::pca_transform(pca, x_va);
      for (int h : grid.hidden) {
        ann::TrainConfig tc = opt.config.train;
        tc.seed = derive_seed(seed, 1 + static_cast<std::uint64_t>(f));
        const auto ens = ann::train_bagging(z_tr, tr_labels, n_classes, h, tc, {max_bag, opt.config.bootstrap, false});
        for (int k : grid.bag) total[{p, k, h}] += detail::prefix_accuracy(ens, static_cast<std::size_t>(k), z_va, va_labels);
      }
    }
  }
  if (feasible_pca.empty()) throw ConfigError("no PCA dimension in the grid fits the training data");

  std::vector<GridScore> out;
  for (int p : feasible_pca)
    for (int k : grid.bag)
      for (int h : grid.hidden) out.push_back({{p, k, h}, total[{p, k, h}] / static_cast<double>(inner)});
  return out;
}

struct FoldFit {
  Hyperparams chosen;
  FittedPipeline model;
};

/// Model selection and refit on one outer training portion. Touches only
/// covs[i] and labels[i] for i in `train`.
inline FoldFit fit_outer_fold(std::span<const spd::SpdMatrix> covs, std::span<const int> labels, int n_classes,
                              std::span<const std::size_t> train, const Grid& grid, const CvOptions& opt, int fold) {
  const auto tr_covs = gather(covs, train);
  const auto tr_labels = gather(labels, train);
  const std::uint64_t fold_seed = derive_seed(opt.seed, 100 + static_cast<std::uint64_t>(fold));

  Hyperparams best;
  if (grid.size() == 1) {
    best = {grid.pca.front(), grid.bag.front(), grid.hidden.front()};
  } else {
    const auto scores = score_grid(tr_covs, tr_labels, n_classes, grid, opt, fold_seed);
    double best_acc = -1.0;
    for (const auto& s : scores)
      if (s.accuracy > best_acc) {
        best_acc = s.accuracy;
        best = s.hp;
      }
  }
  PipelineConfig cfg = opt.config;
  cfg.train.seed = derive_seed(fold_seed, 999);
  return {best, fit_pipeline(tr_covs, tr_labels, n_classes, best, cfg)};
}

/// Stratified outer k-fold; every fitted quantity comes from the outer
/// training portion only. Fold results land in indexed slots.
inline CvResult run_cv_pipeline(const data::EegTrialSet& set, const Grid& grid, const CvOptions& opt) {
  grid.validate();
  set.require_all_classes();
  if (opt.inner_folds < 2) throw ConfigError("inner folds must be at least 2");
  const auto covs = trial_covariances(set, opt.config.shrinkage, opt.config.center);
  const int n_classes = static_cast<int>(set.n_classes());
  const features::FoldAssignment folds = features::stratified_kfold(set.labels, opt.k_folds, opt.seed);

  CvResult result;
  result.fold_accuracies.assign(static_cast<std::size_t>(opt.k_folds), 0.0);
  result.fold_choices.assign(static_cast<std::size_t>(opt.k_folds), {});

  auto run_fold = [&](int f) {
    const auto train = folds.train_indices(f);
    const auto test = folds.test_indices(f);
    const FoldFit fit = fit_outer_fold(covs, set.labels, n_classes, train, grid, opt, f);
    const auto pred = fit.model.predict_covariances(gather(covs, test));
    result.fold_accuracies[static_cast<std::size_t>(f)] = stats::accuracy(pred.labels, gather(set.labels, test));
    result.fold_choices[static_cast<std::size_t>(f)] = fit.chosen;
  };

  if (opt.parallel_folds) {
    std::vector<std::future<void>> jobs;
    for (int f = 0; f < opt.k_folds; ++f) jobs.push_back(std::async(std::launch::async, run_fold, f));
    for (auto& j : jobs) j.get();
  } else {
    for (int f = 0; f < opt.k_folds; ++f) run_fold(f);
  }

  result.summary = stats::summarize(result.fold_accuracies);
  std::size_t best_count = 0;
  for (const auto& hp : result.fold_choices) {
    const auto count = static_cast<std::size_t>(std::count(result.fold_choices.begin(), result.fold_choices.end(), hp));
    if (count > best_count) {
      best_count = count;
      result.chosen = hp;
    }
  }
  return result;
}

/// Copy of `set` with labels permuted by `seed`: the null model for CV.
inline data::EegTrialSet shuffle_labels(data::EegTrialSet set, std::uint64_t seed) {
  Rng rng(seed);
  shuffle(set.labels, rng);
  return set;
}

// ---- model container ------------------------------------------------------

inline constexpr std::string_view kModelMagic = "ISNN1\n";

namespace detail {

inline void append(std::vector<float>& out, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(static_cast<float>(m(i, j)));
}

class PayloadReader {
public:
  explicit PayloadReader(const std::vector<float>& p) : p_(p) {}
  Matrix take(Eigen::Index rows, Eigen::Index cols) {
    if (pos_ + static_cast<std::size_t>(rows * cols) > p_.size()) throw FormatError("corrupt container");
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = p_[pos_++];
    return m;
  }
  bool done() const noexcept { return pos_ == p_.size(); }

private:
  const std::vector<float>& p_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// ISNN1 container: JSON header with the shapes, float32 weights after it.
inline std::string encode_model(const FittedPipeline& model, const std::vector<std::string>& class_names) {
  const auto& ens = model.ensemble();
  const auto& first = ens.members.front();
  const nlohmann::json header = {{"kind", "tangent-pca-bagged-mlp"},
                                 {"channels", model.channels()},
                                 {"n_classes", model.n_classes()},
                                 {"class_names", class_names},
                                 {"shrinkage", model.shrinkage()},
                                 {"center", model.center()},
                                 {"scheme", spd::to_string(model.scheme())},
                                 {"n_features", model.pca().n_features()},
                                 {"n_rf", model.pca().n_components()},
                                 {"hidden", first.n_hidden()},
                                 {"members", ens.members.size()},
                                 {"member_seeds", ens.member_seeds},
                                 {"use_bias", first.use_bias}};
  std::vector<float> payload;
  detail::append(payload, model.reference().matrix());
  detail::append(payload, model.pca().mean.transpose());
  detail::append(payload, model.pca().components);
  detail::append(payload, model.pca().eigenvalues.transpose());
  for (const auto& m : ens.members) {
    detail::append(payload, m.w1);
    detail::append(payload, m.b1.transpose());
    detail::append(payload, m.w2);
    detail::append(payload, m.b2.transpose());
  }
  return data::detail::encode_container(kModelMagic, header, payload);
}

struct LoadedModel {
  FittedPipeline model;
  std::vector<std::string> class_names;
};

inline LoadedModel decode_model(const std::string& bytes) {
  const auto raw = data::detail::decode_container(kModelMagic, bytes, "model container");
  try {
    const auto& h = raw.header;
    const auto c = h.at("channels").get<Eigen::Index>();
    const auto n_f = h.at("n_features").get<Eigen::Index>();
    const auto n_rf = h.at("n_rf").get<Eigen::Index>();
    const auto hidden = h.at("hidden").get<Eigen::Index>();
    const auto n_classes = h.at("n_classes").get<int>();
    const auto members = h.at("members").get<std::size_t>();
    const bool use_bias = h.at("use_bias").get<bool>();
    const auto scheme = spd::parse_vector_scheme(h.at("scheme").get<std::string>());
    if (static_cast<std::size_t>(n_f) != spd::vector_length(static_cast<std::size_t>(c), scheme) || members == 0)
      throw FormatError("corrupt container");

    detail::PayloadReader r(raw.payload);
    spd::SpdMatrix reference(r.take(c, c));
    features::PcaModel pca;
    pca.mean = r.take(1, n_f).transpose();
    pca.components = r.take(n_rf, n_f);
    pca.eigenvalues = r.take(1, n_rf).transpose();
    ann::BaggingEnsemble ens;
    ens.member_seeds = h.at("member_seeds").get<std::vector<std::uint64_t>>();
    for (std::size_t i = 0; i < members; ++i) {
      ann::MlpModel m;
      m.w1 = r.take(hidden, n_rf);
      m.b1 = r.take(1, hidden).transpose();
      m.w2 = r.take(n_classes, hidden);
      m.b2 = r.take(1, n_classes).transpose();
      m.use_bias = use_bias;
      ens.members.push_back(std::move(m));
    }
    if (!r.done()) throw FormatError("corrupt container");
    return {FittedPipeline(h.at("shrinkage").get<double>(), h.at("center").get<bool>(), scheme, std::move(reference),
                           std::move(pca), std::move(ens), n_classes),
            h.at("class_names").get<std::vector<std::string>>()};
  } catch (const nlohmann::json::exception&) {
    throw FormatError("corrupt container");
  }
}

inline void save_model(const FittedPipeline& model, const std::vector<std::string>& class_names, const std::string& path) {
  data::detail::write_file(path, encode_model(model, class_names));
}

inline LoadedModel load_model(const std::string& path) { return decode_model(data::detail::read_file(path)); }

}  // namespace isbci::pipeline
