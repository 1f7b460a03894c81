#pragma once

// Trial containers, seeded synthetic EEG-like data and spectrogram export.

#include <Eigen/Dense>
#include "json.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "isbci/error.hpp"
#include "isbci/random.hpp"
#include "isbci/spd.hpp"

namespace isbci::data {

using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using TrialView = Eigen::Map<const RowMajorF>;

/// n trials of c channels by s samples, stored flat in trial-major,
/// channel-major, sample-minor order (the on-disk order).
struct EegTrialSet {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t s = 0;
  std::vector<float> samples;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  double sampling_rate = 256.0;

  std::size_t n_classes() const noexcept { return class_names.size(); }

  TrialView trial(std::size_t i) const {
    return TrialView(samples.data() + i * c * s, static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(s));
  }

  /// Structural checks applied on save and load.
  void validate() const {
    if (class_names.size() < 2) throw FormatError("corrupt container: fewer than two classes");
    if (labels.size() != n || samples.size() != n * c * s) throw FormatError("corrupt container");
    if (c == 0 || s == 0) throw FormatError("corrupt container: empty trials");
    for (int l : labels)
      if (l < 0 || static_cast<std::size_t>(l) >= class_names.size()) throw FormatError("corrupt container: label out of range");
    for (float v : samples)
      if (!std::isfinite(v)) throw FormatError("invalid samples");
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> per_class(class_names.size(), 0);
    for (int l : labels) ++per_class[static_cast<std::size_t>(l)];
    return per_class;
  }

  /// Training and evaluation need at least one trial of every class; the
  /// container itself does not.
  void require_all_classes() const {
    for (auto count : class_counts())
      if (count == 0) throw ConfigError("every class needs at least one trial");
  }

  /// Subset in the given index order.
  EegTrialSet subset(const std::vector<std::size_t>& idx) const {
    EegTrialSet out{idx.size(), c, s, {}, {}, class_names, sampling_rate};
    out.samples.reserve(idx.size() * c * s);
    out.labels.reserve(idx.size());
    for (auto i : idx) {
      const float* p = samples.data() + i * c * s;
      out.samples.insert(out.samples.end(), p, p + c * s);
      out.labels.push_back(labels[i]);
    }
    return out;
  }

  bool operator==(const EegTrialSet&) const = default;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(const unsigned char* p) { return std::bit_cast<float>(get_u32(p)); }

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("cannot write '" + path + "'");
}

/// magic, u32 header length, UTF-8 header, float32 payload.
struct Container {
  nlohmann::json header;
  std::vector<float> payload;
};

inline std::string encode_container(std::string_view magic, const nlohmann::json& header, std::span<const float> payload) {
  const std::string text = header.dump();
  std::string out;
  out.reserve(magic.size() + 4 + text.size() + payload.size() * 4);
  out.append(magic);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.append(text);
  for (float f : payload) put_f32(out, f);
  return out;
}

/// Parses the frame; the caller checks the payload length against the header.
inline Container decode_container(std::string_view magic, const std::string& bytes, std::string_view what) {
  if (bytes.size() < magic.size() || bytes.compare(0, magic.size(), magic) != 0)
    throw FormatError("not a " + std::string(what));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::size_t pos = magic.size();
  if (bytes.size() < pos + 4) throw FormatError("corrupt container");
  const std::uint32_t hlen = get_u32(p + pos);
  pos += 4;
  if (bytes.size() < pos + hlen) throw FormatError("corrupt container");
  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.substr(pos, hlen));
  } catch (const nlohmann::json::exception&) {
    throw FormatError("corrupt container");
  }
  pos += hlen;
  if ((bytes.size() - pos) % 4 != 0) throw FormatError("corrupt container");
  c.payload.resize((bytes.size() - pos) / 4);
  for (std::size_t i = 0; i < c.payload.size(); ++i) c.payload[i] = get_f32(p + pos + 4 * i);
  return c;
}

}  // namespace detail

inline constexpr std::string_view kTrialMagic = "ISBC1\n";

inline std::string encode_trialset(const EegTrialSet& set) {
  set.validate();
  const nlohmann::json header = {{"n", set.n},
                                 {"c", set.c},
                                 {"s", set.s},
                                 {"sampling_rate", set.sampling_rate},
                                 {"class_names", set.class_names},
                                 {"labels", set.labels}};
  return detail::encode_container(kTrialMagic, header, set.samples);
}

inline EegTrialSet decode_trialset(const std::string& bytes) {
  detail::Container raw = detail::decode_container(kTrialMagic, bytes, "trial container");
  EegTrialSet set;
  try {
    set.n = raw.header.at("n").get<std::size_t>();
    set.c = raw.header.at("c").get<std::size_t>();
    set.s = raw.header.at("s").get<std::size_t>();
    set.sampling_rate = raw.header.at("sampling_rate").get<double>();
    set.class_names = raw.header.at("class_names").get<std::vector<std::string>>();
    set.labels = raw.header.at("labels").get<std::vector<int>>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError("corrupt container");
  }
  if (raw.payload.size() != set.n * set.c * set.s) throw FormatError("corrupt container");
  set.samples = std::move(raw.payload);
  set.validate();
  return set;
}

inline void save_trialset(const EegTrialSet& set, const std::string& path) {
  detail::write_file(path, encode_trialset(set));
}

inline EegTrialSet load_trialset(const std::string& path) { return decode_trialset(detail::read_file(path)); }

/// One trial per CSV file, one channel per row, comma-separated samples.
inline RowMajorF load_trial_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::vector<std::vector<float>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<float> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        const float v = std::stof(cell, &used);
        row.push_back(v);
      } catch (const std::exception&) {
        throw FormatError("invalid samples in '" + path + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) throw FormatError("ragged rows in '" + path + "'");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError("empty trial file '" + path + "'");
  RowMajorF m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

inline EegTrialSet trialset_from_csv(const std::vector<std::string>& paths, const std::vector<int>& labels,
                                     std::vector<std::string> class_names, double sampling_rate) {
  if (paths.size() != labels.size()) throw ConfigError("one label per CSV file required");
  EegTrialSet set;
  set.class_names = std::move(class_names);
  set.sampling_rate = sampling_rate;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const RowMajorF m = load_trial_csv(paths[i]);
    if (i == 0) {
      set.c = static_cast<std::size_t>(m.rows());
      set.s = static_cast<std::size_t>(m.cols());
    } else if (static_cast<std::size_t>(m.rows()) != set.c || static_cast<std::size_t>(m.cols()) != set.s) {
      throw FormatError("trial shape differs in '" + paths[i] + "'");
    }
    set.samples.insert(set.samples.end(), m.data(), m.data() + m.size());
  }
  set.n = paths.size();
  set.labels = labels;
  set.validate();
  return set;
}

struct SyntheticConfig {
  std::size_t n_per_class = 100;
  std::size_t channels = 8;
  std::size_t samples = 128;
  std::size_t classes = 2;
  double separation = 2.0;
  std::uint64_t seed = 7;
  double sampling_rate = 256.0;

  void validate() const {
    if (channels < 2) throw ConfigError("synthetic data needs at least 2 channels");
    if (samples < channels) throw ConfigError("synthetic data needs samples >= channels");
    if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
    if (n_per_class < 1) throw ConfigError("synthetic data needs at least one trial per class");
    if (!(separation >= 0.0) || !std::isfinite(separation)) throw ConfigError("separation must be non-negative");
  }
};

/// Hidden class covariances Sigma_k = B^{1/2} expm(separation * H_k) B^{1/2},
/// with a shared background B and unit-norm symmetric directions H_k. Class
/// distances grow with separation and vanish at 0.
inline std::vector<spd::SpdMatrix> synthetic_class_covariances(const SyntheticConfig& cfg) {
  cfg.validate();
  const auto c = static_cast<Eigen::Index>(cfg.channels);
  Rng rng(derive_seed(cfg.seed, 0));
  NormalSampler normal;
  spd::Matrix a(c, c);
  for (Eigen::Index i = 0; i < c; ++i)
    for (Eigen::Index j = 0; j < c; ++j) a(i, j) = normal(rng);
  spd::Matrix background = a * a.transpose() / static_cast<double>(c) + spd::Matrix::Identity(c, c);
  background *= static_cast<double>(c) / background.trace();
  const spd::SpdMatrix bg_half = spd::sqrtm(spd::SpdMatrix(spd::symmetrize(background)));

  std::vector<spd::SpdMatrix> out;
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    spd::Matrix h(c, c);
    for (Eigen::Index i = 0; i < c; ++i)
      for (Eigen::Index j = 0; j < c; ++j) h(i, j) = normal(rng);
    h = spd::symmetrize(h);
    h /= h.norm();
    const spd::SpdMatrix shift = spd::expm_sym(cfg.separation * h);
    out.emplace_back(spd::symmetrize(bg_half.matrix() * shift.matrix() * bg_half.matrix()));
  }
  return out;
}

/// Class-colored Gaussian noise. Labels cycle 0, 1, ..., K-1 so classes are balanced.
inline EegTrialSet gen_synthetic(const SyntheticConfig& cfg) {
  const auto sigmas = synthetic_class_covariances(cfg);
  std::vector<spd::Matrix> mixing;
  for (const auto& s : sigmas) mixing.push_back(spd::sqrtm(s).matrix());

  EegTrialSet set;
  set.n = cfg.n_per_class * cfg.classes;
  set.c = cfg.channels;
  set.s = cfg.samples;
  set.sampling_rate = cfg.sampling_rate;
  for (std::size_t k = 0; k < cfg.classes; ++k) set.class_names.push_back("class" + std::to_string(k));
  set.samples.reserve(set.n * set.c * set.s);

  Rng rng(derive_seed(cfg.seed, 1));
  NormalSampler normal;
  const auto c = static_cast<Eigen::Index>(cfg.channels);
  const auto s = static_cast<Eigen::Index>(cfg.samples);
  spd::Matrix z(c, s);
  for (std::size_t i = 0; i < set.n; ++i) {
    const auto label = static_cast<int>(i % cfg.classes);
    for (Eigen::Index r = 0; r < c; ++r)
      for (Eigen::Index t = 0; t < s; ++t) z(r, t) = normal(rng);
    const spd::Matrix x = mixing[static_cast<std::size_t>(label)] * z;
    for (Eigen::Index r = 0; r < c; ++r)
      for (Eigen::Index t = 0; t < s; ++t) set.samples.push_back(static_cast<float>(x(r, t)));
    set.labels.push_back(label);
  }
  return set;
}

/// Per-channel magnitude spectrogram: element [ch](bin, frame).
using Spectrogram = std::vector<Eigen::MatrixXd>;

/// Periodic Hann window, magnitude of the DFT, bins 0..window/2.
template <typename Derived>
Spectrogram export_spectrogram(const Eigen::MatrixBase<Derived>& trial, std::size_t window, std::size_t hop) {
  const auto s = static_cast<std::size_t>(trial.cols());
  if (window == 0) throw ConfigError("window must be positive");
  if (hop == 0) throw ConfigError("hop must be positive");
  if (window > s) throw ConfigError("trial too short");
  const std::size_t bins = window / 2 + 1;
  const std::size_t frames = (s - window) / hop + 1;

  Eigen::VectorXd hann(static_cast<Eigen::Index>(window));
  for (std::size_t t = 0; t < window; ++t)
    hann(static_cast<Eigen::Index>(t)) = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(window));
  Eigen::MatrixXd cos_t(static_cast<Eigen::Index>(bins), static_cast<Eigen::Index>(window));
  Eigen::MatrixXd sin_t(static_cast<Eigen::Index>(bins), static_cast<Eigen::Index>(window));
  for (std::size_t k = 0; k < bins; ++k)
    for (std::size_t t = 0; t < window; ++t) {
      // Reduce k*t mod window before scaling to keep the phase exact.
      const double phase = 2.0 * std::numbers::pi * static_cast<double>((k * t) % window) / static_cast<double>(window);
      cos_t(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = std::cos(phase);
      sin_t(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(t)) = std::sin(phase);
    }

  Spectrogram out;
  for (Eigen::Index ch = 0; ch < trial.rows(); ++ch) {
    Eigen::MatrixXd mag(static_cast<Eigen::Index>(bins), static_cast<Eigen::Index>(frames));
    for (std::size_t f = 0; f < frames; ++f) {
      const Eigen::VectorXd seg = trial.row(ch).segment(static_cast<Eigen::Index>(f * hop), static_cast<Eigen::Index>(window))
                                      .template cast<double>()
                                      .transpose()
                                      .cwiseProduct(hann);
      const Eigen::VectorXd re = cos_t * seg;
      const Eigen::VectorXd im = sin_t * seg;
      mag.col(static_cast<Eigen::Index>(f)) = (re.array().square() + im.array().square()).sqrt();
    }
    out.push_back(std::move(mag));
  }
  return out;
}

}  // namespace isbci::data
