// Acceptance suite: one PASS/FAIL line per headline criterion. Exits non-zero
// if any criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "oracles.hpp"

using namespace isbci;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

int failures = 0;

void check(const std::string& name, const std::function<Verdict()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s %s: %s (%.1fs)\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str(), secs);
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

std::string run_cli(std::vector<std::string> args, int* code = nullptr) {
  args.insert(args.begin(), "isbci");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int rc = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code) *code = rc;
  return out.str();
}

double number_after(const std::string& text, const std::string& key) {
  const auto pos = text.find(key);
  if (pos == std::string::npos) throw std::runtime_error("missing '" + key + "' in output");
  return std::stod(text.substr(pos + key.size()));
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Verdict itr_reproduction() {
  int code = 0;
  const auto out = run_cli({"itr", "--classes", "2", "--accuracy", "0.95", "--trial-seconds", "2"}, &code);
  const double bps = number_after(out, "ITR = ");
  const double bpm = number_after(out.substr(out.find("b/s")), "ITR = ");
  const bool ok = code == 0 && std::abs(bps - 0.357) <= 0.01 && std::abs(bpm - 21.4) <= 0.05;
  return {ok, fmt("%.3f b/s, %.1f b/min (expected 0.357 b/s, 21.4 b/min)", bps, bpm)};
}

Verdict kappa_reproduction() {
  const double acc[] = {0.6035, 0.586, 0.785, 0.6943};
  const int classes[] = {3, 3, 2, 2};
  const double table[] = {0.408, 0.382, 0.57, 0.388};
  double worst = 0.0;
  std::string got;
  for (int i = 0; i < 4; ++i) {
    const double k = stats::kappa(acc[i], classes[i]);
    worst = std::max(worst, std::abs(k - table[i]));
    got += fmt(i ? ", %.4f" : "%.4f", k);
  }
  return {worst <= 0.005, "kappa " + got + fmt("; max deviation %.4f", worst)};
}

Verdict synthetic_cv() {
  const data::EegTrialSet set = data::gen_synthetic({100, 8, 128, 2, 2.0, 7, 256.0});
  const pipeline::Grid grid{{8, 16}, {4}, {16, 32}};
  pipeline::CvOptions opt;
  opt.seed = 1;
  const auto real = pipeline::run_cv_pipeline(set, grid, opt);
  const auto null = pipeline::run_cv_pipeline(pipeline::shuffle_labels(set, 5), grid, opt);

  // Minimum-distance-to-mean oracle on the same 10 folds.
  const auto covs = pipeline::trial_covariances(set, 0.0, false);
  const auto folds = features::stratified_kfold(set.labels, 10, opt.seed);
  std::size_t hits = 0;
  for (int f = 0; f < 10; ++f) {
    const auto train = folds.train_indices(f);
    spd::MdmClassifier mdm;
    mdm.fit(pipeline::gather(covs, train), pipeline::gather(set.labels, train), 2);
    for (auto i : folds.test_indices(f)) hits += mdm.predict(covs[i]) == set.labels[i];
  }
  const double mdm_acc = static_cast<double>(hits) / static_cast<double>(set.n);
  const bool ok = real.summary.mean >= 0.90 && real.summary.mean - null.summary.mean >= 0.30 && mdm_acc >= 0.90;
  return {ok, fmt("pipeline %.3f, shuffled null %.3f, MDM oracle %.3f", real.summary.mean, null.summary.mean, mdm_acc)};
}

Verdict manifold_identities() {
  std::mt19937_64 rng(2024);
  double tangent_max = 0.0, roundtrip = 0.0, mean_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int c = 2 + i % 9;
    const spd::SpdMatrix a(oracle::random_spd(c, rng));
    tangent_max = std::max(tangent_max, spd::tangent_project(a, a).cwiseAbs().maxCoeff());
    roundtrip = std::max(roundtrip, (spd::expm_sym(spd::logm(a)).matrix() - a.matrix()).norm() / a.matrix().norm());
    const spd::SpdMatrix inv(spd::symmetrize(a.matrix().inverse()));
    const std::vector<spd::SpdMatrix> pair{a, inv};
    const auto m = spd::mean_covariance(pair);
    mean_err = std::max(mean_err, (m.matrix() - spd::Matrix::Identity(c, c)).cwiseAbs().maxCoeff());
  }
  const bool ok = tangent_max < 1e-10 && roundtrip < 1e-8 && mean_err < 1e-8;
  return {ok, fmt("max |P(C,C)| %.2e, expm(logm) error %.2e, mean{A,A^-1} - I %.2e", tangent_max, roundtrip, mean_err)};
}

Verdict gradient_check() {
  std::mt19937_64 rng(99);
  double worst = 0.0;
  const int draws = 120;
  for (int d = 0; d < draws; ++d) {
    const int n_in = 2 + d % 6, hidden = 2 + d % 9, n_out = 2 + d % 3, n = 3 + d % 8;
    ann::MlpModel m = ann::glorot_init(n_in, hidden, n_out, static_cast<std::uint64_t>(d) + 1000);
    m.b1 = oracle::random_matrix(hidden, 1, rng).col(0) * 0.2;
    m.b2 = oracle::random_matrix(n_out, 1, rng).col(0) * 0.2;
    const ann::Matrix x = oracle::random_matrix(n, n_in, rng);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng() % static_cast<unsigned>(n_out)));
    const ann::Matrix y = ann::one_hot(labels, n_out);
    const double l2 = d % 2 ? 1e-3 : 0.0;
    const auto g = ann::loss_and_grads(m, x, y, l2).second;

    std::vector<double*> params;
    std::vector<double> analytic;
    auto add = [&](auto& param, const auto& grad) {
      for (Eigen::Index i = 0; i < param.size(); ++i) {
        params.push_back(param.data() + i);
        analytic.push_back(grad.data()[i]);
      }
    };
    add(m.w1, g.w1);
    add(m.b1, g.b1);
    add(m.w2, g.w2);
    add(m.b2, g.b2);
    double diff = 0.0, norm_a = 0.0, norm_n = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
      const double keep = *params[p], h = 1e-6;
      *params[p] = keep + h;
      const double up = ann::loss_and_grads(m, x, y, l2).first;
      *params[p] = keep - h;
      const double down = ann::loss_and_grads(m, x, y, l2).first;
      *params[p] = keep;
      const double num = (up - down) / (2.0 * h);
      diff += (num - analytic[p]) * (num - analytic[p]);
      norm_a += analytic[p] * analytic[p];
      norm_n += num * num;
    }
    worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(std::max(norm_a, norm_n)), 1e-300));
  }
  return {worst < 1e-5, fmt("%.0f draws, worst relative error %.2e", draws, worst)};
}

Verdict stratification() {
  std::size_t cases = 0;
  int worst = 0;
  auto test_labels = [&](const std::vector<int>& counts, std::uint64_t seed) {
    std::vector<int> labels;
    for (std::size_t k = 0; k < counts.size(); ++k) labels.insert(labels.end(), counts[k], static_cast<int>(k));
    std::mt19937_64 rng(seed);
    std::shuffle(labels.begin(), labels.end(), rng);
    const auto folds = features::stratified_kfold(labels, 10, seed);
    for (std::size_t k = 0; k < counts.size(); ++k) {
      std::vector<int> per_fold(10, 0);
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == static_cast<int>(k)) ++per_fold[static_cast<std::size_t>(folds.fold_of[i])];
      worst = std::max(worst, *std::max_element(per_fold.begin(), per_fold.end()) - *std::min_element(per_fold.begin(), per_fold.end()));
    }
    ++cases;
  };
  for (int a = 10; a <= 40; ++a)
    for (int b = 10; b <= 40; ++b) test_labels({a, b}, static_cast<std::uint64_t>(a * 100 + b));
  for (int a = 10; a <= 25; ++a)
    for (int b = 10; b <= 25; ++b)
      for (int c = 10; c <= 25; ++c) test_labels({a, b, c}, static_cast<std::uint64_t>(a * 10000 + b * 100 + c));
  return {worst <= 1, fmt("%.0f label multisets, k = 10, max per-class fold size spread %.0f", static_cast<double>(cases), worst)};
}

Verdict ttest_oracle() {
  std::mt19937_64 rng(314);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  for (int s = 0; s < 50; ++s) {
    const std::size_t len = 6 + static_cast<std::size_t>(s % 7);
    std::vector<double> a(len), b(len);
    for (std::size_t i = 0; i < len; ++i) {
      b[i] = 0.5 + 0.1 * n(rng);
      a[i] = b[i] + 0.02 * (s % 6) + 0.05 * n(rng);
    }
    const auto r = stats::paired_ttest_2tailed(a, b);
    worst = std::max(worst, std::abs(r.p - oracle::t_two_tailed_p(r.t, static_cast<double>(len - 1))));
  }
  return {worst <= 1e-6, fmt("50 paired samples, max |p - quadrature| %.2e", worst)};
}

std::string d1_trace(std::uint64_t seed, const std::vector<fsm::FsmEvent>& events) {
  std::string out;
  auto ctx = fsm::d1_init({0, 0, 1024, 768}, fsm::PromptDeck{{"in", "out", "up"}, {"independent", "cooperate"}, seed, 0});
  for (auto ev : events) {
    auto r = fsm::d1_step(std::move(ctx), ev);
    ctx = std::move(r.ctx);
    out += fsm::to_string(ctx.state) + "|" + ctx.prompt.short_word + "|" + ctx.prompt.long_word;
    for (const auto& a : r.actions) out += "|" + a.str();
    out += "\n";
  }
  return out;
}

std::string d2_trace(std::uint64_t seed, const std::vector<fsm::FsmEvent>& events) {
  std::string out;
  const auto tree = fsm::demo_tree();
  auto ctx = fsm::d2_init(fsm::PromptDeck{{"in", "out", "up"}, {"independent", "cooperate"}, seed, 0});
  for (auto ev : events) {
    auto r = fsm::d2_step(std::move(ctx), tree, ev);
    ctx = std::move(r.ctx);
    out += fsm::to_string(ctx.state) + "|" + ctx.prompt.short_word;
    for (const auto& a : r.actions) out += "|" + a.str();
    out += r.epsilon ? "|eps\n" : "\n";
  }
  return out;
}

Verdict fsm_convergence() {
  using fsm::FsmEvent;
  const fsm::Rect screen{0, 0, 1024, 768};
  int cells = 0, exact = 0;
  for (int y = 0; y < 768; y += 48)
    for (int x = 0; x < 1024; x += 64) {
      ++cells;
      exact += fsm::d1_steps_to_target(screen, {x, y, 64, 48}) == 8;
    }

  // Long word keeps the right half, then a short word keeps its top half.
  auto ctx = fsm::d1_init(screen);
  std::string fig3;
  for (auto ev : {FsmEvent::Short, FsmEvent::Long, FsmEvent::Short, FsmEvent::Short}) {
    auto r = fsm::d1_step(std::move(ctx), ev);
    ctx = std::move(r.ctx);
    for (const auto& a : r.actions) fig3 += a.str() + " ";
  }
  const bool crop_trace_ok = fig3 == "CropApplied[512,0,512,768] CropApplied[512,0,512,384] ";

  // Design 2 table: Enter; RightArrow + epsilon; undo gives the inverse.
  const auto tree = fsm::demo_tree();
  auto c2 = fsm::d2_init();
  std::string d2;
  for (auto ev : {FsmEvent::Short, FsmEvent::Long, FsmEvent::Short, FsmEvent::Long, FsmEvent::Short, FsmEvent::Short,
                  FsmEvent::Short}) {
    auto r = fsm::d2_step(std::move(c2), tree, ev);
    c2 = std::move(r.ctx);
    d2 += fsm::to_string(c2.state);
    for (const auto& a : r.actions) d2 += ":" + a.str();
    d2 += " ";
  }
  const bool d2_ok = d2 == "B C A:RightArrow D A:LeftArrow B A:Enter ";

  std::mt19937_64 rng(11);
  std::vector<FsmEvent> events;
  for (int i = 0; i < 500; ++i) events.push_back(rng() % 2 ? FsmEvent::Short : FsmEvent::Long);
  const bool repro = d1_trace(42, events) == d1_trace(42, events) && d2_trace(42, events) == d2_trace(42, events);

  const bool ok = cells == 256 && exact == cells && crop_trace_ok && d2_ok && repro;
  return {ok, fmt("%.0f/%.0f aligned 64x48 cells in exactly 8 crops", exact, cells) + (crop_trace_ok ? "; long-then-short crop trace ok" : "; long-then-short crop trace WRONG") +
                  (d2_ok ? "; design-2 trace ok" : "; design-2 trace WRONG: " + d2) +
                  (repro ? "; transcripts byte-identical" : "; transcripts differ")};
}

Verdict headless_loop() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "isbci_acceptance";
  fs::create_directories(dir);
  const std::string data_path = (dir / "data.isbc").string(), intents_path = (dir / "intents.txt").string();
  data::save_trialset(data::gen_synthetic({30, 4, 64, 2, 2.0, 7, 256.0}), data_path);
  std::mt19937_64 rng(8);
  std::vector<sim::Intent> intents;
  {
    std::ofstream f(intents_path);
    for (int i = 0; i < 200; ++i) {
      intents.push_back(rng() % 2 ? sim::Intent::Long : sim::Intent::Short);
      f << sim::to_string(intents.back()) << '\n';
    }
  }
  std::size_t mismatches = 0, steps = 0;
  bool identical = true;
  for (const char* design : {"1", "2"}) {
    int code = 0;
    const std::vector<std::string> args{"simulate", "--data", data_path, "--intents", intents_path,
                                        "--decoder", "oracle", "--design", design, "--seed", "17"};
    const auto transcript = run_cli(args, &code);
    identical = identical && code == 0 && transcript == run_cli(args);

    const bool d1 = std::string(design) == "1";
    fsm::PromptDeck deck{{"in", "out", "up"}, {"independent", "cooperate"}, derive_seed(17, 30), 0};
    auto c1 = fsm::d1_init({0, 0, 1024, 768}, deck);
    auto c2 = fsm::d2_init(deck);
    const auto tree = fsm::demo_tree();
    std::istringstream lines(transcript);
    std::string line;
    std::getline(lines, line);  // config
    std::getline(lines, line);  // initial state
    for (auto intent : intents) {
      if (!std::getline(lines, line)) {
        ++mismatches;
        break;
      }
      const auto msg = nlohmann::json::parse(line);
      const auto ev = intent == sim::Intent::Short ? fsm::FsmEvent::Short : fsm::FsmEvent::Long;
      std::vector<fsm::Action> actions;
      if (d1) {
        auto r = fsm::d1_step(std::move(c1), ev);
        c1 = std::move(r.ctx);
        actions = std::move(r.actions);
      } else {
        auto r = fsm::d2_step(std::move(c2), tree, ev);
        c2 = std::move(r.ctx);
        actions = std::move(r.actions);
      }
      nlohmann::json expected = nlohmann::json::array();
      for (const auto& a : actions) expected.push_back(a.str());
      if (msg.at("actions") != expected || msg.at("decoded") != sim::to_string(intent)) ++mismatches;
      ++steps;
    }
  }
  fs::remove_all(dir);
  return {mismatches == 0 && identical,
          fmt("%.0f oracle-decoded steps over both designs, %.0f action mismatches vs pure machines", static_cast<double>(steps),
              static_cast<double>(mismatches)) +
              (identical ? "; reruns byte-identical" : "; reruns differ")};
}

}  // namespace

int main() {
  check("itr-reproduction", itr_reproduction);
  check("kappa-reproduction", kappa_reproduction);
  check("synthetic-cv-vs-null-and-mdm", synthetic_cv);
  check("manifold-identities", manifold_identities);
  check("gradient-correctness", gradient_check);
  check("stratification", stratification);
  check("ttest-quadrature-oracle", ttest_oracle);
  check("fsm-convergence-and-traces", fsm_convergence);
  check("headless-partial-online-loop", headless_loop);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
