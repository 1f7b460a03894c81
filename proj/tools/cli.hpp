#pragma once

// Command-line front end: gen-data, train, eval, itr, ttest, simulate,
// serve and spectrogram. Exit codes: 0 success, 1 runtime error, 2 usage.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "isbci/dataio.hpp"
#include "isbci/pipeline.hpp"
#include "isbci/report.hpp"
#include "isbci/sim_service.hpp"
#include "isbci/stats.hpp"

#include "CLI11.hpp"
#include "json.hpp"

// After Eigen: <resolv.h>, pulled in here, defines a `_res` macro.
#include "httplib.h"

namespace isbci::cli {

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("bad integer list '" + s + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty integer list");
  return out;
}

inline std::vector<double> read_number_column(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::vector<double> out;
  std::string line;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (cell.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        out.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw FormatError("not a number: '" + cell + "' in '" + path + "'");
      }
    }
  }
  return out;
}

/// Scripted intents: one `short` or `long` per line; blank lines and # comments skipped.
inline std::vector<sim::Intent> read_intents(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open '" + path + "'");
  std::vector<sim::Intent> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    out.push_back(sim::parse_intent(line.substr(b, e - b + 1)));
  }
  return out;
}

/// Options shared by the subcommands that fit a pipeline.
struct PipelineFlags {
  double shrinkage = 0.0;
  bool center = false;
  std::string metric = "riemannian";
  std::string scheme = "row-concat";
  std::size_t epochs = 200;
  double learning_rate = 0.001;
  double l2 = 0.0001;
  std::size_t batch_size = 200;
  bool no_bias = false;

  void attach(CLI::App* app) {
    app->add_option("--shrinkage", shrinkage, "Covariance shrinkage toward scaled identity")->check(CLI::NonNegativeNumber);
    app->add_flag("--center", center, "Remove channel means before the covariance");
    app->add_option("--metric", metric, "Reference mean: riemannian or arithmetic");
    app->add_option("--scheme", scheme, "Tangent vectorization: row-concat or upper-weighted");
    app->add_option("--epochs", epochs, "Maximum training epochs");
    app->add_option("--learning-rate", learning_rate, "Adam learning rate");
    app->add_option("--l2", l2, "L2 penalty on weights");
    app->add_option("--batch-size", batch_size, "Mini-batch size");
    app->add_flag("--no-bias", no_bias, "Train without bias terms");
  }

  pipeline::PipelineConfig build() const {
    pipeline::PipelineConfig cfg;
    cfg.shrinkage = shrinkage;
    cfg.center = center;
    cfg.mean.metric = spd::parse_mean_metric(metric);
    cfg.scheme = spd::parse_vector_scheme(scheme);
    cfg.train.epochs = epochs;
    cfg.train.learning_rate = learning_rate;
    cfg.train.l2 = l2;
    cfg.train.batch_size = batch_size;
    cfg.train.no_bias = no_bias;
    return cfg;
  }
};

inline void write_lines(const std::string& path, const std::vector<std::string>& lines, std::ostream& fallback) {
  if (path.empty() || path == "-") {
    for (const auto& l : lines) fallback << l << '\n';
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  for (const auto& l : lines) out << l << '\n';
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Imagined-speech BCI decoding engine and interface simulator", "isbci"};
  app.require_subcommand(1);

  // gen-data
  data::SyntheticConfig gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a seeded synthetic trial set");
  gen_cmd->add_option("--n-per-class", gen.n_per_class, "Trials per class");
  gen_cmd->add_option("--channels", gen.channels, "Channels");
  gen_cmd->add_option("--samples", gen.samples, "Samples per trial");
  gen_cmd->add_option("--classes", gen.classes, "Number of classes");
  gen_cmd->add_option("--separation", gen.separation, "Between-class covariance separation");
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_option("--sampling-rate", gen.sampling_rate, "Sampling rate in Hz");
  gen_cmd->add_option("--out", gen_out, "Output container")->required();

  // train
  std::string train_data, train_out;
  pipeline::Hyperparams train_hp;
  std::uint64_t train_seed = 0;
  PipelineFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "Fit the decoding pipeline on every trial and save it");
  train_cmd->add_option("--data", train_data, "Trial container")->required();
  train_cmd->add_option("--out", train_out, "Model container")->required();
  train_cmd->add_option("--n-rf", train_hp.n_rf, "PCA dimensions");
  train_cmd->add_option("--bag", train_hp.k_bag, "Ensemble members");
  train_cmd->add_option("--hidden", train_hp.hidden, "Hidden units");
  train_cmd->add_option("--seed", train_seed, "Random seed");
  train_flags.attach(train_cmd);

  // eval
  std::string eval_data, eval_format = "text", eval_name, eval_out;
  std::string grid_pca = "4,8,16,32,64", grid_bag = "2,4,8,16,32,64", grid_hidden = "8,16,32,64,128,256";
  int eval_folds = 10, eval_inner = 3;
  std::uint64_t eval_seed = 0;
  bool eval_shuffle = false, eval_parallel = false;
  PipelineFlags eval_flags;
  auto* eval_cmd = app.add_subcommand("eval", "Nested stratified cross-validation of the pipeline");
  eval_cmd->add_option("--data", eval_data, "Trial container")->required();
  eval_cmd->add_option("--folds", eval_folds, "Outer folds")->check(CLI::Range(2, 1000));
  eval_cmd->add_option("--inner-folds", eval_inner, "Inner folds for model selection")->check(CLI::Range(2, 1000));
  eval_cmd->add_option("--grid-pca", grid_pca, "PCA dimensions to search");
  eval_cmd->add_option("--grid-bag", grid_bag, "Ensemble sizes to search");
  eval_cmd->add_option("--grid-hidden", grid_hidden, "Hidden sizes to search");
  eval_cmd->add_option("--seed", eval_seed, "Random seed");
  eval_cmd->add_option("--format", eval_format, "text, csv or structured");
  eval_cmd->add_option("--name", eval_name, "Row label (defaults to the data path)");
  eval_cmd->add_option("--out", eval_out, "Write the report here instead of stdout");
  eval_cmd->add_flag("--shuffle-labels", eval_shuffle, "Permute labels first (null model)");
  eval_cmd->add_flag("--parallel", eval_parallel, "Run outer folds concurrently");
  eval_flags.attach(eval_cmd);

  // itr
  int itr_classes = 2;
  double itr_acc = 0.0, itr_seconds = 2.0;
  auto* itr_cmd = app.add_subcommand("itr", "Bits per selection and information transfer rate");
  itr_cmd->add_option("--classes", itr_classes, "Number of classes")->check(CLI::Range(2, 1 << 20));
  itr_cmd->add_option("--accuracy", itr_acc, "Classification accuracy in [0, 1]")->required()->check(CLI::Range(0.0, 1.0));
  itr_cmd->add_option("--trial-seconds", itr_seconds, "Seconds per selection")->check(CLI::PositiveNumber);

  // ttest
  std::string tt_a, tt_b;
  double tt_chance = -1.0;
  auto* tt_cmd = app.add_subcommand("ttest", "Paired two-tailed t-test on two value lists");
  tt_cmd->add_option("--a", tt_a, "First list (one value per line or comma-separated)")->required();
  auto* tt_b_opt = tt_cmd->add_option("--b", tt_b, "Second list, paired with --a");
  auto* tt_c_opt = tt_cmd->add_option("--chance", tt_chance, "Compare --a against this constant instead");
  tt_b_opt->excludes(tt_c_opt);

  // simulate / serve share the service flags
  std::string sim_data, sim_intents, sim_out, sim_decoder = "pipeline", sim_model, sim_design = "1";
  std::uint64_t sim_seed = 0;
  double sim_split = 0.6, sim_seconds = 2.0;
  pipeline::Hyperparams sim_hp{16, 8, 64};
  PipelineFlags sim_flags;
  auto* sim_cmd = app.add_subcommand("simulate", "Headless partial-online run over a scripted intent file");
  auto attach_service = [&](CLI::App* cmd) {
    cmd->add_option("--data", sim_data, "Trial container (two classes: short, long)")->required();
    cmd->add_option("--decoder", sim_decoder, "pipeline or oracle");
    cmd->add_option("--model", sim_model, "Saved model to use instead of training");
    cmd->add_option("--split", sim_split, "Training share of each class");
    cmd->add_option("--trial-seconds", sim_seconds, "Seconds per decision for live ITR");
    cmd->add_option("--n-rf", sim_hp.n_rf, "PCA dimensions");
    cmd->add_option("--bag", sim_hp.k_bag, "Ensemble members");
    cmd->add_option("--hidden", sim_hp.hidden, "Hidden units");
    sim_flags.attach(cmd);
  };
  attach_service(sim_cmd);
  sim_cmd->add_option("--design", sim_design, "1 (rectangle crop) or 2 (directory tree)");
  sim_cmd->add_option("--intents", sim_intents, "One 'short' or 'long' per line")->required();
  sim_cmd->add_option("--seed", sim_seed, "Session seed");
  sim_cmd->add_option("--out", sim_out, "Transcript path (JSON lines); stdout if omitted");

  std::string serve_host = "127.0.0.1", serve_ui;
  int serve_port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "Serve sessions over HTTP (POST /api, JSON messages)");
  attach_service(serve_cmd);
  serve_cmd->add_option("--host", serve_host, "Bind address");
  serve_cmd->add_option("--port", serve_port, "Port");
  serve_cmd->add_option("--ui-dir", serve_ui, "Static files for the browser client");

  // spectrogram
  std::string spec_data, spec_out;
  std::size_t spec_trial = 0, spec_window = 64, spec_hop = 32;
  auto* spec_cmd = app.add_subcommand("spectrogram", "Hann-windowed magnitude spectrogram of one trial as CSV");
  spec_cmd->add_option("--data", spec_data, "Trial container")->required();
  spec_cmd->add_option("--trial", spec_trial, "Trial index");
  spec_cmd->add_option("--window", spec_window, "Window length in samples");
  spec_cmd->add_option("--hop", spec_hop, "Hop in samples");
  spec_cmd->add_option("--out", spec_out, "Output CSV; stdout if omitted");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code != 0) {
      err << app.help();
      return 2;
    }
    return 0;
  }

  auto service_config = [&] {
    sim::ServiceConfig sc;
    sc.split = sim_split;
    sc.trial_seconds = sim_seconds;
    if (sim_decoder == "oracle") sc.decoder = sim::DecoderKind::Oracle;
    else if (sim_decoder != "pipeline") throw ConfigError("decoder must be 'pipeline' or 'oracle'");
    sc.hyperparams = sim_hp;
    sc.pipeline = sim_flags.build();
    if (!sim_model.empty()) sc.model_path = sim_model;
    return sc;
  };

  try {
    if (*gen_cmd) {
      data::save_trialset(data::gen_synthetic(gen), gen_out);
      err << "wrote " << gen.n_per_class * gen.classes << " trials to " << gen_out << '\n';
    } else if (*train_cmd) {
      const auto set = data::load_trialset(train_data);
      auto cfg = train_flags.build();
      cfg.train.seed = train_seed;
      const auto covs = pipeline::trial_covariances(set, cfg.shrinkage, cfg.center);
      const auto model = pipeline::fit_pipeline(covs, set.labels, static_cast<int>(set.n_classes()), train_hp, cfg);
      pipeline::save_model(model, set.class_names, train_out);
      const auto pred = model.predict_covariances(covs);
      err << "training accuracy " << stats::accuracy(pred.labels, set.labels) << ", model written to " << train_out << '\n';
    } else if (*eval_cmd) {
      auto set = data::load_trialset(eval_data);
      if (eval_shuffle) set = pipeline::shuffle_labels(std::move(set), derive_seed(eval_seed, 77));
      pipeline::Grid grid{parse_int_list(grid_pca), parse_int_list(grid_bag), parse_int_list(grid_hidden)};
      pipeline::CvOptions opt;
      opt.k_folds = eval_folds;
      opt.inner_folds = eval_inner;
      opt.seed = eval_seed;
      opt.config = eval_flags.build();
      opt.parallel_folds = eval_parallel;
      const auto fmt = report::parse_format(eval_format);
      auto result = pipeline::run_cv_pipeline(set, grid, opt);
      result.name = eval_name.empty() ? eval_data : eval_name;
      std::string doc = report::render({result}, fmt);
      if (fmt == report::Format::Text) {
        const double chance = 1.0 / static_cast<double>(set.n_classes());
        const std::vector<double> chance_vec(result.fold_accuracies.size(), chance);
        const auto tt = stats::paired_ttest_2tailed(result.fold_accuracies, chance_vec);
        std::ostringstream extra;
        extra << "kappa " << stats::kappa(result.summary.mean, static_cast<int>(set.n_classes())) << "; folds vs chance "
              << chance << ": t = " << tt.t << ", p = " << tt.p << '\n';
        doc += extra.str();
      }
      if (eval_out.empty()) out << doc;
      else write_lines(eval_out, {doc.substr(0, doc.size() - 1)}, out);
    } else if (*itr_cmd) {
      const double bits = stats::info_per_trial(itr_classes, itr_acc);
      const double bps = stats::itr(bits, itr_seconds);
      out << std::fixed << std::setprecision(4) << "I = " << bits << " bits/trial\n";
      out << std::setprecision(3) << "ITR = " << bps << " b/s\n";
      out << std::setprecision(1) << "ITR = " << 60.0 * bps << " b/min\n";
    } else if (*tt_cmd) {
      const auto a = read_number_column(tt_a);
      std::vector<double> b;
      if (!tt_b.empty()) b = read_number_column(tt_b);
      else if (tt_chance >= 0.0) b.assign(a.size(), tt_chance);
      else throw ConfigError("ttest needs --b or --chance");
      const auto r = stats::paired_ttest_2tailed(a, b);
      out << std::setprecision(10) << "t = " << r.t << "\np = " << r.p << '\n';
    } else if (*sim_cmd) {
      auto set = data::load_trialset(sim_data);
      sim::SimService service(std::move(set), service_config());
      const auto lines =
          sim::simulate_transcript(service, sim::parse_design(sim_design), sim_seed, read_intents(sim_intents));
      write_lines(sim_out, lines, out);
    } else if (*serve_cmd) {
      auto sc = service_config();
      sc.report_latency = true;
      sim::SimService service(data::load_trialset(sim_data), sc);
      httplib::Server server;
      server.Post("/api", [&](const httplib::Request& req, httplib::Response& res) {
        nlohmann::json reply;
        try {
          reply = service.handle(nlohmann::json::parse(req.body));
        } catch (const nlohmann::json::exception& e) {
          reply = {{"type", "error"}, {"message", std::string("malformed message: ") + e.what()}};
        }
        res.set_content(reply.dump(), "application/json");
      });
      server.Get("/health", [](const httplib::Request&, httplib::Response& res) { res.set_content("ok", "text/plain"); });
      if (!serve_ui.empty() && !server.set_mount_point("/", serve_ui)) throw ConfigError("cannot serve '" + serve_ui + "'");
      err << "listening on http://" << serve_host << ':' << serve_port << '\n';
      if (!server.listen(serve_host, serve_port)) throw Error("cannot listen on " + serve_host + ":" + std::to_string(serve_port));
    } else if (*spec_cmd) {
      const auto set = data::load_trialset(spec_data);
      if (spec_trial >= set.n) throw ConfigError("trial index out of range");
      const auto sg = data::export_spectrogram(set.trial(spec_trial), spec_window, spec_hop);
      std::vector<std::string> lines{"channel,frame,bin,freq_hz,magnitude"};
      for (std::size_t ch = 0; ch < sg.size(); ++ch)
        for (Eigen::Index f = 0; f < sg[ch].cols(); ++f)
          for (Eigen::Index b = 0; b < sg[ch].rows(); ++b) {
            const double hz = static_cast<double>(b) * set.sampling_rate / static_cast<double>(spec_window);
            lines.push_back(std::to_string(ch) + ',' + std::to_string(f) + ',' + std::to_string(b) + ',' + report::fmt(hz) +
                            ',' + report::fmt(sg[ch](b, f)));
          }
      write_lines(spec_out, lines, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace isbci::cli
