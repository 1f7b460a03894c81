#pragma once

// Partial-online control loop: the user states an intent, a held-out trial
// of that class is drawn, the decoder classifies it and the decoded word
// drives the interface machine.

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

#include "isbci/dataio.hpp"
#include "isbci/error.hpp"
#include "isbci/fsm.hpp"
#include "isbci/pipeline.hpp"
#include "isbci/random.hpp"
#include "isbci/stats.hpp"

namespace isbci::sim {

using nlohmann::json;

/// Maps a held-out trial to a class (0 = short, 1 = long).
class Decoder {
public:
  virtual ~Decoder() = default;
  virtual int decode(std::size_t trial_id, data::TrialView trial) const = 0;
};

class PipelineDecoder final : public Decoder {
public:
  explicit PipelineDecoder(std::shared_ptr<const pipeline::FittedPipeline> model) : model_(std::move(model)) {}
  int decode(std::size_t, data::TrialView trial) const override { return model_->decode(trial); }

private:
  std::shared_ptr<const pipeline::FittedPipeline> model_;
};

/// Always right: returns the recorded label. Used to check the loop against
/// the bare state machines.
class OracleDecoder final : public Decoder {
public:
  explicit OracleDecoder(std::vector<int> labels) : labels_(std::move(labels)) {}
  int decode(std::size_t trial_id, data::TrialView) const override { return labels_.at(trial_id); }

private:
  std::vector<int> labels_;
};

enum class Design { One, Two };

inline Design parse_design(const std::string& s) {
  if (s == "1" || s == "design1") return Design::One;
  if (s == "2" || s == "design2") return Design::Two;
  throw ConfigError("unknown design '" + s + "'");
}
inline std::string to_string(Design d) { return d == Design::One ? "design1" : "design2"; }

enum class Intent { Short = 0, Long = 1 };

inline Intent parse_intent(const std::string& s) {
  if (s == "short") return Intent::Short;
  if (s == "long") return Intent::Long;
  throw ConfigError("intent must be 'short' or 'long', got '" + s + "'");
}
inline std::string to_string(Intent i) { return i == Intent::Short ? "short" : "long"; }

struct SessionConfig {
  Design design = Design::One;
  std::uint64_t seed = 0;
  double split = 0.6;
  double trial_seconds = 2.0;  // 1 s imagination + 1 s rest
  fsm::Rect screen{0, 0, 1024, 768};
  std::vector<std::string> short_words{"in", "out", "up"};
  std::vector<std::string> long_words{"independent", "cooperate"};
  bool report_latency = false;

  json to_json() const {
    return {{"design", to_string(design)},
            {"seed", seed},
            {"split", split},
            {"trial_seconds", trial_seconds},
            {"screen", {{"x", screen.x}, {"y", screen.y}, {"w", screen.w}, {"h", screen.h}}},
            {"short_words", short_words},
            {"long_words", long_words}};
  }
};

struct Stats {
  std::size_t decodes = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double info_bits = 0.0;
  double itr_bps = 0.0;
  double itr_bpm = 0.0;

  json to_json() const {
    return {{"decodes", decodes}, {"correct", correct},   {"accuracy", accuracy},
            {"info_bits", info_bits}, {"itr_bps", itr_bps}, {"itr_bpm", itr_bpm}};
  }
};

/// Live statistics for a binary interface after `decodes` selections.
inline Stats make_stats(std::size_t decodes, std::size_t correct, double trial_seconds) {
  Stats s{decodes, correct, 0.0, 0.0, 0.0, 0.0};
  if (decodes == 0) return s;
  s.accuracy = static_cast<double>(correct) / static_cast<double>(decodes);
  s.info_bits = stats::info_per_trial(2, s.accuracy);
  s.itr_bps = stats::itr(s.info_bits, trial_seconds);
  s.itr_bpm = 60.0 * s.itr_bps;
  return s;
}

/// Stratified train/test split: within each class, shuffle by seed and keep
/// round(split * n_k) trials for training.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_trials(const data::EegTrialSet& set, double split,
                                                                                  std::uint64_t seed) {
  if (!(split > 0.0 && split <= 1.0)) throw ConfigError("split must lie in (0, 1]");
  std::vector<std::size_t> train, test;
  for (std::size_t k = 0; k < set.n_classes(); ++k) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < set.n; ++i)
      if (set.labels[i] == static_cast<int>(k)) members.push_back(i);
    Rng rng(derive_seed(seed, 10 + k));
    shuffle(members, rng);
    const auto n_train = static_cast<std::size_t>(std::llround(split * static_cast<double>(members.size())));
    train.insert(train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.insert(test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

struct StepOutcome {
  std::size_t trial_id = 0;
  Intent intended = Intent::Short;
  int decoded = 0;
  bool correct = false;
  std::vector<fsm::Action> actions;
  bool epsilon = false;
  bool pool_reshuffled = false;
  Stats stats;
  double latency_ms = 0.0;
};

inline json action_list(const std::vector<fsm::Action>& actions) {
  json out = json::array();
  for (const auto& a : actions) out.push_back(a.str());
  return out;
}

inline json rect_json(const fsm::Rect& r) { return {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }

inline json tree_json(const fsm::TreeNode& n) {
  json children = json::array();
  for (const auto& c : n.children) children.push_back(tree_json(c));
  return {{"name", n.name}, {"children", children}};
}

/// One user's run of the loop. Steps on a session are serialized.
class Session {
public:
  Session(std::string id, SessionConfig cfg, std::shared_ptr<const data::EegTrialSet> data,
          std::vector<std::size_t> test_pool, std::shared_ptr<const Decoder> decoder, fsm::DirTree tree = fsm::demo_tree())
      : id_(std::move(id)), cfg_(std::move(cfg)), data_(std::move(data)), decoder_(std::move(decoder)), tree_(std::move(tree)) {
    if (data_->n_classes() != 2) throw ConfigError("the interface needs a two-class (short/long) trial set");
    pools_.resize(2);
    for (auto i : test_pool) pools_[static_cast<std::size_t>(data_->labels[i])].trials.push_back(i);
    for (std::size_t k = 0; k < pools_.size(); ++k) {
      if (pools_[k].trials.empty()) throw ConfigError("empty test pool");
      pools_[k].rng.seed(derive_seed(cfg_.seed, 20 + k));
      shuffle(pools_[k].trials, pools_[k].rng);
    }
    fsm::PromptDeck deck{cfg_.short_words, cfg_.long_words, derive_seed(cfg_.seed, 30), 0};
    if (cfg_.design == Design::One) machine_ = fsm::d1_init(cfg_.screen, deck);
    else machine_ = fsm::d2_init(deck);
  }

  const std::string& id() const noexcept { return id_; }
  const SessionConfig& config() const noexcept { return cfg_; }

  StepOutcome submit(Intent intent) {
    std::lock_guard lock(mutex_);
    StepOutcome out;
    out.intended = intent;
    auto& pool = pools_[static_cast<std::size_t>(intent)];
    if (pool.next == pool.trials.size()) {
      shuffle(pool.trials, pool.rng);
      pool.next = 0;
      out.pool_reshuffled = true;
    }
    out.trial_id = pool.trials[pool.next++];

    const auto t0 = std::chrono::steady_clock::now();
    out.decoded = decoder_->decode(out.trial_id, data_->trial(out.trial_id));
    out.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    out.correct = out.decoded == data_->labels[out.trial_id];

    const fsm::FsmEvent ev = fsm::event_from_class(out.decoded);
    if (auto* d1 = std::get_if<fsm::Design1Context>(&machine_)) {
      auto r = fsm::d1_step(std::move(*d1), ev);
      machine_ = std::move(r.ctx);
      out.actions = std::move(r.actions);
    } else {
      auto r = fsm::d2_step(std::move(std::get<fsm::Design2Context>(machine_)), tree_, ev);
      machine_ = std::move(r.ctx);
      out.actions = std::move(r.actions);
      out.epsilon = r.epsilon;
    }
    ++decodes_;
    if (out.correct) ++correct_;
    out.stats = make_stats(decodes_, correct_, cfg_.trial_seconds);
    return out;
  }

  Stats stats() const {
    std::lock_guard lock(mutex_);
    return make_stats(decodes_, correct_, cfg_.trial_seconds);
  }

  /// Server `state` message.
  json state_message() const {
    std::lock_guard lock(mutex_);
    return state_unlocked();
  }

  json outcome_message(const StepOutcome& o) const {
    std::lock_guard lock(mutex_);
    json msg = {{"type", "outcome"},
                {"session", id_},
                {"trial", o.trial_id},
                {"intended", to_string(o.intended)},
                {"decoded", o.decoded == 0 ? "short" : "long"},
                {"correct", o.correct},
                {"actions", action_list(o.actions)},
                {"epsilon", o.epsilon},
                {"pool_reshuffled", o.pool_reshuffled},
                {"stats", o.stats.to_json()},
                {"state", state_unlocked()}};
    if (cfg_.report_latency) msg["latency_ms"] = o.latency_ms;
    return msg;
  }

  const std::variant<fsm::Design1Context, fsm::Design2Context>& machine() const noexcept { return machine_; }

private:
  struct Pool {
    std::vector<std::size_t> trials;
    std::size_t next = 0;
    Rng rng;
  };

  json state_unlocked() const {
    json msg = {{"type", "state"}, {"session", id_}, {"design", to_string(cfg_.design)}};
    if (const auto* d1 = std::get_if<fsm::Design1Context>(&machine_)) {
      msg["fsm_state"] = fsm::to_string(d1->state);
      msg["rect"] = rect_json(d1->current);
      msg["screen"] = rect_json(d1->screen);
      msg["undo_depth"] = d1->previous.size();
      msg["prompts"] = {{"short", d1->prompt.short_word}, {"long", d1->prompt.long_word}};
    } else {
      const auto& d2 = std::get<fsm::Design2Context>(machine_);
      msg["fsm_state"] = fsm::to_string(d2.state);
      json names = json::array();
      std::vector<int> prefix;
      for (int i : d2.cursor) {
        prefix.push_back(i);
        names.push_back(tree_.node(prefix).name);
      }
      msg["tree"] = {{"cursor", d2.cursor},
                     {"path", names},
                     {"columns", tree_.columns},
                     {"history_depth", d2.history.size()},
                     {"root", tree_json(tree_.root)}};
      msg["prompts"] = {{"short", d2.prompt.short_word}, {"long", d2.prompt.long_word}};
    }
    return msg;
  }

  std::string id_;
  SessionConfig cfg_;
  std::shared_ptr<const data::EegTrialSet> data_;
  std::shared_ptr<const Decoder> decoder_;
  fsm::DirTree tree_;
  std::vector<Pool> pools_;
  std::variant<fsm::Design1Context, fsm::Design2Context> machine_;
  std::size_t decodes_ = 0;
  std::size_t correct_ = 0;
  mutable std::mutex mutex_;
};

enum class DecoderKind { Pipeline, Oracle };

struct ServiceConfig {
  double split = 0.6;
  double trial_seconds = 2.0;
  DecoderKind decoder = DecoderKind::Pipeline;
  pipeline::Hyperparams hyperparams{16, 8, 64};
  pipeline::PipelineConfig pipeline{};
  std::optional<std::string> model_path;  // use a saved model instead of training
  bool report_latency = false;
};

/// Owns the trial set and the sessions; answers wire-protocol messages.
class SimService {
public:
  SimService(data::EegTrialSet set, ServiceConfig cfg)
      : data_(std::make_shared<const data::EegTrialSet>(std::move(set))), cfg_(std::move(cfg)) {
    if (data_->n_classes() != 2) throw ConfigError("the interface needs a two-class (short/long) trial set");
    data_->require_all_classes();
    if (cfg_.model_path) {
      auto loaded = pipeline::load_model(*cfg_.model_path);
      if (loaded.model.channels() != static_cast<Eigen::Index>(data_->c)) throw ConfigError("model channel count differs from data");
      saved_model_ = std::make_shared<const pipeline::FittedPipeline>(std::move(loaded.model));
    }
  }

  /// Splits by seed, trains (or reuses) the decoder and opens a session.
  std::shared_ptr<Session> start_session(Design design, std::uint64_t seed) {
    auto [train, test] = split_trials(*data_, cfg_.split, seed);
    if (test.empty()) throw ConfigError("empty test pool");
    SessionConfig sc;
    sc.design = design;
    sc.seed = seed;
    sc.split = cfg_.split;
    sc.trial_seconds = cfg_.trial_seconds;
    sc.report_latency = cfg_.report_latency;
    auto session = std::make_shared<Session>(next_id(), sc, data_, test, decoder_for(seed, train));
    std::lock_guard lock(mutex_);
    sessions_[session->id()] = session;
    return session;
  }

  std::shared_ptr<Session> find(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ConfigError("unknown session '" + id + "'");
    return it->second;
  }

  /// One request, one reply. Errors come back as {type: "error", message}.
  json handle(const json& msg) {
    try {
      const std::string type = msg.at("type").get<std::string>();
      if (type == "start") {
        const json& d = msg.at("design");
        const Design design = parse_design(d.is_string() ? d.get<std::string>() : std::to_string(d.get<int>()));
        return start_session(design, msg.value("seed", std::uint64_t{0}))->state_message();
      }
      if (type == "intent") {
        auto s = find(msg.at("session").get<std::string>());
        return s->outcome_message(s->submit(parse_intent(msg.at("value").get<std::string>())));
      }
      if (type == "stats") {
        auto s = find(msg.at("session").get<std::string>());
        return {{"type", "stats"}, {"session", s->id()}, {"stats", s->stats().to_json()}};
      }
      if (type == "state") return find(msg.at("session").get<std::string>())->state_message();
      throw ConfigError("unknown message type '" + type + "'");
    } catch (const json::exception& e) {
      return {{"type", "error"}, {"message", std::string("malformed message: ") + e.what()}};
    } catch (const Error& e) {
      return {{"type", "error"}, {"message", e.what()}};
    }
  }

  const data::EegTrialSet& data() const noexcept { return *data_; }
  const ServiceConfig& config() const noexcept { return cfg_; }

private:
  std::string next_id() {
    std::lock_guard lock(mutex_);
    return "s" + std::to_string(++counter_);
  }

  std::shared_ptr<const Decoder> decoder_for(std::uint64_t seed, const std::vector<std::size_t>& train) {
    if (cfg_.decoder == DecoderKind::Oracle) return std::make_shared<OracleDecoder>(data_->labels);
    if (saved_model_) return std::make_shared<PipelineDecoder>(saved_model_);
    {
      std::lock_guard lock(mutex_);
      if (const auto it = trained_.find(seed); it != trained_.end()) return it->second;
    }
    if (train.empty()) throw ConfigError("empty training share");
    const auto sub = data_->subset(train);
    const auto covs = pipeline::trial_covariances(sub, cfg_.pipeline.shrinkage, cfg_.pipeline.center);
    pipeline::PipelineConfig pc = cfg_.pipeline;
    pc.train.seed = derive_seed(seed, 40);
    auto model = std::make_shared<const pipeline::FittedPipeline>(
        pipeline::fit_pipeline(covs, sub.labels, static_cast<int>(sub.n_classes()), cfg_.hyperparams, pc));
    auto dec = std::make_shared<const PipelineDecoder>(model);
    std::lock_guard lock(mutex_);
    trained_[seed] = dec;
    return dec;
  }

  std::shared_ptr<const data::EegTrialSet> data_;
  ServiceConfig cfg_;
  std::shared_ptr<const pipeline::FittedPipeline> saved_model_;
  std::map<std::uint64_t, std::shared_ptr<const Decoder>> trained_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
  mutable std::mutex mutex_;
};

/// Headless run over a scripted intent list. Returns JSON lines: the config,
/// the initial state, then one outcome per intent.
inline std::vector<std::string> simulate_transcript(SimService& service, Design design, std::uint64_t seed,
                                                    const std::vector<Intent>& intents) {
  std::vector<std::string> lines;
  auto session = service.start_session(design, seed);
  json cfg = session->config().to_json();
  cfg["type"] = "config";
  cfg["decoder"] = service.config().decoder == DecoderKind::Oracle ? "oracle" : "pipeline";
  cfg["hyperparams"] = {{"n_rf", service.config().hyperparams.n_rf},
                        {"k_bag", service.config().hyperparams.k_bag},
                        {"hidden", service.config().hyperparams.hidden}};
  cfg["model"] = service.config().model_path.value_or("");
  lines.push_back(cfg.dump());
  lines.push_back(session->state_message().dump());
  for (Intent i : intents) lines.push_back(session->outcome_message(session->submit(i)).dump());
  return lines;
}

}  // namespace isbci::sim
