#include <gtest/gtest.h>

#include <set>
#include <random>
#include <thread>

#include "isbci/sim_service.hpp"

using namespace isbci;
using nlohmann::json;

namespace {

data::EegTrialSet small_data() { return data::gen_synthetic({20, 4, 64, 2, 2.0, 7, 256.0}); }

sim::ServiceConfig oracle_config() {
  sim::ServiceConfig cfg;
  cfg.decoder = sim::DecoderKind::Oracle;
  return cfg;
}

std::vector<sim::Intent> scripted_intents(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<sim::Intent> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(rng() % 2 ? sim::Intent::Long : sim::Intent::Short);
  return out;
}

/// Wrong on every `period`-th call, otherwise the recorded label.
class PeriodicErrorDecoder final : public sim::Decoder {
public:
  PeriodicErrorDecoder(std::vector<int> labels, std::size_t period) : labels_(std::move(labels)), period_(period) {}
  int decode(std::size_t id, data::TrialView) const override {
    const int truth = labels_.at(id);
    return ++calls_ % period_ == 0 ? 1 - truth : truth;
  }

private:
  std::vector<int> labels_;
  std::size_t period_;
  mutable std::size_t calls_ = 0;
};

}  // namespace

TEST(Split, StratifiedAndDisjoint) {
  const auto set = small_data();
  const auto [train, test] = sim::split_trials(set, 0.6, 3);
  EXPECT_EQ(train.size(), 24u);
  EXPECT_EQ(test.size(), 16u);
  std::vector<int> seen(set.n, 0);
  for (auto i : train) ++seen[i];
  for (auto i : test) ++seen[i];
  for (int s : seen) EXPECT_EQ(s, 1);
  int short_test = 0;
  for (auto i : test) short_test += set.labels[i] == 0;
  EXPECT_EQ(short_test, 8);
  EXPECT_EQ(sim::split_trials(set, 0.6, 3), sim::split_trials(set, 0.6, 3));
  EXPECT_THROW(sim::split_trials(set, 0.0, 3), ConfigError);
}

TEST(Service, FullTrainingShareLeavesNoTestPool) {
  auto cfg = oracle_config();
  cfg.split = 1.0;
  sim::SimService svc(small_data(), cfg);
  try {
    svc.start_session(sim::Design::One, 1);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_STREQ(e.what(), "empty test pool");
  }
}

TEST(Service, RequiresTwoClasses) {
  EXPECT_THROW(sim::SimService(data::gen_synthetic({5, 3, 16, 3, 1.0, 1, 256.0}), oracle_config()), ConfigError);
}

TEST(Session, FreshSessionShowsFullScreen) {
  sim::SimService svc(small_data(), oracle_config());
  const auto s = svc.start_session(sim::Design::One, 4);
  const json st = s->state_message();
  EXPECT_EQ(st["type"], "state");
  EXPECT_EQ(st["fsm_state"], "CropOrSwitch");
  EXPECT_EQ(st["rect"], (json{{"x", 0}, {"y", 0}, {"w", 1024}, {"h", 768}}));
  EXPECT_TRUE(st["prompts"].contains("short"));
  EXPECT_TRUE(st["prompts"].contains("long"));
  EXPECT_EQ(s->stats().decodes, 0u);
}

TEST(Session, DrawsHeldOutTrialsOfTheIntendedClass) {
  const auto set = small_data();
  sim::SimService svc(set, oracle_config());
  const auto s = svc.start_session(sim::Design::One, 9);
  const auto [train, test] = sim::split_trials(set, 0.6, 9);
  std::set<std::size_t> test_set(test.begin(), test.end());
  bool reshuffled = false;
  for (int i = 0; i < 30; ++i) {
    const auto intent = i % 3 ? sim::Intent::Short : sim::Intent::Long;
    const auto o = s->submit(intent);
    EXPECT_EQ(set.labels[o.trial_id], static_cast<int>(intent));
    EXPECT_TRUE(test_set.count(o.trial_id));
    reshuffled = reshuffled || o.pool_reshuffled;
  }
  EXPECT_TRUE(reshuffled);
  EXPECT_EQ(s->stats().decodes, 30u);
  EXPECT_EQ(s->stats().accuracy, 1.0);
}

TEST(Session, OracleLoopMatchesPureMachineDesign1) {
  sim::SimService svc(small_data(), oracle_config());
  const auto intents = scripted_intents(120, 5);
  const auto s = svc.start_session(sim::Design::One, 11);
  auto ctx = fsm::d1_init({0, 0, 1024, 768}, fsm::PromptDeck{{"in", "out", "up"}, {"independent", "cooperate"}, derive_seed(11, 30), 0});
  for (auto intent : intents) {
    const auto o = s->submit(intent);
    auto r = fsm::d1_step(std::move(ctx), intent == sim::Intent::Short ? fsm::FsmEvent::Short : fsm::FsmEvent::Long);
    ctx = std::move(r.ctx);
    EXPECT_EQ(o.actions, r.actions);
    EXPECT_TRUE(o.correct);
  }
  const auto& live = std::get<fsm::Design1Context>(s->machine());
  EXPECT_EQ(live.current, ctx.current);
  EXPECT_EQ(live.prompt, ctx.prompt);
}

TEST(Session, OracleLoopMatchesPureMachineDesign2) {
  sim::SimService svc(small_data(), oracle_config());
  const auto intents = scripted_intents(120, 6);
  const auto s = svc.start_session(sim::Design::Two, 12);
  const auto tree = fsm::demo_tree();
  auto ctx = fsm::d2_init(fsm::PromptDeck{{"in", "out", "up"}, {"independent", "cooperate"}, derive_seed(12, 30), 0});
  for (auto intent : intents) {
    const auto o = s->submit(intent);
    auto r = fsm::d2_step(std::move(ctx), tree, intent == sim::Intent::Short ? fsm::FsmEvent::Short : fsm::FsmEvent::Long);
    ctx = std::move(r.ctx);
    EXPECT_EQ(o.actions, r.actions);
    EXPECT_EQ(o.epsilon, r.epsilon);
  }
  EXPECT_EQ(std::get<fsm::Design2Context>(s->machine()).cursor, ctx.cursor);
}

TEST(Session, LiveStatsFollowRunningAccuracy) {
  const auto set = small_data();
  const auto [train, test] = sim::split_trials(set, 0.6, 1);
  sim::SessionConfig cfg;
  sim::Session s("t", cfg, std::make_shared<const data::EegTrialSet>(set), test,
                 std::make_shared<PeriodicErrorDecoder>(set.labels, 20));
  sim::StepOutcome last;
  for (int i = 0; i < 2000; ++i) last = s.submit(i % 2 ? sim::Intent::Long : sim::Intent::Short);
  EXPECT_EQ(last.stats.decodes, 2000u);
  EXPECT_EQ(last.stats.correct, 1900u);
  EXPECT_DOUBLE_EQ(last.stats.accuracy, 0.95);
  EXPECT_DOUBLE_EQ(last.stats.itr_bps, stats::itr(stats::info_per_trial(2, 0.95), 2.0));
  EXPECT_NEAR(last.stats.itr_bpm, 21.4, 0.05);
}

TEST(Session, ConcurrentSubmitsAreSerialized) {
  const auto set = small_data();
  sim::SimService svc(set, oracle_config());
  const auto s = svc.start_session(sim::Design::One, 2);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t)
    threads.emplace_back([&, t] {
      for (int i = 0; i < 50; ++i) s->submit((t + i) % 2 ? sim::Intent::Long : sim::Intent::Short);
    });
  for (auto& th : threads) th.join();
  EXPECT_EQ(s->stats().decodes, 200u);
  EXPECT_EQ(s->stats().correct, 200u);
}

TEST(Transcript, ByteIdenticalAcrossRuns) {
  const auto intents = scripted_intents(40, 8);
  auto run = [&](sim::Design d) {
    sim::SimService svc(small_data(), oracle_config());
    return sim::simulate_transcript(svc, d, 21, intents);
  };
  EXPECT_EQ(run(sim::Design::One), run(sim::Design::One));
  EXPECT_EQ(run(sim::Design::Two), run(sim::Design::Two));
  const auto lines = run(sim::Design::One);
  ASSERT_EQ(lines.size(), 42u);
  EXPECT_EQ(json::parse(lines[0])["type"], "config");
  EXPECT_EQ(json::parse(lines[1])["type"], "state");
  EXPECT_EQ(json::parse(lines[2])["type"], "outcome");
}

TEST(Transcript, PipelineDecoderIsDeterministic) {
  sim::ServiceConfig cfg;
  cfg.hyperparams = {6, 2, 8};
  cfg.pipeline.train.epochs = 20;
  const auto intents = scripted_intents(20, 3);
  sim::SimService a(small_data(), cfg), b(small_data(), cfg);
  EXPECT_EQ(sim::simulate_transcript(a, sim::Design::One, 5, intents), sim::simulate_transcript(b, sim::Design::One, 5, intents));
}

TEST(Protocol, StartIntentStatsState) {
  sim::SimService svc(small_data(), oracle_config());
  const json start = svc.handle({{"type", "start"}, {"design", 1}, {"seed", 3}});
  ASSERT_EQ(start["type"], "state");
  const std::string id = start["session"];
  const json out = svc.handle({{"type", "intent"}, {"session", id}, {"value", "short"}});
  EXPECT_EQ(out["type"], "outcome");
  EXPECT_EQ(out["intended"], "short");
  EXPECT_EQ(out["decoded"], "short");
  EXPECT_EQ(out["correct"], true);
  EXPECT_TRUE(out["actions"].is_array());
  for (const char* k : {"decodes", "correct", "accuracy", "itr_bpm"}) EXPECT_TRUE(out["stats"].contains(k)) << k;
  EXPECT_FALSE(out.contains("latency_ms"));
  EXPECT_EQ(svc.handle({{"type", "stats"}, {"session", id}})["stats"]["decodes"], 1);
  EXPECT_EQ(svc.handle({{"type", "state"}, {"session", id}})["fsm_state"], "CropRectangle");

  const json d2 = svc.handle({{"type", "start"}, {"design", "design2"}, {"seed", 3}});
  EXPECT_TRUE(d2.contains("tree"));
  EXPECT_NE(d2["session"], id);
}

TEST(Protocol, ErrorsAreReported) {
  sim::SimService svc(small_data(), oracle_config());
  EXPECT_EQ(svc.handle({{"type", "bogus"}})["type"], "error");
  EXPECT_EQ(svc.handle({{"type", "intent"}, {"session", "nope"}, {"value", "short"}})["type"], "error");
  const std::string id = svc.handle({{"type", "start"}, {"design", 2}})["session"];
  EXPECT_EQ(svc.handle({{"type", "intent"}, {"session", id}, {"value", "medium"}})["type"], "error");
  EXPECT_EQ(svc.handle({{"value", "short"}})["type"], "error");
  EXPECT_EQ(svc.handle({{"type", "start"}, {"design", 3}})["type"], "error");
}

TEST(Protocol, LatencyReportedWhenEnabled) {
  auto cfg = oracle_config();
  cfg.report_latency = true;
  sim::SimService svc(small_data(), cfg);
  const std::string id = svc.handle({{"type", "start"}, {"design", 1}})["session"];
  EXPECT_TRUE(svc.handle({{"type", "intent"}, {"session", id}, {"value", "long"}}).contains("latency_ms"));
}
