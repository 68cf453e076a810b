#include <gtest/gtest.h>

#include <mutex>
#include <random>
#include <regex>
#include <set>

#include "fixtures.hpp"
#include "vknow/evalkit.hpp"

using namespace vknow;
using namespace vknow::evalkit;
using corpus::Task;
using vknow::test::ChatCall;

namespace {

std::string item_id_in(const std::string& text) {
  static const std::regex re(R"(clip (q\d+))");
  std::smatch m;
  return std::regex_search(text, m, re) ? m[1].str() : std::string();
}

// Replies with the gold letter for ids in `right`, a wrong letter otherwise.
test::MockModels answer_sheet(const corpus::Manifest& m, std::set<std::string> right) {
  std::map<std::string, corpus::QAItem> by_id;
  for (const auto& it : m.items) by_id[it.id] = it;
  test::MockModels models;
  models.chat = [by_id, right](const ChatCall& c) {
    const auto& it = by_id.at(item_id_in(c.user));
    const std::size_t pick = right.contains(it.id) ? it.answer_index : (it.answer_index + 1) % it.options.size();
    return test::letter(pick);
  };
  return models;
}

EvalConfig config() {
  EvalConfig c;
  c.model = test::endpoint("vlm", gateway::EndpointKind::chat_vision);
  c.workers = 4;
  return c;
}

ItemResult result(std::string id, bool correct) {
  ItemResult r;
  r.item_id = std::move(id);
  r.correct = correct;
  r.predicted = correct ? std::optional<std::size_t>(0) : std::nullopt;
  return r;
}

// Independent recount: per-task and grouped accuracies from raw tallies.
struct Recount {
  std::map<Task, std::pair<int, int>> per_task;  // correct, total
  double micro(std::optional<corpus::TaskGroup> g) const {
    int c = 0, n = 0;
    for (const auto& [t, v] : per_task) {
      if (g && corpus::group_of(t) != *g) continue;
      c += v.first;
      n += v.second;
    }
    return 100.0 * c / n;
  }
  double macro(std::optional<corpus::TaskGroup> g) const {
    double s = 0;
    int k = 0;
    for (const auto& [t, v] : per_task) {
      if (g && corpus::group_of(t) != *g) continue;
      s += 100.0 * v.first / v.second;
      ++k;
    }
    return s / k;
  }
};

}  // namespace

TEST(Rounding, HalfUp) {
  EXPECT_DOUBLE_EQ(round1(12.25), 12.3);
  EXPECT_DOUBLE_EQ(round1(12.24), 12.2);
  EXPECT_DOUBLE_EQ(round1(100.0 / 3), 33.3);
  EXPECT_DOUBLE_EQ(round1(200.0 / 3), 66.7);
  EXPECT_DOUBLE_EQ(round1(100.0 * 29 / 20000 * 100), 14.5);
  EXPECT_DOUBLE_EQ(round1(0.05), 0.1);
  EXPECT_DOUBLE_EQ(round1(100.0), 100.0);
}

TEST(Config, DefaultsAndValidation) {
  auto c = config();
  EXPECT_EQ(c.n_frames, 32u);
  EXPECT_DOUBLE_EQ(c.sampling.temperature, 0.1);
  EXPECT_DOUBLE_EQ(c.sampling.top_p, 0.001);
  EXPECT_NO_THROW(c.validate());
  c.n_frames = 0;
  EXPECT_THROW(c.validate(), Error);
  c = config();
  c.model.kind = gateway::EndpointKind::chat;
  EXPECT_THROW(c.validate(), gateway::ConfigError);
  EXPECT_EQ(parse_prompt_mode("sta"), PromptMode::sta);
  EXPECT_THROW(parse_prompt_mode("cot"), Error);
}

TEST(RunEval, AllGoldAndHalf) {
  const auto m = test::synthetic_manifest(2);
  {
    gateway::Gateway gw(test::scripted_options(std::make_shared<test::ScriptedTransport>(answer_sheet(m, {"q000", "q001"}))));
    EXPECT_DOUBLE_EQ(*run_eval(m, config(), gw, test::fake_asset).aggregates.overall, 100.0);
  }
  gateway::Gateway gw(test::scripted_options(std::make_shared<test::ScriptedTransport>(answer_sheet(m, {"q001"}))));
  const auto run = run_eval(m, config(), gw, test::fake_asset);
  EXPECT_DOUBLE_EQ(*run.aggregates.overall, 50.0);
  ASSERT_EQ(run.results.size(), 2u);
  EXPECT_FALSE(run.results[0].correct);
  EXPECT_TRUE(run.results[1].correct);
  EXPECT_EQ(run.manifest_fingerprint, manifest_fingerprint(m));
}

TEST(RunEval, HandGradedSixteenItems) {
  // Two items per task; the sheet gets IP 2/2, OA 1/2, OM 0/2, SA 1/2, EA 2/2, MS 1/2, SR 0/2, SI 2/2.
  const auto m = test::synthetic_manifest(16);  // q000..q007 tasks 0..7, q008..q015 again
  const std::set<std::string> right = {"q000", "q008", "q001", "q003", "q004", "q012", "q005", "q007", "q015"};
  gateway::Gateway gw(test::scripted_options(std::make_shared<test::ScriptedTransport>(answer_sheet(m, right))));
  const auto agg = run_eval(m, config(), gw, test::fake_asset).aggregates;
  const std::map<Task, double> want = {{Task::IP, 100}, {Task::OA, 50}, {Task::OM, 0},   {Task::SA, 50},
                                       {Task::EA, 100}, {Task::MS, 50}, {Task::SR, 0},   {Task::SI, 100}};
  EXPECT_EQ(agg.per_task, want);
  EXPECT_DOUBLE_EQ(*agg.overall, 56.25);
  EXPECT_DOUBLE_EQ(*agg.wc, 50.0);
  EXPECT_DOUBLE_EQ(*agg.hc, 62.5);
}

TEST(RunEval, RequestShape) {
  const auto m = test::synthetic_manifest(1);
  std::mutex mu;
  std::vector<ChatCall> calls;
  test::MockModels models;
  models.chat = [&](const ChatCall& c) {
    std::lock_guard lk(mu);
    calls.push_back(c);
    return std::string("A");
  };
  gateway::Gateway gw(test::scripted_options(std::make_shared<test::ScriptedTransport>(models)));
  auto cfg = config();
  cfg.n_frames = 8;
  cfg.model.sampling.temperature = 0.9;  // overridden by cfg.sampling
  run_eval(m, cfg, gw, test::fake_asset);
  ASSERT_EQ(calls.size(), 1u);
  EXPECT_EQ(calls[0].n_images, 8u);
  EXPECT_DOUBLE_EQ(calls[0].temperature, 0.1);
  EXPECT_DOUBLE_EQ(calls[0].top_p, 0.001);
  EXPECT_NE(calls[0].user.find("A. q000 option 0"), std::string::npos);
}

TEST(RunEval, UnparseableCountsWrongNotSkipped) {
  const auto m = test::synthetic_manifest(3);
  test::MockModels models;
  models.chat = [](const ChatCall&) { return std::string("I am not sure."); };
  gateway::Gateway gw(test::scripted_options(std::make_shared<test::ScriptedTransport>(models)));
  const auto run = run_eval(m, config(), gw, test::fake_asset);
  EXPECT_EQ(run.results.size(), 3u);
  for (const auto& r : run.results) {
    EXPECT_FALSE(r.predicted);
    EXPECT_FALSE(r.correct);
  }
  EXPECT_DOUBLE_EQ(*run.aggregates.overall, 0.0);
}

TEST(RunEval, StaModeReadsAnswerSection) {
  corpus::Manifest m;
  m.items.push_back(test::make_item("q000", Task::IP, {"x", "y"}, 1));
  test::MockModels models;
  models.chat = [](const ChatCall&) { return std::string("<see>A ball. A</see><think>A?</think><answer>B</answer>"); };
  gateway::Gateway gw(test::scripted_options(std::make_shared<test::ScriptedTransport>(models)));
  auto cfg = config();
  cfg.prompt_mode = PromptMode::sta;
  EXPECT_TRUE(run_eval(m, cfg, gw, test::fake_asset).results[0].correct);
  EXPECT_EQ(extract_prediction("<see>s</see><think>t</think>", m.items[0], cfg), std::nullopt);
  cfg.prompt_mode = PromptMode::vanilla;
  EXPECT_NE(build_prompt(m.items[0], cfg).find("A. x\nB. y"), std::string::npos);
}

TEST(RunEval, GatewayFailureAborts) {
  const auto m = test::synthetic_manifest(2);
  auto t = std::make_shared<test::ScriptedTransport>(answer_sheet(m, {}));
  t->fail_next(503, 100);
  gateway::Gateway gw(test::scripted_options(t));
  auto cfg = config();
  cfg.model.retry.max_attempts = 2;
  EXPECT_THROW(run_eval(m, cfg, gw, test::fake_asset), gateway::GatewayError);
}

TEST(Aggregate, AllCorrectAndHalfSymmetry) {
  const auto m = test::synthetic_manifest(32);
  std::vector<ItemResult> all, half;
  for (std::size_t i = 0; i < m.items.size(); ++i) {
    all.push_back(result(m.items[i].id, true));
    half.push_back(result(m.items[i].id, i < 16));  // q000..q015: one of each pair per task
  }
  const auto a = aggregate(all, m);
  for (const auto& [t, v] : a.per_task) EXPECT_EQ(v, 100.0);
  const auto h = aggregate(half, m);
  for (const auto& [t, v] : h.per_task) EXPECT_EQ(v, 50.0);
  EXPECT_EQ(*h.overall, *h.overall_macro);
  EXPECT_EQ(*h.wc, *h.wc_macro);
}

TEST(Aggregate, MicroMacroMatchBruteForce) {
  std::mt19937_64 rng(21);
  corpus::Manifest m;
  std::vector<ItemResult> results;
  Recount oracle;
  const int sizes[8] = {3, 11, 7, 20, 1, 9, 14, 5};
  int k = 0;
  for (Task t : corpus::kAllTasks) {
    for (int j = 0; j < sizes[corpus::index_of(t)]; ++j) {
      const std::string id = "x" + std::to_string(k++);
      m.items.push_back(test::make_item(id, t, {"a", "b", "c"}, 0));
      const bool ok = rng() % 3 != 0;
      results.push_back(result(id, ok));
      oracle.per_task[t].first += ok;
      oracle.per_task[t].second += 1;
    }
  }
  const auto agg = aggregate(results, m);
  for (const auto& [t, v] : oracle.per_task) EXPECT_NEAR(agg.per_task.at(t), 100.0 * v.first / v.second, 1e-12);
  EXPECT_NEAR(*agg.overall, oracle.micro(std::nullopt), 1e-12);
  EXPECT_NEAR(*agg.wc, oracle.micro(corpus::TaskGroup::world_centric), 1e-12);
  EXPECT_NEAR(*agg.hc, oracle.micro(corpus::TaskGroup::human_centric), 1e-12);
  EXPECT_NEAR(*agg.wc_macro, oracle.macro(corpus::TaskGroup::world_centric), 1e-12);
  EXPECT_NEAR(*agg.hc_macro, oracle.macro(corpus::TaskGroup::human_centric), 1e-12);
  EXPECT_NE(round1(*agg.overall), round1(*agg.overall_macro));

  // Invariant under reordering.
  std::shuffle(results.begin(), results.end(), rng);
  std::shuffle(m.items.begin(), m.items.end(), rng);
  EXPECT_EQ(aggregate(results, m), agg);
}

TEST(Aggregate, EmptyTaskAbsentAndUnknownItem) {
  corpus::Manifest m;
  m.items.push_back(test::make_item("a", Task::IP, {"x", "y"}, 0));
  const auto agg = aggregate({result("a", true)}, m);
  EXPECT_EQ(agg.per_task.size(), 1u);
  EXPECT_FALSE(agg.hc);
  EXPECT_FALSE(agg.hc_macro);
  EXPECT_THROW(aggregate({result("b", true)}, m), rewards::UnknownItem);
}

TEST(RandomBaseline, UniformOptionCounts) {
  corpus::Manifest m;
  for (int i = 0; i < 10; ++i) {
    m.items.push_back(test::make_item("ip" + std::to_string(i), Task::IP, {"yes", "no"}, 0));
    m.items.push_back(test::make_item("ms" + std::to_string(i), Task::MS, {"a", "b", "c", "d"}, 0));
  }
  const auto r = random_baseline(m);
  EXPECT_EQ(r.per_task.at(Task::IP), 50.0);
  EXPECT_EQ(r.per_task.at(Task::MS), 25.0);
  EXPECT_EQ(*r.wc, 50.0);
  EXPECT_EQ(*r.hc, 25.0);
}

TEST(RandomBaseline, MatchesMonteCarlo) {
  std::mt19937_64 rng(99);
  corpus::Manifest m;
  for (int i = 0; i < 60; ++i) {
    const std::size_t n = 2 + i % 3;
    m.items.push_back(test::make_item("r" + std::to_string(i), corpus::kAllTasks[i % 8], test::numbered_options("o", n),
                                      rng() % n));
  }
  const auto expected = random_baseline(m);
  const int trials = 20000;
  std::map<Task, double> hits;
  double overall = 0;
  for (int t = 0; t < trials; ++t) {
    for (const auto& it : m.items) {
      const bool ok = rng() % it.options.size() == it.answer_index;
      hits[it.dimension] += ok;
      overall += ok;
    }
  }
  EXPECT_NEAR(*expected.overall, 100.0 * overall / (trials * m.items.size()), 0.2);
  for (const auto& [task, h] : hits) {
    EXPECT_NEAR(expected.per_task.at(task), 100.0 * h / (trials * expected.counts.at(task)), 0.6);
  }
}

TEST(Sweep, FrameDependentRepliesDoNotCrossContaminate) {
  const auto m = test::synthetic_manifest(8);
  test::TempDir dir;
  auto models = answer_sheet(m, {});
  auto wrong = models.chat;
  std::map<std::string, std::size_t> gold;
  for (const auto& it : m.items) gold[it.id] = it.answer_index;
  models.chat = [wrong, gold](const ChatCall& c) {
    return c.n_images >= 16 ? test::letter(gold.at(item_id_in(c.user))) : wrong(c);
  };
  auto transport = std::make_shared<test::ScriptedTransport>(models);
  std::string table;
  {
    gateway::Gateway gw(test::scripted_options(transport, dir / "cache", gateway::CacheMode::record));
    const auto runs = frames_sweep(m, config(), {4, 8, 16, 32}, gw, test::fake_asset);
    ASSERT_EQ(runs.size(), 4u);
    EXPECT_EQ(*runs.at(4).aggregates.overall, 0.0);
    EXPECT_EQ(*runs.at(8).aggregates.overall, 0.0);
    EXPECT_EQ(*runs.at(16).aggregates.overall, 100.0);
    EXPECT_EQ(*runs.at(32).aggregates.overall, 100.0);
    table = sweep_table(runs);
  }
  EXPECT_EQ(transport->calls(), 32u);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "cache")) files += e.is_regular_file();
  EXPECT_EQ(files, 32u);
  EXPECT_EQ(table.substr(0, table.find('\n')), "frames,Overall,IP,OA,OM,SA,EA,MS,SR,SI,WC,HC");
  EXPECT_NE(table.find("\n4,0.0,"), std::string::npos);
  EXPECT_NE(table.find("\n32,100.0,"), std::string::npos);

  for (int rep = 0; rep < 2; ++rep) {
    gateway::Gateway gw(test::scripted_options(std::make_shared<test::ForbiddenTransport>(), dir / "cache",
                                               gateway::CacheMode::replay));
    EXPECT_EQ(sweep_table(frames_sweep(m, config(), {4, 8, 16, 32}, gw, test::fake_asset)), table);
  }
}

TEST(Sweep, SingletonEqualsRunEval) {
  const auto m = test::synthetic_manifest(4);
  gateway::Gateway gw(test::scripted_options(std::make_shared<test::ScriptedTransport>(answer_sheet(m, {"q001"}))));
  auto cfg = config();
  const auto sweep = frames_sweep(m, cfg, {4}, gw, test::fake_asset);
  cfg.n_frames = 4;
  const auto direct = run_eval(m, cfg, gw, test::fake_asset);
  // Live latencies differ between calls; everything else must match.
  ASSERT_EQ(sweep.at(4).results.size(), direct.results.size());
  for (std::size_t i = 0; i < direct.results.size(); ++i) {
    auto a = sweep.at(4).results[i];
    a.latency_s = direct.results[i].latency_s;
    EXPECT_EQ(a, direct.results[i]);
  }
  EXPECT_EQ(sweep.at(4).aggregates, direct.aggregates);
  EXPECT_EQ(sweep.at(4).config, direct.config);
  EXPECT_THROW(frames_sweep(m, cfg, {}, gw, test::fake_asset), gateway::ConfigError);
  EXPECT_THROW(frames_sweep(m, cfg, {0}, gw, test::fake_asset), gateway::ConfigError);
}

TEST(Serialization, RunRoundTrip) {
  const auto m = test::synthetic_manifest(9);
  gateway::Gateway gw(test::scripted_options(std::make_shared<test::ScriptedTransport>(answer_sheet(m, {"q002", "q004"}))));
  const auto run = run_eval(m, config(), gw, test::fake_asset);
  test::TempDir dir;
  save_run(run, dir / "run.json");
  const auto back = load_run(dir / "run.json");
  EXPECT_EQ(back.results, run.results);
  EXPECT_EQ(back.aggregates, run.aggregates);
  EXPECT_EQ(back.manifest_fingerprint, run.manifest_fingerprint);
  EXPECT_EQ(nlohmann::json(back.config), nlohmann::json(run.config));
  EXPECT_EQ(back.config.at("model").at("model"), "vlm");
}

TEST(Fingerprint, OrderInsensitiveContentSensitive) {
  auto m = test::synthetic_manifest(5);
  const auto fp = manifest_fingerprint(m);
  std::reverse(m.items.begin(), m.items.end());
  EXPECT_EQ(manifest_fingerprint(m), fp);
  m.items[0].answer_index = (m.items[0].answer_index + 1) % 4;
  EXPECT_NE(manifest_fingerprint(m), fp);
}
