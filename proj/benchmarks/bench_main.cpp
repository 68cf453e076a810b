#include <benchmark/benchmark.h>

#include <random>

#include "vknow/analytics.hpp"
#include "vknow/corpus.hpp"
#include "vknow/debias.hpp"
#include "vknow/rewards.hpp"

using namespace vknow;

namespace {

std::vector<double> gaussian(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

corpus::Manifest manifest(std::size_t n) {
  corpus::Manifest m;
  for (std::size_t i = 0; i < n; ++i) {
    corpus::QAItem it;
    it.id = "item" + std::to_string(i);
    it.video = "videos/" + it.id + ".mp4";
    it.dimension = corpus::kAllTasks[i % 8];
    it.question = "What does the person in clip " + it.id + " intend to do next?";
    it.options = {"pick up the cup", "open the door", "sit down", "wave at someone"};
    it.answer_index = i % 4;
    m.items.push_back(std::move(it));
  }
  return m;
}

}  // namespace

static void BM_ParseSta(benchmark::State& state) {
  const std::string think(state.range(0), 'x');
  const std::string raw = "<see>a person walks toward the door holding keys</see>\n<think>" + think +
                          "</think>\n<answer>B</answer>";
  for (auto _ : state) benchmark::DoNotOptimize(rewards::parse_sta(raw));
  state.SetBytesProcessed(state.iterations() * raw.size());
}
BENCHMARK(BM_ParseSta)->Range(64, 16 << 10);

static void BM_ExtractChoice(benchmark::State& state) {
  const std::vector<std::string> options = {"pick up the cup", "open the door", "sit down", "wave at someone"};
  const std::vector<std::string> replies = {"B", "The answer is (C).", "I think they will open the door.",
                                            "Probably\nD. wave at someone", "none of these"};
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(rewards::extract_choice(replies[i++ % replies.size()], options));
}
BENCHMARK(BM_ExtractChoice);

static void BM_GroupAdvantages(benchmark::State& state) {
  const auto r = gaussian(state.range(0), 1);
  for (auto _ : state) benchmark::DoNotOptimize(rewards::group_advantages(r));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GroupAdvantages)->RangeMultiplier(2)->Range(2, 64);

static void BM_Cosine(benchmark::State& state) {
  const auto a = gaussian(state.range(0), 2), b = gaussian(state.range(0), 3);
  for (auto _ : state) benchmark::DoNotOptimize(debias::cosine_similarity(a, b));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Cosine)->Range(256, 4096);

static void BM_Pearson(benchmark::State& state) {
  const auto a = gaussian(state.range(0), 4), b = gaussian(state.range(0), 5);
  for (auto _ : state) benchmark::DoNotOptimize(analytics::pearson(a, b));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Pearson)->Range(16, 1 << 14);

static void BM_CorrelationMatrix(benchmark::State& state) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(20, 90);
  analytics::AccuracyMatrix m;
  for (int r = 0; r < state.range(0); ++r) {
    std::array<std::optional<double>, 8> row;
    for (auto& c : row) c = u(rng);
    m.add("model" + std::to_string(r), row);
  }
  for (auto _ : state) benchmark::DoNotOptimize(analytics::correlation_matrix(m));
}
BENCHMARK(BM_CorrelationMatrix)->Arg(23)->Arg(500);

static void BM_ManifestRoundTrip(benchmark::State& state) {
  const auto m = manifest(state.range(0));
  const auto text = corpus::serialize_manifest(m);
  for (auto _ : state) benchmark::DoNotOptimize(corpus::parse_manifest(corpus::serialize_manifest(m)));
  state.SetBytesProcessed(state.iterations() * text.size() * 2);
}
BENCHMARK(BM_ManifestRoundTrip)->Arg(100)->Arg(5000);

static void BM_ShuffleOptions(benchmark::State& state) {
  const auto m = manifest(256);
  const FixedClock clock;
  std::uint64_t seed = 0;
  for (auto _ : state) {
    for (const auto& it : m.items) benchmark::DoNotOptimize(corpus::shuffle_options(it, seed, clock));
    ++seed;
  }
  state.SetItemsProcessed(state.iterations() * m.items.size());
}
BENCHMARK(BM_ShuffleOptions);

BENCHMARK_MAIN();
