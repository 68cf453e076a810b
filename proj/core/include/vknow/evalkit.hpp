#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vknow/coldstart.hpp"
#include "vknow/corpus.hpp"
#include "vknow/gateway.hpp"
#include "vknow/media.hpp"
#include "vknow/rewards.hpp"

namespace vknow::evalkit {

enum class PromptMode { vanilla, sta };
std::string_view to_string(PromptMode m) noexcept;
PromptMode parse_prompt_mode(std::string_view s);

inline constexpr std::string_view kVanillaPrompt =
    "Watch the video and answer the multiple-choice question.\n"
    "Question: {question}\n"
    "{options}\n"
    "Reply with the letter of the best option only.";

struct EvalConfig {
  gateway::EndpointConfig model;  // chat_vision; model.sampling is overridden by `sampling`
  std::size_t n_frames = 32;
  PromptMode prompt_mode = PromptMode::vanilla;
  gateway::SamplingParams sampling = gateway::SamplingParams::with(0.1, 0.001);
  std::string resolution_budget;
  std::string vanilla_prompt{kVanillaPrompt};
  std::string sta_prompt{coldstart::kDefaultStaPrompt};
  rewards::StaTemplate tmpl;
  std::size_t workers = 8;

  void validate() const;
};

nlohmann::ordered_json to_json(const EvalConfig& cfg);

struct ItemResult {
  std::string item_id;
  std::string raw;
  std::optional<std::size_t> predicted;
  bool correct = false;
  double latency_s = 0;

  bool operator==(const ItemResult&) const = default;
};

/// Accuracies are raw percentages in [0, 100]; rounding happens at render
/// time only. A task with no items has no entry.
struct AggregateReport {
  std::map<corpus::Task, double> per_task;
  std::map<corpus::Task, std::size_t> counts;
  std::optional<double> overall, wc, hc;            // item-weighted
  std::optional<double> wc_macro, hc_macro;         // unweighted task means
  std::optional<double> overall_macro;

  bool operator==(const AggregateReport&) const = default;
};

struct EvalRun {
  nlohmann::ordered_json config;
  std::string manifest_fingerprint;
  std::vector<ItemResult> results;  // sorted by item id
  AggregateReport aggregates;
};

/// Half-up rounding to one decimal, for display.
double round1(double pct);

/// sha256 over the sorted (id, answer_index, dimension, options) tuples.
std::string manifest_fingerprint(const corpus::Manifest& m);

std::string build_prompt(const corpus::QAItem& item, const EvalConfig& cfg);
std::optional<std::size_t> extract_prediction(const std::string& reply, const corpus::QAItem& item,
                                              const EvalConfig& cfg);

using AssetLookup = std::function<media::VideoAsset(const std::string& video)>;

EvalRun run_eval(const corpus::Manifest& manifest, const EvalConfig& cfg, gateway::Gateway& gw,
                 const AssetLookup& assets);

AggregateReport aggregate(const std::vector<ItemResult>& results, const corpus::Manifest& manifest);

/// Expected accuracy of a uniform guesser.
AggregateReport random_baseline(const corpus::Manifest& manifest);

std::map<std::size_t, EvalRun> frames_sweep(const corpus::Manifest& manifest, const EvalConfig& base,
                                            const std::vector<std::size_t>& frames, gateway::Gateway& gw,
                                            const AssetLookup& assets);

/// Per-task accuracy (rounded) by frame count, as CSV.
std::string sweep_table(const std::map<std::size_t, EvalRun>& runs);

nlohmann::ordered_json to_json(const AggregateReport& a);
AggregateReport aggregate_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const EvalRun& run);
EvalRun run_from_json(const nlohmann::json& j);
EvalRun load_run(const std::filesystem::path& path);
void save_run(const EvalRun& run, const std::filesystem::path& path);

}  // namespace vknow::evalkit
