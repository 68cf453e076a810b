#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vknow/common.hpp"
#include "vknow/corpus.hpp"
#include "vknow/gateway.hpp"

namespace vknow::rewards {

class GroupTooSmall : public Error {
 public:
  explicit GroupTooSmall(std::size_t size)
      : Error("group has " + std::to_string(size) + " completion(s); at least 2 are required") {}
};

class NonFinite : public Error {
 public:
  using Error::Error;
};

class UnknownItem : public Error {
 public:
  explicit UnknownItem(const std::string& id) : Error("unknown item id '" + id + "'"), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

/// Tag names of the three sections, without angle brackets.
struct StaTemplate {
  std::string see = "see";
  std::string think = "think";
  std::string answer = "answer";
};

struct StaResponse {
  std::string see;
  std::string think;
  std::string answer;
  bool well_formed = false;
  std::string raw;

  bool operator==(const StaResponse&) const = default;
};

/// Strict parse: the whole string must be <see>..</see><think>..</think>
/// <answer>..</answer> with only whitespace between or around the tags, no
/// nested section tags, and every section containing non-whitespace text.
/// Ill-formed input still gets a best-effort extraction of each section.
StaResponse parse_sta(std::string_view raw, const StaTemplate& tmpl = {});

/// Canonical rendering; parse_sta(render_sta(r)) reproduces a well-formed r.
std::string render_sta(const StaResponse& r, const StaTemplate& tmpl = {});

int format_reward(const StaResponse& resp);

/// Maps free text to an option index. Cascade, first unique match wins:
///   1. the whole reply is a single option letter, e.g. "B", "(b)", "C."
///   2. "answer is X" / "answer: X"
///   3. "(X)"
///   4. "X." / "X)" / "X:" at the start of a line
///   5. a standalone upper-case option letter token
///   6. exactly one option's text contained in the reply (case-insensitive)
/// Letters outside the option range are ignored. A step that matches more
/// than one distinct option is ambiguous and falls through.
std::optional<std::size_t> extract_choice(std::string_view text, const std::vector<std::string>& options);

int accuracy_reward(const StaResponse& resp, std::size_t gold_index, const std::vector<std::string>& options);

struct RewardWeights {
  double lambda = 0.1;
  void validate() const;
};

double total_reward(int r_f, int r_a, int r_v, const RewardWeights& w);

inline constexpr double kAdvantageEpsilon = 1e-8;

/// A_i = (R_i - mean) / (population std + 1e-8); all-equal groups give zeros.
std::vector<double> group_advantages(const std::vector<double>& rewards);

inline constexpr std::string_view kDefaultVerifierPrompt =
    "You are given a textual description of a video instead of the video itself.\n"
    "Description: {description}\n\n"
    "Question: {question}\n"
    "{options}\n"
    "Using only the description, answer with the letter of the correct option.";

struct VerifierConfig {
  gateway::EndpointConfig endpoint;
  std::string prompt_template{kDefaultVerifierPrompt};
  bool include_options = true;
  /// Map verifier gateway failures to r_v = 0 (logged) instead of failing.
  bool lenient = false;

  void validate() const;
};

/// "A. first\nB. second\n..." rendering used by every prompt.
std::string format_options(const std::vector<std::string>& options);
char option_letter(std::size_t index);

/// The exact messages sent to the verifier; only the see section and the
/// question (plus options) ever reach it.
std::vector<gateway::Message> verifier_messages(const StaResponse& resp, const corpus::QAItem& item,
                                                const VerifierConfig& vcfg);

int visual_knowledge_reward(const StaResponse& resp, const corpus::QAItem& item, const VerifierConfig& vcfg,
                            gateway::Gateway& gw);

struct RewardRecord {
  std::string item_id;
  int r_f = 0;
  int r_a = 0;
  int r_v = 0;
  double lambda = 0;
  double total = 0;
};

struct RewardGroup {
  std::string group_id;
  std::vector<RewardRecord> records;
  std::vector<double> advantages;
};

struct Completion {
  std::string group_id;
  std::string raw;
  std::string item_id;
};

/// Pass-through metadata for the external policy-gradient trainer. The
/// scoring code never uses these values.
struct TrainerMetadata {
  double kl_beta = 0.04;
  double clip_epsilon = 0.2;
  int num_generations = 8;
};

struct ScoringOptions {
  RewardWeights weights;
  StaTemplate tmpl;
  std::size_t workers = 8;
};

/// Groups are returned sorted by group_id; records keep input order within a
/// group.
std::vector<RewardGroup> score_batch(const std::vector<Completion>& completions, const corpus::Manifest& manifest,
                                     const VerifierConfig& vcfg, gateway::Gateway& gw,
                                     const ScoringOptions& opts = {});

nlohmann::json to_json(const RewardRecord& r);
nlohmann::json to_json(const RewardGroup& g);
Completion completion_from_json(const nlohmann::json& j);

}  // namespace vknow::rewards
