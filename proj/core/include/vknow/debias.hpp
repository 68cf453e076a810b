#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vknow/common.hpp"
#include "vknow/corpus.hpp"
#include "vknow/gateway.hpp"
#include "vknow/media.hpp"
#include "vknow/review.hpp"

namespace vknow::debias {

class ZeroVector : public Error {
 public:
  ZeroVector() : Error("cosine similarity of a zero vector is undefined") {}
};

class RewriteRejected : public Error {
 public:
  using Error::Error;
};

inline constexpr std::string_view kDefaultBlindPrompt =
    "Answer the following multiple-choice question about a video. You cannot see the video. "
    "Even if you believe the visual content is required, you must still pick the most likely option.\n\n"
    "Question: {question}\n"
    "{options}\n\n"
    "Reply with the letter of your choice only.";

inline constexpr std::string_view kDefaultRewritePrompt =
    "You improve multiple-choice questions about videos. Rewrite the incorrect options so that each is "
    "semantically plausible yet subtly incorrect. Keep the correct option exactly as it is and at the same "
    "position, and keep the number of options unchanged.\n\n"
    "Question: {question}\n"
    "Options:\n{options}\n"
    "Correct option: {answer_letter}. {answer}\n\n"
    "Return only a JSON array of strings with all {n_options} options in order.";

struct DebiasConfig {
  double sim_threshold = 0.3;
  int n_trials = 10;
  int trial_pass_count = 6;  // correct answers out of n_trials that flag a model
  int model_quorum = 2;
  std::size_t panel_size = 3;
  std::vector<gateway::EndpointConfig> panel;
  gateway::EndpointConfig embedder;
  gateway::EndpointConfig rewriter;
  std::string blind_prompt{kDefaultBlindPrompt};
  std::string rewrite_prompt{kDefaultRewritePrompt};
  int rewrite_attempts = 3;
  /// Compare per transcript segment (max similarity) instead of the whole transcript.
  bool per_segment = false;
  /// Let world-centric items bypass the blind-answer stage.
  bool skip_world_centric_stage2 = false;
  std::size_t workers = 8;

  /// Numeric invariants only; endpoints are checked when a stage uses them.
  void validate() const;
};

/// Cosine of the L2-normalized vectors, clamped to [-1, 1].
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

struct FilterVerdict {
  std::string item_id;
  corpus::Stage stage = corpus::Stage::audio_filter;
  corpus::Decision decision = corpus::Decision::kept;
  std::optional<double> similarity;         // stage I
  std::vector<int> per_model_correct_counts;  // stage II
  int flagged_models = 0;                   // stage II
  bool skipped = false;                     // stage II bypass
};

struct StageResult {
  corpus::Manifest kept;
  std::vector<corpus::QAItem> discarded;
  std::vector<FilterVerdict> verdicts;  // sorted by item id
};

/// Transcripts keyed by corpus::video_identity of each item's video.
using TranscriptMap = std::map<std::string, media::Transcript>;

/// Transcribes every distinct video of the manifest through the gateway.
TranscriptMap collect_transcripts(const corpus::Manifest& items, gateway::Gateway& gw,
                                  const gateway::EndpointConfig& transcriber,
                                  const std::function<gateway::AudioSource(const std::string& video)>& audio,
                                  std::size_t workers = 8);

/// Stage I: discard items whose transcript is semantically close to the gold
/// answer (similarity strictly above the threshold).
StageResult stage1_audio_filter(const corpus::Manifest& items, const TranscriptMap& transcripts,
                                const DebiasConfig& cfg, gateway::Gateway& gw, const Clock& clock);

/// Stage I decision rule on its own.
inline bool stage1_discards(double similarity, double threshold) { return similarity > threshold; }

std::vector<gateway::Message> blind_messages(const corpus::QAItem& item, const std::string& prompt_template);

/// Number of the n text-only completions whose extracted choice is the gold
/// option. Unparseable completions count as incorrect.
int blind_answer_trials(const corpus::QAItem& item, const gateway::EndpointConfig& endpoint, int n,
                        gateway::Gateway& gw, const std::string& prompt_template = std::string(kDefaultBlindPrompt));

struct Stage2Decision {
  int flagged_models = 0;
  bool discard = false;
};

/// A model flags the item when its correct count reaches trial_pass_count;
/// the item is discarded when at least model_quorum models flag it.
Stage2Decision stage2_decide(const std::vector<int>& correct_counts, int trial_pass_count, int model_quorum);

StageResult stage2_language_filter(const corpus::Manifest& items, const DebiasConfig& cfg, gateway::Gateway& gw,
                                   const Clock& clock);

struct DistractorRewrite {
  std::string item_id;
  std::vector<std::string> old_options;
  std::vector<std::string> new_options;
  bool answer_preserved = false;
  bool accepted = false;
  int attempts = 0;
  std::string rejection;  // last rejection reason, empty when accepted
};

/// Parses a rewriter reply into an option list: a JSON array of strings, or
/// failing that, enumerated lines ("A. ...", "1) ...", "- ...").
std::vector<std::string> parse_rewrite_reply(std::string_view reply);

/// Throws RewriteRejected naming the violated constraint.
void check_rewrite(const corpus::QAItem& item, const std::vector<std::string>& new_options);

struct Stage3Result {
  corpus::Manifest rewritten;
  std::vector<DistractorRewrite> rewrites;  // sorted by item id
};

Stage3Result stage3_enhance_distractors(const corpus::Manifest& items, const DebiasConfig& cfg,
                                        gateway::Gateway& gw, const Clock& clock);

struct StageCount {
  std::string stage;
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t discarded = 0;
};

struct PipelineReport {
  std::vector<StageCount> counts;
  std::vector<FilterVerdict> stage1;
  std::vector<FilterVerdict> stage2;
  std::vector<DistractorRewrite> stage3;
  std::optional<std::uint64_t> seed;
};

nlohmann::json to_json(const FilterVerdict& v);
nlohmann::json to_json(const DistractorRewrite& r);
nlohmann::json to_json(const PipelineReport& r);

class PipelineError : public Error {
 public:
  PipelineError(const std::string& what, PipelineReport partial)
      : Error(what), partial_(std::move(partial)) {}
  const PipelineReport& partial_report() const noexcept { return partial_; }

 private:
  PipelineReport partial_;
};

struct PipelineResult {
  corpus::Manifest final_manifest;
  PipelineReport report;
  std::vector<review::ReviewTask> review_queue;
};

/// Stage I -> II -> III -> option shuffle -> review queue.
PipelineResult run_pipeline(const corpus::Manifest& manifest, const TranscriptMap& transcripts,
                            const DebiasConfig& cfg, gateway::Gateway& gw, std::uint64_t seed, const Clock& clock);

}  // namespace vknow::debias
