#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vknow/corpus.hpp"
#include "vknow/gateway.hpp"
#include "vknow/media.hpp"
#include "vknow/rewards.hpp"

namespace vknow::coldstart {

inline constexpr std::string_view kDefaultStaPrompt =
    "Watch the video and answer the multiple-choice question.\n"
    "First describe the visual content relevant to the question inside <see></see>, then reason inside "
    "<think></think>, and finally give the letter of the correct option inside <answer></answer>.\n\n"
    "Question: {question}\n"
    "{options}";

struct ColdStartCandidate {
  std::string item_id;
  int sample_index = 0;
  std::string raw;
  rewards::StaResponse parsed;
  bool correct = false;
  bool well_formed = false;
};

struct ColdStartRecord {
  std::string item_id;
  std::string see;
  std::string think;
  std::string answer;
  bool verifier_confirmed = false;
};

struct GeneratorConfig {
  gateway::EndpointConfig endpoint;  // chat_vision
  std::string prompt_template{kDefaultStaPrompt};
  int k = 1;  // generations per item
  std::size_t n_frames = 16;
  std::string resolution_budget;
  rewards::StaTemplate tmpl;
  std::size_t workers = 8;
};

/// The user message sent to the generator (and reused as the SFT prompt).
std::string sta_prompt(const corpus::QAItem& item, const std::string& prompt_template);

/// Resolves a video reference to its probed asset.
using AssetLookup = std::function<media::VideoAsset(const std::string& video)>;

/// k candidates per item, ordered by (item id, sample index).
std::vector<ColdStartCandidate> generate_candidates(const corpus::Manifest& manifest, const GeneratorConfig& gen,
                                                    gateway::Gateway& gw, const AssetLookup& assets);

/// Keeps candidates that are both correct and well formed.
std::vector<ColdStartCandidate> filter_correct_and_formatted(const std::vector<ColdStartCandidate>& cands);

/// Keeps candidates whose see section alone lets the verifier answer
/// correctly. Output ordered by item id.
std::vector<ColdStartRecord> filter_description_sufficient(const std::vector<ColdStartCandidate>& cands,
                                                           const corpus::Manifest& manifest,
                                                           const rewards::VerifierConfig& vcfg,
                                                           gateway::Gateway& gw, std::size_t workers = 8);

inline constexpr std::string_view kSftSchema = "vknow.sft/1";

/// Header line plus one {"item_id", "prompt", "target"} record per line.
/// Every target is re-parsed before writing and must be well formed.
void emit_dataset(const std::vector<ColdStartRecord>& records, const corpus::Manifest& manifest,
                  const std::filesystem::path& path, const std::string& prompt_template = std::string(kDefaultStaPrompt),
                  const rewards::StaTemplate& tmpl = {});

}  // namespace vknow::coldstart
