#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vknow/common.hpp"
#include "vknow/corpus.hpp"

namespace vknow::review {

enum class Status { pending, accepted, rejected, edited };
std::string_view to_string(Status s) noexcept;
Status parse_status(std::string_view s);

struct ReviewTask {
  corpus::QAItem item;
  std::string video_url;
  Status status = Status::pending;
  std::string editor_note;

  bool operator==(const ReviewTask&) const = default;
};

struct ReviewDecision {
  std::string item_id;
  Status action = Status::accepted;  // never pending
  std::optional<corpus::QAItem> replacement;  // present iff action == edited
  std::string reviewer;
  std::string note;
  Timestamp timestamp;

  bool operator==(const ReviewDecision&) const = default;
};

class UnknownItemId : public Error {
 public:
  explicit UnknownItemId(const std::string& id) : Error("decision references unknown item '" + id + "'"), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

/// Checks action/replacement consistency and validates any replacement item.
/// Throws ValidationError.
void validate(const ReviewDecision& d);

nlohmann::ordered_json to_json(const ReviewDecision& d);
/// `fallback_time` fills a missing timestamp.
ReviewDecision decision_from_json(const nlohmann::json& j, std::optional<Timestamp> fallback_time = std::nullopt);
nlohmann::ordered_json to_json(const ReviewTask& t);

/// One pending task per item, ordered by id.
std::vector<ReviewTask> build_queue(const corpus::Manifest& manifest, const std::string& video_url_prefix = "/video/");

/// Append-only line-delimited decision log.
class DecisionLog {
 public:
  explicit DecisionLog(std::filesystem::path path);

  std::vector<ReviewDecision> load() const;
  void append(const ReviewDecision& d);
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

std::vector<ReviewDecision> load_decisions(const std::filesystem::path& path);

struct DecisionConflict {
  std::string item_id;
  ReviewDecision winner;
  ReviewDecision loser;
};

struct ApplyResult {
  /// Decided items only: accepted items plus edited replacements.
  corpus::Manifest final_manifest;
  /// final_manifest plus still-pending items, in input order.
  corpus::Manifest working_manifest;
  std::vector<std::string> pending_ids;
  std::vector<DecisionConflict> conflicts;
};

/// Folds the decision log over the manifest. Per item the latest-timestamp
/// decision wins (ties: later in the log). A {human_review} stage record is
/// appended with the winning decision's timestamp, so replaying the same log
/// is deterministic and idempotent.
ApplyResult apply_decisions(const corpus::Manifest& manifest, const std::vector<ReviewDecision>& decisions);

/// Queue state after folding decisions, as served by the review API.
std::vector<ReviewTask> current_state(const std::vector<ReviewTask>& queue,
                                      const std::vector<ReviewDecision>& decisions);

}  // namespace vknow::review
