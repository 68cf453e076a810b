#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "vknow/common.hpp"

namespace vknow::corpus {

/// The eight visual-knowledge task dimensions, in benchmark column order.
enum class Task { IP, OA, OM, SA, EA, MS, SR, SI };
enum class TaskGroup { world_centric, human_centric };

inline constexpr std::array<Task, 8> kAllTasks = {Task::IP, Task::OA, Task::OM, Task::SA,
                                                   Task::EA, Task::MS, Task::SR, Task::SI};

constexpr TaskGroup group_of(Task t) noexcept {
  switch (t) {
    case Task::IP:
    case Task::OA:
    case Task::OM:
    case Task::SA:
      return TaskGroup::world_centric;
    default:
      return TaskGroup::human_centric;
  }
}

std::string_view to_string(Task t) noexcept;
std::string_view to_string(TaskGroup g) noexcept;
Task parse_task(std::string_view s);
TaskGroup parse_task_group(std::string_view s);
constexpr std::size_t index_of(Task t) noexcept { return static_cast<std::size_t>(t); }

enum class Stage { ingest, audio_filter, language_filter, distractor_rewrite, shuffle, human_review, dedup };
enum class Decision { kept, discarded, modified };

std::string_view to_string(Stage s) noexcept;
std::string_view to_string(Decision d) noexcept;
Stage parse_stage(std::string_view s);
Decision parse_decision(std::string_view s);

using EvidenceValue = std::variant<std::int64_t, double, std::string>;
using Evidence = std::map<std::string, EvidenceValue>;

struct StageRecord {
  Stage stage = Stage::ingest;
  Decision decision = Decision::kept;
  Evidence evidence;
  Timestamp timestamp;

  bool operator==(const StageRecord&) const = default;
};

inline constexpr std::size_t kMinOptions = 2;
inline constexpr std::size_t kMaxOptions = 6;

struct QAItem {
  std::string id;
  std::string video;  // URI or path; see video_identity()
  Task dimension = Task::IP;
  std::string question;
  std::vector<std::string> options;
  std::size_t answer_index = 0;
  std::vector<StageRecord> provenance;

  TaskGroup group() const noexcept { return group_of(dimension); }
  const std::string& gold() const { return options.at(answer_index); }

  bool operator==(const QAItem&) const = default;
};

inline constexpr std::string_view kSchemaVersion = "vknow.manifest/1";
inline constexpr std::string_view kShufflePrng = "mt19937_64(seed^fnv1a64(id))+fisher-yates/rejection";

struct Manifest {
  std::string schema_version{kSchemaVersion};
  std::optional<std::uint64_t> seed;
  std::string prng{kShufflePrng};
  std::vector<QAItem> items;

  bool operator==(const Manifest&) const = default;
};

/// Throws ValidationError on the first violated QAItem invariant.
void validate(const QAItem& item);
/// Validates every item plus manifest-level id uniqueness.
void validate(const Manifest& m);

/// Identity of the source video used for deduplication. A `#sha256=<hex>`
/// fragment wins when present; otherwise the URI with any `file://` scheme
/// stripped.
std::string video_identity(std::string_view video);

/// Lowercased, whitespace-collapsed question text.
std::string normalize_question(std::string_view q);

// JSON encoding of the line-delimited manifest format.
nlohmann::ordered_json to_json(const QAItem& item);
QAItem item_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const StageRecord& r);
StageRecord stage_record_from_json(const nlohmann::json& j);

Manifest parse_manifest(std::string_view text);
std::string serialize_manifest(const Manifest& m);

Manifest load_manifest(const std::filesystem::path& path);
/// Validates before writing; the write is atomic.
void save_manifest(const Manifest& m, const std::filesystem::path& path);

struct DedupResult {
  Manifest kept;
  std::vector<QAItem> removed;  // each carries a trailing {dedup, discarded} record
};

/// Removes from `train` every item whose (video identity, normalized question)
/// appears in `holdout`.
DedupResult dedup_items(const Manifest& train, const Manifest& holdout, const Clock& clock);

/// Deterministic permutation of the options keyed by (seed, item.id). The
/// gold option string is tracked and a {shuffle, modified} record appended.
QAItem shuffle_options(const QAItem& item, std::uint64_t seed, const Clock& clock);

/// The raw permutation used by shuffle_options: result[k] = old index placed
/// at new position k.
std::vector<std::size_t> shuffle_permutation(std::size_t n, std::uint64_t seed, std::string_view item_id);

}  // namespace vknow::corpus
