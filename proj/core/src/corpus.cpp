#include "vknow/corpus.hpp"

#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

namespace vknow::corpus {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, 8> kTaskNames = {"IP", "OA", "OM", "SA", "EA", "MS", "SR", "SI"};
constexpr std::array<std::string_view, 7> kStageNames = {
    "ingest", "audio_filter", "language_filter", "distractor_rewrite", "shuffle", "human_review", "dedup"};
constexpr std::array<std::string_view, 3> kDecisionNames = {"kept", "discarded", "modified"};

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::string_view, N>& names, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<Enum>(i);
  }
  throw Error(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

}  // namespace

std::string_view to_string(Task t) noexcept { return kTaskNames[index_of(t)]; }
std::string_view to_string(TaskGroup g) noexcept {
  return g == TaskGroup::world_centric ? "world_centric" : "human_centric";
}
Task parse_task(std::string_view s) { return parse_enum<Task>(s, kTaskNames, "task dimension"); }
TaskGroup parse_task_group(std::string_view s) {
  if (s == "world_centric") return TaskGroup::world_centric;
  if (s == "human_centric") return TaskGroup::human_centric;
  throw Error("unknown task group '" + std::string(s) + "'");
}

std::string_view to_string(Stage s) noexcept { return kStageNames[static_cast<std::size_t>(s)]; }
std::string_view to_string(Decision d) noexcept { return kDecisionNames[static_cast<std::size_t>(d)]; }
Stage parse_stage(std::string_view s) { return parse_enum<Stage>(s, kStageNames, "stage"); }
Decision parse_decision(std::string_view s) { return parse_enum<Decision>(s, kDecisionNames, "decision"); }

void validate(const QAItem& item) {
  const std::string& id = item.id;
  if (id.empty()) throw ValidationError(id, "id must be non-empty");
  if (item.video.empty()) throw ValidationError(id, "video reference must be non-empty");
  if (trim(item.question).empty()) throw ValidationError(id, "question must be non-empty");
  if (item.options.size() < kMinOptions || item.options.size() > kMaxOptions) {
    throw ValidationError(id, "option count " + std::to_string(item.options.size()) + " outside [" +
                                  std::to_string(kMinOptions) + ", " + std::to_string(kMaxOptions) + "]");
  }
  if (item.answer_index >= item.options.size()) {
    throw ValidationError(id, "answer_index " + std::to_string(item.answer_index) + " out of range [0, " +
                                  std::to_string(item.options.size()) + ")");
  }
  std::set<std::string> seen;
  for (const auto& opt : item.options) {
    auto norm = normalize_whitespace(opt);
    if (norm.empty()) throw ValidationError(id, "options must be non-empty");
    if (!seen.insert(std::move(norm)).second) {
      throw ValidationError(id, "options must be pairwise distinct: '" + opt + "'");
    }
  }
}

void validate(const Manifest& m) {
  std::unordered_set<std::string> ids;
  for (const auto& item : m.items) {
    validate(item);
    if (!ids.insert(item.id).second) throw ValidationError(item.id, "duplicate item id");
  }
}

std::string video_identity(std::string_view video) {
  constexpr std::string_view kHashTag = "#sha256=";
  if (auto pos = video.find(kHashTag); pos != std::string_view::npos) {
    return "sha256:" + to_lower_ascii(video.substr(pos + kHashTag.size()));
  }
  constexpr std::string_view kFile = "file://";
  if (video.substr(0, kFile.size()) == kFile) video.remove_prefix(kFile.size());
  return std::string(video);
}

std::string normalize_question(std::string_view q) { return to_lower_ascii(normalize_whitespace(q)); }

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

ojson to_json(const StageRecord& r) {
  ojson evidence = ojson::object();
  for (const auto& [k, v] : r.evidence) {
    std::visit([&](const auto& x) { evidence[k] = x; }, v);
  }
  ojson j;
  j["stage"] = to_string(r.stage);
  j["decision"] = to_string(r.decision);
  j["evidence"] = std::move(evidence);
  j["timestamp"] = format_timestamp(r.timestamp);
  return j;
}

StageRecord stage_record_from_json(const json& j) {
  StageRecord r;
  r.stage = parse_stage(j.at("stage").get<std::string>());
  r.decision = parse_decision(j.at("decision").get<std::string>());
  for (const auto& [k, v] : j.at("evidence").items()) {
    if (v.is_number_integer()) {
      r.evidence[k] = v.get<std::int64_t>();
    } else if (v.is_number()) {
      r.evidence[k] = v.get<double>();
    } else if (v.is_string()) {
      r.evidence[k] = v.get<std::string>();
    } else {
      throw Error("evidence '" + k + "' must be a number or string");
    }
  }
  r.timestamp = parse_timestamp(j.at("timestamp").get<std::string>());
  return r;
}

ojson to_json(const QAItem& item) {
  ojson j;
  j["id"] = item.id;
  j["video"] = item.video;
  j["dimension"] = to_string(item.dimension);
  j["group"] = to_string(item.group());
  j["question"] = item.question;
  j["options"] = item.options;
  j["answer_index"] = item.answer_index;
  ojson prov = ojson::array();
  for (const auto& r : item.provenance) prov.push_back(to_json(r));
  j["provenance"] = std::move(prov);
  return j;
}

QAItem item_from_json(const json& j) {
  if (!j.is_object()) throw Error("record must be a JSON object");
  QAItem item;
  item.id = j.at("id").get<std::string>();
  item.video = j.at("video").get<std::string>();
  item.dimension = parse_task(j.at("dimension").get<std::string>());
  if (j.contains("group") && parse_task_group(j.at("group").get<std::string>()) != item.group()) {
    throw ValidationError(item.id, "group does not match dimension " + std::string(to_string(item.dimension)));
  }
  item.question = j.at("question").get<std::string>();
  item.options = j.at("options").get<std::vector<std::string>>();
  const auto& ai = j.at("answer_index");
  if (!ai.is_number_integer() || ai.get<std::int64_t>() < 0) {
    throw ValidationError(item.id, "answer_index must be a non-negative integer");
  }
  item.answer_index = ai.get<std::size_t>();
  if (j.contains("provenance")) {
    for (const auto& r : j.at("provenance")) item.provenance.push_back(stage_record_from_json(r));
  }
  return item;
}

Manifest parse_manifest(std::string_view text) {
  Manifest m;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool first_record = true;
  std::unordered_set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(lineno, e.what());
    }
    if (first_record && j.is_object() && j.contains("schema_version")) {
      first_record = false;
      try {
        m.schema_version = j.at("schema_version").get<std::string>();
        if (j.contains("seed") && !j.at("seed").is_null()) m.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("prng")) m.prng = j.at("prng").get<std::string>();
      } catch (const json::exception& e) {
        throw ParseError(lineno, std::string("bad header: ") + e.what());
      }
      if (m.schema_version != kSchemaVersion) {
        throw ParseError(lineno, "unsupported schema_version '" + m.schema_version + "'");
      }
      continue;
    }
    first_record = false;
    QAItem item;
    try {
      item = item_from_json(j);
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(lineno, e.what());
    }
    validate(item);
    if (!ids.insert(item.id).second) throw ValidationError(item.id, "duplicate item id");
    m.items.push_back(std::move(item));
  }
  return m;
}

std::string serialize_manifest(const Manifest& m) {
  validate(m);
  ojson header;
  header["schema_version"] = m.schema_version;
  header["seed"] = m.seed ? ojson(*m.seed) : ojson(nullptr);
  header["prng"] = m.prng;
  std::string out = header.dump() + "\n";
  for (const auto& item : m.items) {
    out += to_json(item).dump();
    out += '\n';
  }
  return out;
}

Manifest load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("manifest not found: " + path.string());
  return parse_manifest(read_file(path));
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_manifest(m));
}

// ---------------------------------------------------------------------------
// Dedup and shuffle
// ---------------------------------------------------------------------------

DedupResult dedup_items(const Manifest& train, const Manifest& holdout, const Clock& clock) {
  validate(train);
  validate(holdout);
  std::set<std::pair<std::string, std::string>> holdout_keys;
  for (const auto& item : holdout.items) {
    holdout_keys.emplace(video_identity(item.video), normalize_question(item.question));
  }
  DedupResult out;
  out.kept.schema_version = train.schema_version;
  out.kept.seed = train.seed;
  out.kept.prng = train.prng;
  for (const auto& item : train.items) {
    if (holdout_keys.contains({video_identity(item.video), normalize_question(item.question)})) {
      QAItem removed = item;
      removed.provenance.push_back(StageRecord{Stage::dedup, Decision::discarded,
                                               {{"holdout_overlap", std::int64_t{1}}}, clock.now()});
      out.removed.push_back(std::move(removed));
    } else {
      out.kept.items.push_back(item);
    }
  }
  return out;
}

std::vector<std::size_t> shuffle_permutation(std::size_t n, std::uint64_t seed, std::string_view item_id) {
  std::mt19937_64 rng(seed ^ fnv1a64(item_id));
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  // Fisher-Yates with rejection sampling; std::uniform_int_distribution is
  // implementation-defined, so bounded draws are done by hand.
  for (std::size_t i = n; i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                (std::numeric_limits<std::uint64_t>::max() % bound);
    std::uint64_t r;
    do {
      r = rng();
    } while (r >= limit);
    std::swap(perm[i - 1], perm[static_cast<std::size_t>(r % bound)]);
  }
  return perm;
}

QAItem shuffle_options(const QAItem& item, std::uint64_t seed, const Clock& clock) {
  validate(item);
  const auto perm = shuffle_permutation(item.options.size(), seed, item.id);
  QAItem out = item;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    out.options[k] = item.options[perm[k]];
    if (perm[k] == item.answer_index) out.answer_index = k;
  }
  out.provenance.push_back(StageRecord{Stage::shuffle,
                                       Decision::modified,
                                       {{"from_answer_index", static_cast<std::int64_t>(item.answer_index)},
                                        {"to_answer_index", static_cast<std::int64_t>(out.answer_index)}},
                                       clock.now()});
  return out;
}

}  // namespace vknow::corpus
