#include "vknow/review.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace vknow::review {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string_view to_string(Status s) noexcept {
  switch (s) {
    case Status::pending:
      return "pending";
    case Status::accepted:
      return "accepted";
    case Status::rejected:
      return "rejected";
    case Status::edited:
      return "edited";
  }
  return "?";
}

Status parse_status(std::string_view s) {
  if (s == "pending") return Status::pending;
  if (s == "accepted") return Status::accepted;
  if (s == "rejected") return Status::rejected;
  if (s == "edited") return Status::edited;
  throw Error("unknown review status '" + std::string(s) + "'");
}

void validate(const ReviewDecision& d) {
  if (d.item_id.empty()) throw ValidationError(d.item_id, "decision needs an item_id");
  if (d.action == Status::pending) throw ValidationError(d.item_id, "action must be accepted, rejected or edited");
  if (d.action == Status::edited) {
    if (!d.replacement) throw ValidationError(d.item_id, "edited decision needs a replacement item");
    if (d.replacement->id != d.item_id) {
      throw ValidationError(d.item_id, "replacement id '" + d.replacement->id + "' does not match");
    }
    corpus::validate(*d.replacement);
  } else if (d.replacement) {
    throw ValidationError(d.item_id, "replacement is only allowed for edited decisions");
  }
}

ojson to_json(const ReviewDecision& d) {
  ojson j;
  j["item_id"] = d.item_id;
  j["action"] = to_string(d.action);
  j["replacement"] = d.replacement ? corpus::to_json(*d.replacement) : ojson(nullptr);
  j["reviewer"] = d.reviewer;
  j["note"] = d.note;
  j["timestamp"] = format_timestamp(d.timestamp);
  return j;
}

ReviewDecision decision_from_json(const json& j, std::optional<Timestamp> fallback_time) {
  if (!j.is_object()) throw Error("decision must be a JSON object");
  ReviewDecision d;
  d.item_id = j.at("item_id").get<std::string>();
  d.action = parse_status(j.at("action").get<std::string>());
  if (j.contains("replacement") && !j.at("replacement").is_null()) {
    d.replacement = corpus::item_from_json(j.at("replacement"));
  }
  d.reviewer = j.value("reviewer", std::string());
  d.note = j.value("note", std::string());
  if (j.contains("timestamp") && !j.at("timestamp").is_null()) {
    d.timestamp = parse_timestamp(j.at("timestamp").get<std::string>());
  } else if (fallback_time) {
    d.timestamp = *fallback_time;
  } else {
    throw Error("decision for '" + d.item_id + "' has no timestamp");
  }
  return d;
}

ojson to_json(const ReviewTask& t) {
  ojson j;
  j["item"] = corpus::to_json(t.item);
  j["video_url"] = t.video_url;
  j["status"] = to_string(t.status);
  j["editor_note"] = t.editor_note;
  return j;
}

std::vector<ReviewTask> build_queue(const corpus::Manifest& manifest, const std::string& video_url_prefix) {
  std::vector<ReviewTask> queue;
  queue.reserve(manifest.items.size());
  for (const auto& item : manifest.items) queue.push_back({item, video_url_prefix + item.id, Status::pending, {}});
  std::sort(queue.begin(), queue.end(), [](const auto& a, const auto& b) { return a.item.id < b.item.id; });
  return queue;
}

// ---------------------------------------------------------------------------
// Decision log
// ---------------------------------------------------------------------------

DecisionLog::DecisionLog(std::filesystem::path path) : path_(std::move(path)) {}

std::vector<ReviewDecision> load_decisions(const std::filesystem::path& path) {
  std::vector<ReviewDecision> out;
  if (!std::filesystem::exists(path)) return out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(decision_from_json(json::parse(line)));
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

std::vector<ReviewDecision> DecisionLog::load() const { return load_decisions(path_); }

void DecisionLog::append(const ReviewDecision& d) {
  validate(d);
  const std::string line = to_json(d).dump() + "\n";
  std::lock_guard lock(mu_);
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot open decision log " + path_.string());
  out << line;
  out.flush();
  if (!out) throw IoError("cannot append to decision log " + path_.string());
}

// ---------------------------------------------------------------------------
// Folding decisions
// ---------------------------------------------------------------------------

namespace {

bool same_decision(const ReviewDecision& a, const ReviewDecision& b) {
  return a.action == b.action && a.replacement == b.replacement;
}

struct Resolution {
  std::map<std::string, ReviewDecision> winners;
  std::vector<DecisionConflict> conflicts;
};

Resolution resolve(const std::vector<ReviewDecision>& decisions) {
  Resolution r;
  for (const auto& d : decisions) {
    validate(d);
    auto [it, inserted] = r.winners.try_emplace(d.item_id, d);
    if (inserted) continue;
    ReviewDecision& current = it->second;
    const bool newer = d.timestamp >= current.timestamp;
    if (!same_decision(current, d)) {
      DecisionConflict c{d.item_id, newer ? d : current, newer ? current : d};
      spdlog::warn("conflicting review decisions for {}: {} ({}) wins over {} ({})", d.item_id,
                   to_string(c.winner.action), format_timestamp(c.winner.timestamp), to_string(c.loser.action),
                   format_timestamp(c.loser.timestamp));
      r.conflicts.push_back(std::move(c));
    }
    if (newer) current = d;
  }
  return r;
}

corpus::StageRecord review_record(const ReviewDecision& d) {
  corpus::Evidence ev{{"action", std::string(to_string(d.action))}, {"reviewer", d.reviewer}};
  if (!d.note.empty()) ev["note"] = d.note;
  const auto decision = d.action == Status::edited    ? corpus::Decision::modified
                        : d.action == Status::rejected ? corpus::Decision::discarded
                                                       : corpus::Decision::kept;
  return {corpus::Stage::human_review, decision, std::move(ev), d.timestamp};
}

void append_once(corpus::QAItem& item, corpus::StageRecord rec) {
  if (!item.provenance.empty() && item.provenance.back() == rec) return;
  item.provenance.push_back(std::move(rec));
}

}  // namespace

ApplyResult apply_decisions(const corpus::Manifest& manifest, const std::vector<ReviewDecision>& decisions) {
  corpus::validate(manifest);
  std::map<std::string, const corpus::QAItem*> by_id;
  for (const auto& item : manifest.items) by_id.emplace(item.id, &item);
  for (const auto& d : decisions) {
    if (!by_id.contains(d.item_id)) throw UnknownItemId(d.item_id);
  }
  auto resolution = resolve(decisions);

  ApplyResult out;
  for (corpus::Manifest* m : {&out.final_manifest, &out.working_manifest}) {
    m->schema_version = manifest.schema_version;
    m->seed = manifest.seed;
    m->prng = manifest.prng;
  }
  for (const auto& item : manifest.items) {
    auto it = resolution.winners.find(item.id);
    if (it == resolution.winners.end()) {
      out.pending_ids.push_back(item.id);
      out.working_manifest.items.push_back(item);
      continue;
    }
    const ReviewDecision& d = it->second;
    if (d.action == Status::rejected) continue;
    corpus::QAItem result = item;
    if (d.action == Status::edited) {
      result = *d.replacement;
      result.provenance = item.provenance;
    }
    append_once(result, review_record(d));
    corpus::validate(result);
    out.final_manifest.items.push_back(result);
    out.working_manifest.items.push_back(std::move(result));
  }
  out.conflicts = std::move(resolution.conflicts);
  return out;
}

std::vector<ReviewTask> current_state(const std::vector<ReviewTask>& queue,
                                      const std::vector<ReviewDecision>& decisions) {
  const auto resolution = resolve(decisions);
  std::vector<ReviewTask> out = queue;
  for (auto& task : out) {
    auto it = resolution.winners.find(task.item.id);
    if (it == resolution.winners.end()) continue;
    task.status = it->second.action;
    task.editor_note = it->second.note;
    if (it->second.replacement) task.item = *it->second.replacement;
  }
  return out;
}

}  // namespace vknow::review
