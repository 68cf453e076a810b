#include "vknow/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace vknow::evalkit {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
using corpus::Task;
using corpus::TaskGroup;

std::string_view to_string(PromptMode m) noexcept { return m == PromptMode::sta ? "sta" : "vanilla"; }

PromptMode parse_prompt_mode(std::string_view s) {
  if (s == "vanilla") return PromptMode::vanilla;
  if (s == "sta") return PromptMode::sta;
  throw Error("unknown prompt mode '" + std::string(s) + "' (expected vanilla or sta)");
}

void EvalConfig::validate() const {
  if (n_frames < 1) throw gateway::ConfigError("n_frames must be >= 1");
  if (model.kind != gateway::EndpointKind::chat_vision) {
    throw gateway::ConfigError("evaluation model must be a chat_vision endpoint");
  }
  sampling.validate();
}

ojson to_json(const EvalConfig& cfg) {
  ojson j;
  j["model"] = gateway::to_json(cfg.model);
  j["n_frames"] = cfg.n_frames;
  j["prompt_mode"] = to_string(cfg.prompt_mode);
  ojson s;
  s["temperature"] = cfg.sampling.temperature;
  s["top_p"] = cfg.sampling.top_p;
  s["seed"] = cfg.sampling.seed ? json(*cfg.sampling.seed) : json(nullptr);
  s["max_tokens"] = cfg.sampling.max_tokens;
  j["sampling"] = std::move(s);
  j["resolution_budget"] = cfg.resolution_budget;
  j["prompt_template"] = cfg.prompt_mode == PromptMode::sta ? cfg.sta_prompt : cfg.vanilla_prompt;
  return j;
}

double round1(double pct) { return std::floor(pct * 10.0 + 0.5 + 1e-9) / 10.0; }

std::string manifest_fingerprint(const corpus::Manifest& m) {
  std::vector<const corpus::QAItem*> items;
  for (const auto& it : m.items) items.push_back(&it);
  std::sort(items.begin(), items.end(), [](auto* a, auto* b) { return a->id < b->id; });
  json arr = json::array();
  for (const auto* it : items) {
    arr.push_back({it->id, corpus::to_string(it->dimension), it->answer_index, it->options});
  }
  return sha256_hex(arr.dump());
}

std::string build_prompt(const corpus::QAItem& item, const EvalConfig& cfg) {
  const std::string& tmpl = cfg.prompt_mode == PromptMode::sta ? cfg.sta_prompt : cfg.vanilla_prompt;
  return substitute(substitute(tmpl, "question", item.question), "options", rewards::format_options(item.options));
}

std::optional<std::size_t> extract_prediction(const std::string& reply, const corpus::QAItem& item,
                                              const EvalConfig& cfg) {
  if (cfg.prompt_mode == PromptMode::vanilla) return rewards::extract_choice(reply, item.options);
  const auto parsed = rewards::parse_sta(reply, cfg.tmpl);
  if (trim(parsed.answer).empty()) return std::nullopt;
  return rewards::extract_choice(parsed.answer, item.options);
}

EvalRun run_eval(const corpus::Manifest& manifest, const EvalConfig& cfg, gateway::Gateway& gw,
                 const AssetLookup& assets) {
  cfg.validate();
  gateway::EndpointConfig endpoint = cfg.model;
  endpoint.sampling = cfg.sampling;

  std::vector<const corpus::QAItem*> items;
  for (const auto& it : manifest.items) items.push_back(&it);
  std::sort(items.begin(), items.end(), [](auto* a, auto* b) { return a->id < b->id; });

  EvalRun run;
  run.config = to_json(cfg);
  run.manifest_fingerprint = manifest_fingerprint(manifest);
  run.results.resize(items.size());
  parallel_for(items.size(), cfg.workers, [&](std::size_t i) {
    const corpus::QAItem& item = *items[i];
    const auto frames = media::sample_frames(assets(item.video), cfg.n_frames, cfg.resolution_budget);
    const std::vector<gateway::Message> messages{{"user", build_prompt(item, cfg), frames.attachment(item.video)}};
    const auto reply = gw.chat_ex(endpoint, messages);

    ItemResult r;
    r.item_id = item.id;
    r.raw = reply.text;
    r.predicted = extract_prediction(reply.text, item, cfg);
    r.correct = r.predicted && *r.predicted == item.answer_index;
    r.latency_s = reply.latency_s;
    run.results[i] = std::move(r);
  });
  run.aggregates = aggregate(run.results, manifest);
  return run;
}

namespace {

// Shared by aggregate() and random_baseline(): per-item scores in [0, 1].
AggregateReport summarize(const std::vector<std::pair<Task, double>>& scores) {
  std::array<double, 8> sum{};
  std::array<std::size_t, 8> n{};
  for (const auto& [task, s] : scores) {
    sum[corpus::index_of(task)] += s;
    ++n[corpus::index_of(task)];
  }

  AggregateReport rep;
  double total = 0, wc = 0, hc = 0;
  std::size_t total_n = 0, wc_n = 0, hc_n = 0;
  std::vector<double> all_means, wc_means, hc_means;
  for (Task t : corpus::kAllTasks) {
    const std::size_t k = corpus::index_of(t);
    if (n[k] == 0) continue;
    const double pct = 100.0 * sum[k] / static_cast<double>(n[k]);
    rep.per_task[t] = pct;
    rep.counts[t] = n[k];
    total += sum[k];
    total_n += n[k];
    all_means.push_back(pct);
    if (corpus::group_of(t) == TaskGroup::world_centric) {
      wc += sum[k];
      wc_n += n[k];
      wc_means.push_back(pct);
    } else {
      hc += sum[k];
      hc_n += n[k];
      hc_means.push_back(pct);
    }
  }
  auto mean = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  if (total_n) rep.overall = 100.0 * total / static_cast<double>(total_n);
  if (wc_n) rep.wc = 100.0 * wc / static_cast<double>(wc_n);
  if (hc_n) rep.hc = 100.0 * hc / static_cast<double>(hc_n);
  rep.wc_macro = mean(wc_means);
  rep.hc_macro = mean(hc_means);
  rep.overall_macro = mean(all_means);
  return rep;
}

}  // namespace

AggregateReport aggregate(const std::vector<ItemResult>& results, const corpus::Manifest& manifest) {
  std::map<std::string, Task> dims;
  for (const auto& it : manifest.items) dims.emplace(it.id, it.dimension);
  std::vector<std::pair<Task, double>> scores;
  scores.reserve(results.size());
  for (const auto& r : results) {
    auto it = dims.find(r.item_id);
    if (it == dims.end()) throw rewards::UnknownItem(r.item_id);
    scores.emplace_back(it->second, r.correct ? 1.0 : 0.0);
  }
  return summarize(scores);
}

AggregateReport random_baseline(const corpus::Manifest& manifest) {
  std::vector<std::pair<Task, double>> scores;
  scores.reserve(manifest.items.size());
  for (const auto& it : manifest.items) {
    corpus::validate(it);
    scores.emplace_back(it.dimension, 1.0 / static_cast<double>(it.options.size()));
  }
  return summarize(scores);
}

std::map<std::size_t, EvalRun> frames_sweep(const corpus::Manifest& manifest, const EvalConfig& base,
                                            const std::vector<std::size_t>& frames, gateway::Gateway& gw,
                                            const AssetLookup& assets) {
  if (frames.empty()) throw gateway::ConfigError("frame sweep needs at least one frame count");
  std::map<std::size_t, EvalRun> out;
  for (std::size_t f : frames) {
    if (f < 1) throw gateway::ConfigError("frame counts must be >= 1");
    if (out.contains(f)) continue;
    EvalConfig cfg = base;
    cfg.n_frames = f;
    out.emplace(f, run_eval(manifest, cfg, gw, assets));
  }
  return out;
}

namespace {

std::string fmt1(std::optional<double> v) {
  if (!v) return "-";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << round1(*v);
  return os.str();
}

}  // namespace

std::string sweep_table(const std::map<std::size_t, EvalRun>& runs) {
  std::string out = "frames,Overall";
  for (Task t : corpus::kAllTasks) out += "," + std::string(corpus::to_string(t));
  out += ",WC,HC\n";
  for (const auto& [frames, run] : runs) {
    const auto& a = run.aggregates;
    out += std::to_string(frames) + "," + fmt1(a.overall);
    for (Task t : corpus::kAllTasks) {
      auto it = a.per_task.find(t);
      out += "," + fmt1(it == a.per_task.end() ? std::nullopt : std::optional<double>(it->second));
    }
    out += "," + fmt1(a.wc) + "," + fmt1(a.hc) + "\n";
  }
  return out;
}

namespace {

json opt(std::optional<double> v) { return v ? json(*v) : json(nullptr); }
std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

ojson to_json(const AggregateReport& a) {
  ojson per_task = ojson::object();
  ojson counts = ojson::object();
  for (Task t : corpus::kAllTasks) {
    auto it = a.per_task.find(t);
    if (it == a.per_task.end()) continue;
    per_task[std::string(corpus::to_string(t))] = it->second;
    counts[std::string(corpus::to_string(t))] = a.counts.at(t);
  }
  ojson j;
  j["per_task"] = std::move(per_task);
  j["counts"] = std::move(counts);
  j["overall"] = opt(a.overall);
  j["wc"] = opt(a.wc);
  j["hc"] = opt(a.hc);
  j["overall_macro"] = opt(a.overall_macro);
  j["wc_macro"] = opt(a.wc_macro);
  j["hc_macro"] = opt(a.hc_macro);
  return j;
}

AggregateReport aggregate_from_json(const json& j) {
  AggregateReport a;
  for (const auto& [k, v] : j.at("per_task").items()) a.per_task[corpus::parse_task(k)] = v.get<double>();
  for (const auto& [k, v] : j.at("counts").items()) a.counts[corpus::parse_task(k)] = v.get<std::size_t>();
  a.overall = opt_from(j, "overall");
  a.wc = opt_from(j, "wc");
  a.hc = opt_from(j, "hc");
  a.overall_macro = opt_from(j, "overall_macro");
  a.wc_macro = opt_from(j, "wc_macro");
  a.hc_macro = opt_from(j, "hc_macro");
  return a;
}

ojson to_json(const EvalRun& run) {
  ojson results = ojson::array();
  for (const auto& r : run.results) {
    ojson e;
    e["item_id"] = r.item_id;
    e["raw"] = r.raw;
    e["predicted"] = r.predicted ? json(*r.predicted) : json(nullptr);
    e["correct"] = r.correct;
    e["latency_s"] = r.latency_s;
    results.push_back(std::move(e));
  }
  ojson j;
  j["config"] = run.config;
  j["manifest_fingerprint"] = run.manifest_fingerprint;
  j["results"] = std::move(results);
  j["aggregates"] = to_json(run.aggregates);
  return j;
}

EvalRun run_from_json(const json& j) {
  EvalRun run;
  run.config = j.at("config");
  run.manifest_fingerprint = j.at("manifest_fingerprint").get<std::string>();
  for (const auto& e : j.at("results")) {
    ItemResult r;
    r.item_id = e.at("item_id").get<std::string>();
    r.raw = e.value("raw", "");
    if (e.contains("predicted") && !e.at("predicted").is_null()) r.predicted = e.at("predicted").get<std::size_t>();
    r.correct = e.at("correct").get<bool>();
    r.latency_s = e.value("latency_s", 0.0);
    if (r.correct && !r.predicted) throw ValidationError(r.item_id, "correct result without a prediction");
    run.results.push_back(std::move(r));
  }
  run.aggregates = aggregate_from_json(j.at("aggregates"));
  return run;
}

EvalRun load_run(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return run_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void save_run(const EvalRun& run, const std::filesystem::path& path) {
  write_file_atomic(path, to_json(run).dump(2) + "\n");
}

}  // namespace vknow::evalkit
