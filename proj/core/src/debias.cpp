#include "vknow/debias.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <regex>
#include <sstream>

#include "vknow/rewards.hpp"

namespace vknow::debias {

using json = nlohmann::json;
using corpus::Decision;
using corpus::QAItem;
using corpus::Stage;
using corpus::StageRecord;

void DebiasConfig::validate() const {
  if (!(sim_threshold >= 0 && sim_threshold <= 1)) throw Error("sim_threshold must be in [0, 1]");
  if (n_trials < 1) throw Error("n_trials must be >= 1");
  if (trial_pass_count < 1 || trial_pass_count > n_trials) throw Error("trial_pass_count must be in [1, n_trials]");
  if (panel_size < 1) throw Error("panel_size must be >= 1");
  if (model_quorum < 1 || static_cast<std::size_t>(model_quorum) > panel_size) {
    throw Error("model_quorum must be in [1, panel_size]");
  }
  if (rewrite_attempts < 1) throw Error("rewrite_attempts must be >= 1");
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionMismatch(a.size(), b.size());
  double na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) throw ZeroVector();
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  double dot = 0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += (a[i] / na) * (b[i] / nb);
  return std::clamp(dot, -1.0, 1.0);
}

namespace {

std::vector<FilterVerdict> sorted_by_id(std::vector<FilterVerdict> v) {
  std::sort(v.begin(), v.end(), [](const auto& x, const auto& y) { return x.item_id < y.item_id; });
  return v;
}

corpus::Manifest empty_like(const corpus::Manifest& m) {
  corpus::Manifest out;
  out.schema_version = m.schema_version;
  out.seed = m.seed;
  out.prng = m.prng;
  return out;
}

void require_endpoint(const gateway::EndpointConfig& cfg, const char* role) {
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw gateway::ConfigError(std::string(role) + " endpoint: " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Stage I
// ---------------------------------------------------------------------------

TranscriptMap collect_transcripts(const corpus::Manifest& items, gateway::Gateway& gw,
                                  const gateway::EndpointConfig& transcriber,
                                  const std::function<gateway::AudioSource(const std::string& video)>& audio,
                                  std::size_t workers) {
  std::map<std::string, std::string> videos;  // identity -> first reference seen
  for (const auto& item : items.items) videos.try_emplace(corpus::video_identity(item.video), item.video);
  std::vector<std::pair<std::string, std::string>> todo(videos.begin(), videos.end());
  std::vector<media::Transcript> done(todo.size());
  parallel_for(todo.size(), workers, [&](std::size_t i) {
    gateway::AudioSource src = audio(todo[i].second);
    src.identity = todo[i].first;
    done[i] = media::make_transcript(gw.transcribe(transcriber, src));
  });
  TranscriptMap out;
  for (std::size_t i = 0; i < todo.size(); ++i) out.emplace(todo[i].first, std::move(done[i]));
  return out;
}

StageResult stage1_audio_filter(const corpus::Manifest& items, const TranscriptMap& transcripts,
                                const DebiasConfig& cfg, gateway::Gateway& gw, const Clock& clock) {
  cfg.validate();
  for (const auto& item : items.items) {
    if (!transcripts.contains(corpus::video_identity(item.video))) {
      throw Error("stage I: no transcript for video '" + item.video + "' (item " + item.id + ")");
    }
  }

  std::vector<double> sims(items.items.size(), 0.0);
  parallel_for(items.items.size(), cfg.workers, [&](std::size_t i) {
    const auto& item = items.items[i];
    const auto& tr = transcripts.at(corpus::video_identity(item.video));
    if (trim(tr.full_text).empty()) return;  // no audio signal: similarity 0
    require_endpoint(cfg.embedder, "embedder");
    const auto gold = gw.embed(cfg.embedder, item.gold());
    double sim = 0;
    if (cfg.per_segment && !tr.segments.empty()) {
      sim = -1.0;
      for (const auto& seg : tr.segments) {
        if (trim(seg.text).empty()) continue;
        sim = std::max(sim, cosine_similarity(gw.embed(cfg.embedder, seg.text), gold));
      }
      sim = std::max(sim, 0.0);
    } else {
      sim = cosine_similarity(gw.embed(cfg.embedder, tr.full_text), gold);
    }
    sims[i] = sim;
  });

  StageResult out{empty_like(items), {}, {}};
  for (std::size_t i = 0; i < items.items.size(); ++i) {
    QAItem item = items.items[i];
    const bool discard = stage1_discards(sims[i], cfg.sim_threshold);
    const auto decision = discard ? Decision::discarded : Decision::kept;
    item.provenance.push_back(StageRecord{Stage::audio_filter, decision, {{"similarity", sims[i]}}, clock.now()});
    FilterVerdict v;
    v.item_id = item.id;
    v.stage = Stage::audio_filter;
    v.decision = decision;
    v.similarity = sims[i];
    out.verdicts.push_back(std::move(v));
    (discard ? out.discarded : out.kept.items).push_back(std::move(item));
  }
  out.verdicts = sorted_by_id(std::move(out.verdicts));
  return out;
}

// ---------------------------------------------------------------------------
// Stage II
// ---------------------------------------------------------------------------

std::vector<gateway::Message> blind_messages(const QAItem& item, const std::string& prompt_template) {
  std::string prompt = substitute(prompt_template, "question", item.question);
  prompt = substitute(std::move(prompt), "options", rewards::format_options(item.options));
  return {{"user", std::move(prompt), std::nullopt}};
}

int blind_answer_trials(const QAItem& item, const gateway::EndpointConfig& endpoint, int n, gateway::Gateway& gw,
                        const std::string& prompt_template) {
  if (endpoint.kind != gateway::EndpointKind::chat) {
    throw gateway::ConfigError("blind trials need a text-only chat endpoint (" + endpoint.model + ")");
  }
  const auto replies = gw.sample_n(endpoint, blind_messages(item, prompt_template), n);
  int correct = 0;
  for (std::size_t k = 0; k < replies.size(); ++k) {
    const auto choice = rewards::extract_choice(replies[k], item.options);
    if (!choice) {
      spdlog::debug("blind trial {} of item {} on {} unparseable; counted incorrect", k, item.id, endpoint.model);
      continue;
    }
    if (*choice == item.answer_index) ++correct;
  }
  return correct;
}

Stage2Decision stage2_decide(const std::vector<int>& correct_counts, int trial_pass_count, int model_quorum) {
  Stage2Decision d;
  for (int c : correct_counts) {
    if (c >= trial_pass_count) ++d.flagged_models;
  }
  d.discard = d.flagged_models >= model_quorum;
  return d;
}

StageResult stage2_language_filter(const corpus::Manifest& items, const DebiasConfig& cfg, gateway::Gateway& gw,
                                   const Clock& clock) {
  cfg.validate();
  if (!items.items.empty() && cfg.panel.size() != cfg.panel_size) {
    throw gateway::ConfigError("stage II panel has " + std::to_string(cfg.panel.size()) + " models, expected " +
                               std::to_string(cfg.panel_size));
  }
  for (const auto& ep : cfg.panel) require_endpoint(ep, "panel");

  const std::size_t n_items = items.items.size();
  const std::size_t n_models = cfg.panel.size();
  std::vector<std::vector<int>> counts(n_items, std::vector<int>(n_models, 0));
  std::vector<bool> skipped(n_items, false);
  for (std::size_t i = 0; i < n_items; ++i) {
    skipped[i] = cfg.skip_world_centric_stage2 && items.items[i].group() == corpus::TaskGroup::world_centric;
  }

  parallel_for(n_items * n_models, cfg.workers, [&](std::size_t job) {
    const std::size_t i = job / n_models;
    const std::size_t m = job % n_models;
    if (skipped[i]) return;
    counts[i][m] = blind_answer_trials(items.items[i], cfg.panel[m], cfg.n_trials, gw, cfg.blind_prompt);
  });

  StageResult out{empty_like(items), {}, {}};
  for (std::size_t i = 0; i < n_items; ++i) {
    QAItem item = items.items[i];
    FilterVerdict v;
    v.item_id = item.id;
    v.stage = Stage::language_filter;
    v.skipped = skipped[i];
    corpus::Evidence ev;
    if (!skipped[i]) {
      const auto d = stage2_decide(counts[i], cfg.trial_pass_count, cfg.model_quorum);
      v.per_model_correct_counts = counts[i];
      v.flagged_models = d.flagged_models;
      v.decision = d.discard ? Decision::discarded : Decision::kept;
      ev["flagged_models"] = std::int64_t{d.flagged_models};
      for (std::size_t m = 0; m < n_models; ++m) {
        ev["correct_count." + std::to_string(m)] = std::int64_t{counts[i][m]};
      }
    } else {
      ev["skipped"] = std::string("world_centric");
    }
    item.provenance.push_back(StageRecord{Stage::language_filter, v.decision, std::move(ev), clock.now()});
    const bool discard = v.decision == Decision::discarded;
    out.verdicts.push_back(std::move(v));
    (discard ? out.discarded : out.kept.items).push_back(std::move(item));
  }
  out.verdicts = sorted_by_id(std::move(out.verdicts));
  return out;
}

// ---------------------------------------------------------------------------
// Stage III
// ---------------------------------------------------------------------------

std::vector<std::string> parse_rewrite_reply(std::string_view reply_view) {
  std::string reply(reply_view);
  if (auto think_end = reply.rfind("</think>"); think_end != std::string::npos) {
    reply = reply.substr(think_end + 8);
  }
  const auto open = reply.find('[');
  const auto close = reply.rfind(']');
  if (open != std::string::npos && close != std::string::npos && close > open) {
    try {
      const json j = json::parse(reply.substr(open, close - open + 1));
      if (j.is_array() && std::all_of(j.begin(), j.end(), [](const json& x) { return x.is_string(); })) {
        return j.get<std::vector<std::string>>();
      }
    } catch (const json::exception&) {
    }
  }
  static const std::regex enumerated(R"(^\s*(?:[A-Fa-f]|\d+)[\.\):]\s+(.+?)\s*$)");
  static const std::regex bullet(R"(^\s*[-*]\s+(.+?)\s*$)");
  std::vector<std::string> out;
  std::istringstream in(reply);
  std::string line;
  while (std::getline(in, line)) {
    std::smatch m;
    if (std::regex_match(line, m, enumerated) || std::regex_match(line, m, bullet)) out.push_back(m[1].str());
  }
  return out;
}

void check_rewrite(const QAItem& item, const std::vector<std::string>& new_options) {
  if (new_options.size() != item.options.size()) {
    throw RewriteRejected("count: expected " + std::to_string(item.options.size()) + " options, got " +
                          std::to_string(new_options.size()));
  }
  if (normalize_whitespace(new_options[item.answer_index]) != normalize_whitespace(item.gold())) {
    throw RewriteRejected("gold option altered: '" + new_options[item.answer_index] + "'");
  }
  QAItem candidate = item;
  candidate.options = new_options;
  candidate.options[item.answer_index] = item.gold();
  try {
    corpus::validate(candidate);
  } catch (const ValidationError& e) {
    throw RewriteRejected("invalid options: " + e.invariant());
  }
}

Stage3Result stage3_enhance_distractors(const corpus::Manifest& items, const DebiasConfig& cfg,
                                        gateway::Gateway& gw, const Clock& clock) {
  cfg.validate();
  if (!items.items.empty()) require_endpoint(cfg.rewriter, "rewriter");
  std::vector<DistractorRewrite> rewrites(items.items.size());

  parallel_for(items.items.size(), cfg.workers, [&](std::size_t i) {
    const QAItem& item = items.items[i];
    DistractorRewrite rw;
    rw.item_id = item.id;
    rw.old_options = item.options;
    rw.new_options = item.options;

    std::string prompt = substitute(cfg.rewrite_prompt, "question", item.question);
    prompt = substitute(std::move(prompt), "options", rewards::format_options(item.options));
    prompt = substitute(std::move(prompt), "answer_letter", std::string(1, rewards::option_letter(item.answer_index)));
    prompt = substitute(std::move(prompt), "answer", item.gold());
    prompt = substitute(std::move(prompt), "n_options", std::to_string(item.options.size()));
    const std::vector<gateway::Message> messages{{"user", prompt, std::nullopt}};

    for (int attempt = 0; attempt < cfg.rewrite_attempts && !rw.accepted; ++attempt) {
      rw.attempts = attempt + 1;
      try {
        auto proposed = parse_rewrite_reply(gw.chat(cfg.rewriter, messages, attempt));
        check_rewrite(item, proposed);
        proposed[item.answer_index] = item.gold();
        rw.new_options = std::move(proposed);
        rw.accepted = true;
        rw.rejection.clear();
      } catch (const RewriteRejected& e) {
        rw.rejection = e.what();
      } catch (const gateway::GatewayError& e) {
        rw.rejection = std::string("gateway: ") + e.what();
      }
    }
    if (!rw.accepted) {
      spdlog::info("stage III kept original options for {}: {}", item.id, rw.rejection);
      rw.new_options = item.options;
    }
    rw.answer_preserved = rw.new_options[item.answer_index] == item.gold();
    rewrites[i] = std::move(rw);
  });

  Stage3Result out{empty_like(items), {}};
  for (std::size_t i = 0; i < items.items.size(); ++i) {
    QAItem item = items.items[i];
    const auto& rw = rewrites[i];
    corpus::Evidence ev{{"attempts", std::int64_t{rw.attempts}}};
    if (!rw.accepted) ev["rejected"] = rw.rejection;
    item.options = rw.new_options;
    item.provenance.push_back(StageRecord{Stage::distractor_rewrite,
                                          rw.accepted ? Decision::modified : Decision::kept, std::move(ev),
                                          clock.now()});
    corpus::validate(item);
    out.rewritten.items.push_back(std::move(item));
  }
  std::sort(rewrites.begin(), rewrites.end(), [](const auto& a, const auto& b) { return a.item_id < b.item_id; });
  out.rewrites = std::move(rewrites);
  return out;
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

json to_json(const FilterVerdict& v) {
  json j = {{"item_id", v.item_id}, {"stage", corpus::to_string(v.stage)}, {"decision", corpus::to_string(v.decision)}};
  if (v.stage == Stage::audio_filter) {
    j["evidence"] = {{"similarity", v.similarity.value_or(0.0)}};
  } else {
    j["evidence"] = {{"per_model_correct_counts", v.per_model_correct_counts},
                     {"flagged_models", v.flagged_models},
                     {"skipped", v.skipped}};
  }
  return j;
}

json to_json(const DistractorRewrite& r) {
  return {{"item_id", r.item_id},     {"old_options", r.old_options},
          {"new_options", r.new_options}, {"answer_preserved", r.answer_preserved},
          {"accepted", r.accepted},   {"attempts", r.attempts},
          {"rejection", r.rejection}};
}

json to_json(const PipelineReport& r) {
  json counts = json::array();
  for (const auto& c : r.counts) {
    counts.push_back({{"stage", c.stage}, {"input", c.input}, {"kept", c.kept}, {"discarded", c.discarded}});
  }
  json s1 = json::array(), s2 = json::array(), s3 = json::array();
  for (const auto& v : r.stage1) s1.push_back(to_json(v));
  for (const auto& v : r.stage2) s2.push_back(to_json(v));
  for (const auto& v : r.stage3) s3.push_back(to_json(v));
  return {{"seed", r.seed ? json(*r.seed) : json(nullptr)},
          {"counts", std::move(counts)},
          {"stage1_audio_filter", std::move(s1)},
          {"stage2_language_filter", std::move(s2)},
          {"stage3_distractor_rewrite", std::move(s3)}};
}

PipelineResult run_pipeline(const corpus::Manifest& manifest, const TranscriptMap& transcripts,
                            const DebiasConfig& cfg, gateway::Gateway& gw, std::uint64_t seed, const Clock& clock) {
  corpus::validate(manifest);
  PipelineResult result;
  auto& report = result.report;
  report.seed = seed;

  auto guarded = [&](const char* stage, auto&& fn) {
    try {
      return fn();
    } catch (const std::exception& e) {
      throw PipelineError(std::string(stage) + " aborted: " + e.what(), report);
    }
  };

  const auto s1 = guarded("audio_filter", [&] { return stage1_audio_filter(manifest, transcripts, cfg, gw, clock); });
  report.counts.push_back({"audio_filter", manifest.items.size(), s1.kept.items.size(), s1.discarded.size()});
  report.stage1 = s1.verdicts;

  const auto s2 = guarded("language_filter", [&] { return stage2_language_filter(s1.kept, cfg, gw, clock); });
  report.counts.push_back({"language_filter", s1.kept.items.size(), s2.kept.items.size(), s2.discarded.size()});
  report.stage2 = s2.verdicts;

  const auto s3 = guarded("distractor_rewrite", [&] { return stage3_enhance_distractors(s2.kept, cfg, gw, clock); });
  report.counts.push_back({"distractor_rewrite", s2.kept.items.size(), s3.rewritten.items.size(), 0});
  report.stage3 = s3.rewrites;

  corpus::Manifest shuffled = empty_like(s3.rewritten);
  shuffled.seed = seed;
  shuffled.prng = std::string(corpus::kShufflePrng);
  for (const auto& item : s3.rewritten.items) shuffled.items.push_back(corpus::shuffle_options(item, seed, clock));
  report.counts.push_back({"shuffle", s3.rewritten.items.size(), shuffled.items.size(), 0});

  result.review_queue = review::build_queue(shuffled);
  result.final_manifest = std::move(shuffled);
  return result;
}

}  // namespace vknow::debias
