#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <fstream>
#include <iostream>

#include "vknow/analytics.hpp"
#include "vknow/coldstart.hpp"
#include "vknow/config.hpp"
#include "vknow/debias.hpp"
#include "vknow/evalkit.hpp"
#include "vknow/media.hpp"
#include "vknow/review.hpp"
#include "vknow/service.hpp"

namespace fs = std::filesystem;
using namespace vknow;
using json = nlohmann::json;

namespace {

struct CacheArgs {
  std::string dir;
  std::string mode;
  std::string now;  // pins every recorded timestamp
};

void add_cache_options(CLI::App* cmd, CacheArgs& c) {
  cmd->add_option("--cache", c.dir, "Response cache directory");
  cmd->add_option("--mode", c.mode, "Cache mode")->check(CLI::IsMember({"off", "record", "replay"}));
  cmd->add_option("--now", c.now, "Fixed ISO-8601 time for provenance records");
}

// Everything a command needs to talk to models.
struct Runtime {
  fs::path cache_dir;
  gateway::CacheMode mode = gateway::CacheMode::off;
  std::shared_ptr<const Clock> clock;
  std::unique_ptr<gateway::Gateway> gw;
  std::unique_ptr<media::AssetCatalog> assets;

  Runtime(const CacheArgs& args, const config::ToolConfig* cfg) {
    cache_dir = !args.dir.empty() ? fs::path(args.dir) : cfg ? cfg->cache_dir : fs::path();
    if (!args.mode.empty()) {
      mode = gateway::parse_cache_mode(args.mode);
    } else if (cfg && cfg->cache_mode) {
      mode = *cfg->cache_mode;
    } else if (!cache_dir.empty()) {
      mode = gateway::CacheMode::record;
    }
    if (mode != gateway::CacheMode::off && cache_dir.empty()) throw Error("--mode " + std::string(to_string(mode)) + " needs --cache");
    if (!args.now.empty()) {
      clock = std::make_shared<FixedClock>(parse_timestamp(args.now));
    } else if (mode == gateway::CacheMode::replay) {
      clock = std::make_shared<FixedClock>();
    } else {
      clock = std::make_shared<SystemClock>();
    }

    gateway::GatewayOptions o;
    o.cache_dir = cache_dir;
    o.mode = mode;
    o.transport = gateway::make_http_transport();
    o.frame_resolver = media::make_ffmpeg_frame_resolver(cache_dir.empty() ? fs::temp_directory_path() / "vknow-frames"
                                                                           : cache_dir / "_frames");
    o.clock = clock;
    gw = std::make_unique<gateway::Gateway>(std::move(o));
    assets = std::make_unique<media::AssetCatalog>(media::run_command, cache_dir, mode);
  }

  media::VideoAsset asset(const std::string& ref) { return assets->get(ref); }

  void log_stats() const {
    const auto s = gw->stats();
    spdlog::info("gateway: {} network call(s), {} cache hit(s), {} cache write(s)", s.network_calls, s.cache_hits,
                 s.cache_writes);
  }
};

std::vector<json> read_jsonl(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<json> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (trim(line).empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(path.string() + ": " + ParseError(n, e.what()).what());
    }
  }
  return out;
}

void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  write_file_atomic(path, text);
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

// A config file, or a bare endpoint file, naming the model a command talks to.
gateway::EndpointConfig endpoint_from(const config::ToolConfig& cfg, const std::string& path) {
  if (cfg.eval) return cfg.eval->model;
  if (cfg.endpoints.size() == 1) return cfg.endpoints.begin()->second;
  throw gateway::ConfigError(path + ": expected a single endpoint");
}

rewards::VerifierConfig verifier_from(const std::string& path) {
  const auto cfg = config::load_config(path);
  if (cfg.verifier) return *cfg.verifier;
  rewards::VerifierConfig v;
  v.endpoint = endpoint_from(cfg, path);
  v.endpoint.kind = gateway::EndpointKind::chat;
  return v;
}

std::string model_name(const evalkit::EvalRun& run, const fs::path& path) {
  const auto& c = run.config;
  if (c.contains("model") && c["model"].contains("model")) return c["model"]["model"].get<std::string>();
  return path.stem().string();
}

std::vector<std::size_t> parse_frames(const std::string& list) {
  std::vector<std::size_t> out;
  std::stringstream ss(list);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (trim(tok).empty()) continue;
    out.push_back(std::stoul(tok));
  }
  if (out.empty()) throw Error("--frames: empty list");
  return out;
}

HttpService* g_service = nullptr;

void serve(HttpService& svc, const std::string& host, int port, std::string_view what) {
  const int bound = svc.bind(host, port);
  spdlog::info("{} listening on http://{}:{}", what, host, bound);
  g_service = &svc;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  svc.serve_forever();
  g_service = nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vknow: curation, reward scoring and evaluation for video QA benchmarks"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  // filter -------------------------------------------------------------------
  auto* filter = app.add_subcommand("filter", "Run the debiasing pipeline over a manifest");
  std::string f_in, f_out, f_config, f_report, f_queue;
  std::uint64_t f_seed = 0;
  CacheArgs f_cache;
  filter->add_option("--in", f_in, "Input manifest (JSONL)")->required();
  filter->add_option("--out", f_out, "Kept items (JSONL)")->required();
  filter->add_option("--config", f_config, "TOML configuration")->required();
  filter->add_option("--seed", f_seed, "Option shuffle seed");
  filter->add_option("--report", f_report, "Per-stage report (JSON)");
  filter->add_option("--queue", f_queue, "Review queue (JSONL)");
  add_cache_options(filter, f_cache);
  filter->callback([&] {
    const auto cfg = config::load_config(f_config);
    if (!cfg.debias) throw gateway::ConfigError(f_config + ": missing [debias]");
    Runtime rt(f_cache, &cfg);
    const auto manifest = corpus::load_manifest(f_in);
    debias::TranscriptMap transcripts;
    if (cfg.transcriber) {
      const fs::path audio_dir = rt.cache_dir.empty() ? fs::temp_directory_path() / "vknow-audio" : rt.cache_dir / "_audio";
      transcripts = debias::collect_transcripts(
          manifest, *rt.gw, *cfg.transcriber,
          [&](const std::string& v) { return media::audio_source(v, audio_dir); }, cfg.debias->workers);
    } else {
      spdlog::warn("no [transcriber] configured; stage I sees empty transcripts");
    }
    try {
      const auto r = debias::run_pipeline(manifest, transcripts, *cfg.debias, *rt.gw, f_seed, *rt.clock);
      corpus::save_manifest(r.final_manifest, f_out);
      if (!f_report.empty()) write_json(f_report, debias::to_json(r.report));
      if (!f_queue.empty()) {
        std::vector<json> rows;
        for (const auto& t : r.review_queue) rows.push_back(review::to_json(t));
        write_jsonl(f_queue, rows);
      }
      for (const auto& c : r.report.counts) {
        spdlog::info("{}: {} in, {} kept, {} discarded", c.stage, c.input, c.kept, c.discarded);
      }
    } catch (const debias::PipelineError& e) {
      if (!f_report.empty()) write_json(f_report, debias::to_json(e.partial_report()));
      throw;
    }
    rt.log_stats();
  });

  // dedup --------------------------------------------------------------------
  auto* dedup = app.add_subcommand("dedup", "Drop training items that also appear in a held-out manifest");
  std::string d_train, d_holdout, d_out, d_removed;
  dedup->add_option("--train", d_train)->required();
  dedup->add_option("--holdout", d_holdout)->required();
  dedup->add_option("--out", d_out)->required();
  dedup->add_option("--removed", d_removed, "Removed items (JSONL)");
  dedup->callback([&] {
    const SystemClock clock;
    const auto r = corpus::dedup_items(corpus::load_manifest(d_train), corpus::load_manifest(d_holdout), clock);
    corpus::save_manifest(r.kept, d_out);
    if (!d_removed.empty()) {
      corpus::Manifest removed;
      removed.items = r.removed;
      corpus::save_manifest(removed, d_removed);
    }
    spdlog::info("kept {}, removed {}", r.kept.items.size(), r.removed.size());
  });

  // review -------------------------------------------------------------------
  auto* review_cmd = app.add_subcommand("review", "Human review queue");
  review_cmd->require_subcommand(1);
  auto* rserve = review_cmd->add_subcommand("serve", "Serve the review API");
  std::string rs_queue, rs_log = "decisions.log", rs_host = "127.0.0.1", rs_media, rs_ui, rs_token_env;
  int rs_port = 8080;
  rserve->add_option("--queue", rs_queue, "Manifest to review (JSONL)")->required();
  rserve->add_option("--decisions", rs_log, "Append-only decision log");
  rserve->add_option("--host", rs_host);
  rserve->add_option("--port", rs_port);
  rserve->add_option("--media-root", rs_media, "Directory for relative video paths");
  rserve->add_option("--ui", rs_ui, "Static UI bundle directory");
  rserve->add_option("--token-env", rs_token_env, "Environment variable holding the reviewer token");
  rserve->callback([&] {
    review::ReviewServiceOptions o;
    o.decision_log = rs_log;
    o.media_root = rs_media.empty() ? fs::path(rs_queue).parent_path() : fs::path(rs_media);
    o.ui_dir = rs_ui;
    if (!rs_token_env.empty()) {
      const char* t = std::getenv(rs_token_env.c_str());
      if (!t || !*t) throw Error("environment variable " + rs_token_env + " is not set");
      o.token = t;
    }
    o.clock = std::make_shared<SystemClock>();
    review::ReviewService svc(review::build_queue(corpus::load_manifest(rs_queue)), o);
    serve(svc, rs_host, rs_port, "review service");
  });

  auto* rapply = review_cmd->add_subcommand("apply", "Fold a decision log into a final manifest");
  std::string ra_log, ra_in, ra_out, ra_working;
  rapply->add_option("--decisions", ra_log)->required();
  rapply->add_option("--in", ra_in)->required();
  rapply->add_option("--out", ra_out)->required();
  rapply->add_option("--working", ra_working, "Also write decided plus pending items");
  rapply->callback([&] {
    const auto r = review::apply_decisions(corpus::load_manifest(ra_in), review::load_decisions(ra_log));
    corpus::save_manifest(r.final_manifest, ra_out);
    if (!ra_working.empty()) corpus::save_manifest(r.working_manifest, ra_working);
    for (const auto& c : r.conflicts) {
      spdlog::warn("{}: {} by '{}' overrides {} by '{}'", c.item_id, review::to_string(c.winner.action),
                   c.winner.reviewer, review::to_string(c.loser.action), c.loser.reviewer);
    }
    spdlog::info("{} final item(s), {} pending", r.final_manifest.items.size(), r.pending_ids.size());
  });

  // reward -------------------------------------------------------------------
  auto* reward = app.add_subcommand("reward", "Composite rewards for policy optimization");
  reward->require_subcommand(1);
  auto* rscore = reward->add_subcommand("score", "Score a batch of completions");
  std::string sc_in, sc_manifest, sc_out, sc_config;
  std::optional<double> sc_lambda;
  CacheArgs sc_cache;
  rscore->add_option("--in", sc_in, "Completions (JSONL)")->required();
  rscore->add_option("--manifest", sc_manifest)->required();
  rscore->add_option("--config", sc_config, "TOML with [verifier]")->required();
  rscore->add_option("--lambda", sc_lambda, "Weight of the visual-knowledge reward");
  rscore->add_option("--out", sc_out, "Groups (JSONL)")->required();
  add_cache_options(rscore, sc_cache);
  rscore->callback([&] {
    const auto cfg = config::load_config(sc_config);
    if (!cfg.verifier) throw gateway::ConfigError(sc_config + ": missing [verifier]");
    Runtime rt(sc_cache, &cfg);
    std::vector<rewards::Completion> completions;
    for (const auto& j : read_jsonl(sc_in)) completions.push_back(rewards::completion_from_json(j));
    rewards::ScoringOptions opts;
    opts.weights = cfg.weights;
    if (sc_lambda) opts.weights.lambda = *sc_lambda;
    opts.weights.validate();
    opts.tmpl = cfg.tmpl;
    const auto groups = rewards::score_batch(completions, corpus::load_manifest(sc_manifest), *cfg.verifier, *rt.gw, opts);
    std::vector<json> rows;
    for (const auto& g : groups) rows.push_back(rewards::to_json(g));
    write_jsonl(sc_out, rows);
    rt.log_stats();
  });

  auto* rserve2 = reward->add_subcommand("serve", "Serve POST /score");
  std::string rw_manifest, rw_config, rw_host = "127.0.0.1";
  int rw_port = 8090;
  CacheArgs rw_cache;
  rserve2->add_option("--manifest", rw_manifest)->required();
  rserve2->add_option("--config", rw_config, "TOML with [verifier]")->required();
  rserve2->add_option("--host", rw_host);
  rserve2->add_option("--port", rw_port);
  add_cache_options(rserve2, rw_cache);
  rserve2->callback([&] {
    const auto cfg = config::load_config(rw_config);
    if (!cfg.verifier) throw gateway::ConfigError(rw_config + ": missing [verifier]");
    Runtime rt(rw_cache, &cfg);
    rewards::RewardServiceOptions o;
    o.scoring.weights = cfg.weights;
    o.scoring.tmpl = cfg.tmpl;
    o.trainer = cfg.trainer;
    rewards::RewardService svc(corpus::load_manifest(rw_manifest), *cfg.verifier, *rt.gw, o);
    serve(svc, rw_host, rw_port, "reward service");
  });

  // coldstart ----------------------------------------------------------------
  auto* cold = app.add_subcommand("coldstart", "Build a see/think/answer SFT dataset");
  std::string cs_in, cs_out, cs_gen, cs_ver;
  int cs_k = 0;
  CacheArgs cs_cache;
  cold->add_option("--in", cs_in)->required();
  cold->add_option("--out", cs_out)->required();
  cold->add_option("--generator", cs_gen, "Generator TOML")->required();
  cold->add_option("--verifier", cs_ver, "Verifier TOML")->required();
  cold->add_option("--k", cs_k, "Candidates per item");
  add_cache_options(cold, cs_cache);
  cold->callback([&] {
    const auto gcfg = config::load_config(cs_gen);
    coldstart::GeneratorConfig gen;
    if (gcfg.generator) {
      gen = *gcfg.generator;
    } else {
      gen.endpoint = endpoint_from(gcfg, cs_gen);
      gen.tmpl = gcfg.tmpl;
    }
    if (cs_k > 0) gen.k = cs_k;
    const auto ver = verifier_from(cs_ver);
    Runtime rt(cs_cache, &gcfg);
    const auto manifest = corpus::load_manifest(cs_in);
    const auto cands = coldstart::generate_candidates(manifest, gen, *rt.gw,
                                                      [&](const std::string& v) { return rt.asset(v); });
    const auto graded = coldstart::filter_correct_and_formatted(cands);
    const auto records = coldstart::filter_description_sufficient(graded, manifest, ver, *rt.gw, gen.workers);
    coldstart::emit_dataset(records, manifest, cs_out, gen.prompt_template, gen.tmpl);
    spdlog::info("{} candidate(s), {} correct and well-formed, {} confirmed", cands.size(), graded.size(),
                 records.size());
    rt.log_stats();
  });

  // eval ---------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Evaluate a model on a manifest");
  std::string ev_manifest, ev_model, ev_out, ev_prompt, ev_frames, ev_assets, ev_runs_dir;
  CacheArgs ev_cache;
  eval->add_option("--manifest", ev_manifest)->required();
  eval->add_option("--model", ev_model, "Model TOML")->required();
  eval->add_option("--frames", ev_frames, "Frames per video");
  eval->add_option("--prompt", ev_prompt)->check(CLI::IsMember({"vanilla", "sta"}));
  eval->add_option("--assets", ev_assets, "Known video metadata (JSONL), skips probing");
  add_cache_options(eval, ev_cache);
  auto* sweep = eval->add_subcommand("sweep", "Evaluate over several frame counts");
  sweep->fallthrough();
  sweep->add_option("--runs-dir", ev_runs_dir, "Write one run JSON per frame count");
  eval->add_option("--out", ev_out, "Run JSON, or the sweep table CSV")->required();
  eval->callback([&] {
    const auto cfg = config::load_config(ev_model);
    if (!cfg.eval) throw gateway::ConfigError(ev_model + ": no model endpoint");
    auto ec = *cfg.eval;
    if (!ev_prompt.empty()) ec.prompt_mode = evalkit::parse_prompt_mode(ev_prompt);
    Runtime rt(ev_cache, &cfg);
    if (!ev_assets.empty()) rt.assets->load_file(ev_assets);
    const auto manifest = corpus::load_manifest(ev_manifest);
    const auto lookup = [&](const std::string& v) { return rt.asset(v); };
    if (sweep->parsed()) {
      const auto frames = parse_frames(ev_frames.empty() ? "4,8,16,32" : ev_frames);
      const auto runs = evalkit::frames_sweep(manifest, ec, frames, *rt.gw, lookup);
      write_file_atomic(ev_out, evalkit::sweep_table(runs));
      if (!ev_runs_dir.empty()) {
        fs::create_directories(ev_runs_dir);
        for (const auto& [n, run] : runs) evalkit::save_run(run, fs::path(ev_runs_dir) / ("frames-" + std::to_string(n) + ".json"));
      }
    } else {
      if (!ev_frames.empty()) ec.n_frames = parse_frames(ev_frames).front();
      const auto run = evalkit::run_eval(manifest, ec, *rt.gw, lookup);
      evalkit::save_run(run, ev_out);
      if (run.aggregates.overall) spdlog::info("overall {:.1f}%", evalkit::round1(*run.aggregates.overall));
    }
    rt.log_stats();
  });

  // report / corr / compare ----------------------------------------------------
  auto* report = app.add_subcommand("report", "Per-task accuracy table over runs");
  std::vector<std::string> rp_runs;
  std::string rp_format = "markdown", rp_out;
  report->add_option("--runs", rp_runs)->required();
  report->add_option("--format", rp_format)->check(CLI::IsMember({"markdown", "csv", "json"}));
  report->add_option("--out", rp_out, "Output file (stdout when omitted)");
  report->callback([&] {
    std::vector<analytics::ReportRow> rows;
    for (const auto& p : rp_runs) {
      const auto run = evalkit::load_run(p);
      rows.push_back({model_name(run, p), run.aggregates});
    }
    const auto fmt = analytics::parse_report_format(rp_format);
    if (rp_out.empty()) {
      std::cout << analytics::render_report(rows, fmt);
    } else {
      analytics::write_report(rows, fmt, rp_out);
    }
  });

  auto* corr = app.add_subcommand("corr", "Task-by-task Pearson correlation over models");
  std::string co_matrix, co_out, co_deletion = "pairwise";
  corr->add_option("--matrix", co_matrix, "Accuracy table (CSV)")->required();
  corr->add_option("--out", co_out, "Correlation matrix (CSV)")->required();
  corr->add_option("--deletion", co_deletion)->check(CLI::IsMember({"pairwise", "listwise"}));
  corr->callback([&] {
    const auto c = analytics::correlation_matrix(
        analytics::load_accuracy_csv(co_matrix),
        co_deletion == "listwise" ? analytics::Deletion::listwise : analytics::Deletion::pairwise);
    write_file_atomic(co_out, analytics::correlation_csv(c));
    const auto sep = analytics::cluster_separation(c);
    spdlog::info("mean r within task group {:.4f}, across groups {:.4f}", sep.within, sep.cross);
  });

  auto* compare = app.add_subcommand("compare", "Per-task deltas and answer flips between two runs");
  std::string cmp_a, cmp_b, cmp_manifest;
  compare->add_option("a", cmp_a)->required();
  compare->add_option("b", cmp_b)->required();
  compare->add_option("--manifest", cmp_manifest, "Enables per-task flip counts");
  compare->callback([&] {
    std::optional<corpus::Manifest> m;
    if (!cmp_manifest.empty()) m = corpus::load_manifest(cmp_manifest);
    const auto c = analytics::compare_runs(evalkit::load_run(cmp_a), evalkit::load_run(cmp_b), m ? &*m : nullptr);
    std::cout << analytics::to_json(c).dump(2) << "\n";
  });

  app.parse_complete_callback([&] { spdlog::set_level(spdlog::level::from_str(log_level)); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
