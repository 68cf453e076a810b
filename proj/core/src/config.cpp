#include "vknow/config.hpp"

#include <toml.hpp>

namespace vknow::config {

namespace {

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  const toml::table* endpoints_ = nullptr;

  [[noreturn]] void fail(const std::string& where, const std::string& what) const {
    throw gateway::ConfigError(source_ + ": " + where + ": " + what);
  }

  template <class T>
  void get(const toml::table& t, std::string_view key, T& out, const std::string& where) const {
    const toml::node* n = t.get(key);
    if (!n) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (auto v = n->value<bool>()) return void(out = *v);
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (auto v = n->value<std::string>()) return void(out = *v);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (auto v = n->value<double>()) return void(out = *v);
    } else if constexpr (std::is_integral_v<T>) {
      if (auto v = n->value<std::int64_t>()) {
        if (std::is_unsigned_v<T> && *v < 0) fail(where + "." + std::string(key), "must not be negative");
        return void(out = static_cast<T>(*v));
      }
    }
    fail(where + "." + std::string(key), "has the wrong type");
  }

  const toml::table* table(const toml::table& t, std::string_view key, const std::string& where) const {
    const toml::node* n = t.get(key);
    if (!n) return nullptr;
    if (!n->is_table()) fail(where + "." + std::string(key), "must be a table");
    return n->as_table();
  }

  gateway::SamplingParams sampling(const toml::table& t, gateway::SamplingParams s, const std::string& where) const {
    get(t, "temperature", s.temperature, where);
    get(t, "top_p", s.top_p, where);
    get(t, "max_tokens", s.max_tokens, where);
    get(t, "n_samples", s.n_samples, where);
    if (const toml::node* n = t.get("seed")) {
      auto v = n->value<std::int64_t>();
      if (!v) fail(where + ".seed", "must be an integer");
      s.seed = *v;
    }
    return s;
  }

  gateway::EndpointConfig endpoint(const toml::table& t, const std::string& where,
                                   gateway::SamplingParams default_sampling = {}) const {
    gateway::EndpointConfig e;
    e.sampling = default_sampling;
    get(t, "base_url", e.base_url, where);
    get(t, "model", e.model, where);
    std::string kind = "chat";
    get(t, "kind", kind, where);
    try {
      e.kind = gateway::parse_endpoint_kind(kind);
    } catch (const Error& err) {
      fail(where + ".kind", err.what());
    }
    get(t, "auth_env", e.auth_env, where);
    get(t, "max_parallel", e.max_parallel, where);
    std::int64_t timeout_ms = e.timeout.count();
    get(t, "timeout_ms", timeout_ms, where);
    e.timeout = std::chrono::milliseconds(timeout_ms);
    if (const auto* s = table(t, "sampling", where)) e.sampling = sampling(*s, e.sampling, where + ".sampling");
    if (const auto* r = table(t, "retry", where)) {
      get(*r, "max_attempts", e.retry.max_attempts, where + ".retry");
      std::int64_t backoff_ms = e.retry.backoff.count();
      get(*r, "backoff_ms", backoff_ms, where + ".retry");
      e.retry.backoff = std::chrono::milliseconds(backoff_ms);
      get(*r, "multiplier", e.retry.multiplier, where + ".retry");
    }
    try {
      e.validate();
    } catch (const Error& err) {
      fail(where, err.what());
    }
    return e;
  }

  // An endpoint reference: either a name from [endpoints] or an inline table.
  gateway::EndpointConfig ref(const toml::table& t, std::string_view key, const ToolConfig& cfg,
                              const std::string& where, gateway::SamplingParams default_sampling = {}) const {
    const toml::node* n = t.get(key);
    if (!n) fail(where + "." + std::string(key), "is required");
    return resolve(*n, cfg, where + "." + std::string(key), default_sampling);
  }

  gateway::EndpointConfig resolve(const toml::node& n, const ToolConfig& cfg, const std::string& where,
                                  gateway::SamplingParams default_sampling = {}) const {
    if (auto name = n.value<std::string>()) {
      if (!cfg.endpoints.contains(*name) || !endpoints_) fail(where, "unknown endpoint '" + *name + "'");
      // Re-read so the role's default sampling applies when the entry sets none.
      return endpoint(*endpoints_->get(*name)->as_table(), "endpoints." + *name, default_sampling);
    }
    if (n.is_table()) return endpoint(*n.as_table(), where, default_sampling);
    fail(where, "must be an endpoint name or table");
  }

  bool declares_kind(const toml::node& n) const {
    const toml::table* t = n.as_table();
    if (auto name = n.value<std::string>(); name && endpoints_) {
      if (const toml::node* e = endpoints_->get(*name)) t = e->as_table();
    }
    return t && t->contains("kind");
  }

 private:
  std::string source_;
};

}  // namespace

ToolConfig parse_config(std::string_view toml_text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    const auto& where = e.source().begin;
    throw gateway::ConfigError(source + ":" + std::to_string(where.line) + ":" + std::to_string(where.column) +
                               ": " + std::string(e.description()));
  }
  Reader rd(source);
  ToolConfig cfg;

  if (const auto* eps = rd.table(root, "endpoints", "")) {
    rd.endpoints_ = eps;
    for (const auto& [name, node] : *eps) {
      const std::string where = "endpoints." + std::string(name.str());
      if (!node.is_table()) rd.fail(where, "must be a table");
      cfg.endpoints.emplace(std::string(name.str()), rd.endpoint(*node.as_table(), where));
    }
  }

  if (const auto* g = rd.table(root, "gateway", "")) {
    std::string dir;
    rd.get(*g, "cache_dir", dir, "gateway");
    cfg.cache_dir = dir;
    if (g->contains("mode")) {
      std::string mode;
      rd.get(*g, "mode", mode, "gateway");
      cfg.cache_mode = gateway::parse_cache_mode(mode);
    }
  }

  if (const auto* t = rd.table(root, "template", "")) {
    rd.get(*t, "see", cfg.tmpl.see, "template");
    rd.get(*t, "think", cfg.tmpl.think, "template");
    rd.get(*t, "answer", cfg.tmpl.answer, "template");
  }

  if (root.contains("transcriber")) cfg.transcriber = rd.resolve(*root.get("transcriber"), cfg, "transcriber");

  if (const auto* d = rd.table(root, "debias", "")) {
    debias::DebiasConfig dc;
    rd.get(*d, "sim_threshold", dc.sim_threshold, "debias");
    rd.get(*d, "n_trials", dc.n_trials, "debias");
    rd.get(*d, "trial_pass_count", dc.trial_pass_count, "debias");
    rd.get(*d, "model_quorum", dc.model_quorum, "debias");
    rd.get(*d, "panel_size", dc.panel_size, "debias");
    rd.get(*d, "blind_prompt", dc.blind_prompt, "debias");
    rd.get(*d, "rewrite_prompt", dc.rewrite_prompt, "debias");
    rd.get(*d, "rewrite_attempts", dc.rewrite_attempts, "debias");
    rd.get(*d, "per_segment", dc.per_segment, "debias");
    rd.get(*d, "skip_world_centric_stage2", dc.skip_world_centric_stage2, "debias");
    rd.get(*d, "workers", dc.workers, "debias");
    // Blind trials default to high-temperature sampling for independent answers.
    const auto blind = gateway::SamplingParams::with(1.0, 1.0);
    if (const toml::node* p = d->get("panel")) {
      const toml::array* arr = p->as_array();
      if (!arr) rd.fail("debias.panel", "must be an array");
      for (std::size_t i = 0; i < arr->size(); ++i) {
        gateway::EndpointConfig e = rd.resolve(*arr->get(i), cfg, "debias.panel[" + std::to_string(i) + "]", blind);
        dc.panel.push_back(std::move(e));
      }
    }
    if (d->contains("embedder")) dc.embedder = rd.ref(*d, "embedder", cfg, "debias");
    if (d->contains("rewriter")) dc.rewriter = rd.ref(*d, "rewriter", cfg, "debias");
    try {
      dc.validate();
    } catch (const Error& e) {
      rd.fail("debias", e.what());
    }
    cfg.debias = std::move(dc);
  }

  if (const auto* v = rd.table(root, "verifier", "")) {
    rewards::VerifierConfig vc;
    vc.endpoint = rd.ref(*v, "endpoint", cfg, "verifier");
    rd.get(*v, "prompt_template", vc.prompt_template, "verifier");
    rd.get(*v, "include_options", vc.include_options, "verifier");
    rd.get(*v, "lenient", vc.lenient, "verifier");
    try {
      vc.validate();
    } catch (const Error& e) {
      rd.fail("verifier", e.what());
    }
    cfg.verifier = std::move(vc);
  }

  if (const auto* r = rd.table(root, "rewards", "")) {
    rd.get(*r, "lambda", cfg.weights.lambda, "rewards");
    cfg.weights.validate();
  }
  if (const auto* t = rd.table(root, "trainer", "")) {
    rd.get(*t, "kl_beta", cfg.trainer.kl_beta, "trainer");
    rd.get(*t, "clip_epsilon", cfg.trainer.clip_epsilon, "trainer");
    rd.get(*t, "num_generations", cfg.trainer.num_generations, "trainer");
  }

  const auto eval_from = [&](const toml::table& t, const std::string& where) {
    evalkit::EvalConfig ec;
    ec.model = rd.ref(t, "model", cfg, where);
    if (!rd.declares_kind(*t.get("model"))) ec.model.kind = gateway::EndpointKind::chat_vision;
    rd.get(t, "n_frames", ec.n_frames, where);
    std::string mode = "vanilla";
    rd.get(t, "prompt_mode", mode, where);
    ec.prompt_mode = evalkit::parse_prompt_mode(mode);
    if (const auto* s = rd.table(t, "sampling", where)) ec.sampling = rd.sampling(*s, ec.sampling, where + ".sampling");
    rd.get(t, "resolution_budget", ec.resolution_budget, where);
    rd.get(t, "vanilla_prompt", ec.vanilla_prompt, where);
    rd.get(t, "sta_prompt", ec.sta_prompt, where);
    rd.get(t, "workers", ec.workers, where);
    ec.tmpl = cfg.tmpl;
    return ec;
  };
  if (const auto* e = rd.table(root, "eval", "")) {
    cfg.eval = eval_from(*e, "eval");
  } else if (root.contains("base_url")) {
    evalkit::EvalConfig ec;
    ec.model = rd.endpoint(root, "model");
    if (!root.contains("kind")) ec.model.kind = gateway::EndpointKind::chat_vision;
    ec.tmpl = cfg.tmpl;
    cfg.eval = std::move(ec);
  }

  if (const auto* g = rd.table(root, "generator", "")) {
    coldstart::GeneratorConfig gc;
    gc.endpoint = rd.ref(*g, "endpoint", cfg, "generator", gateway::SamplingParams::with(1.0, 1.0));
    rd.get(*g, "k", gc.k, "generator");
    rd.get(*g, "n_frames", gc.n_frames, "generator");
    rd.get(*g, "resolution_budget", gc.resolution_budget, "generator");
    rd.get(*g, "prompt_template", gc.prompt_template, "generator");
    rd.get(*g, "workers", gc.workers, "generator");
    gc.tmpl = cfg.tmpl;
    cfg.generator = std::move(gc);
  }
  return cfg;
}

ToolConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path), path.string()); }

}  // namespace vknow::config
