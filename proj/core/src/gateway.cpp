#include "vknow/gateway.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <thread>

namespace vknow::gateway {

using json = nlohmann::json;

std::string_view to_string(EndpointKind k) noexcept {
  switch (k) {
    case EndpointKind::chat:
      return "chat";
    case EndpointKind::chat_vision:
      return "chat_vision";
    case EndpointKind::embedding:
      return "embedding";
    case EndpointKind::transcription:
      return "transcription";
  }
  return "?";
}

EndpointKind parse_endpoint_kind(std::string_view s) {
  if (s == "chat") return EndpointKind::chat;
  if (s == "chat_vision") return EndpointKind::chat_vision;
  if (s == "embedding") return EndpointKind::embedding;
  if (s == "transcription") return EndpointKind::transcription;
  throw ConfigError("unknown endpoint kind '" + std::string(s) + "'");
}

std::string_view to_string(CacheMode m) noexcept {
  switch (m) {
    case CacheMode::off:
      return "off";
    case CacheMode::record:
      return "record";
    case CacheMode::replay:
      return "replay";
  }
  return "?";
}

CacheMode parse_cache_mode(std::string_view s) {
  if (s == "off") return CacheMode::off;
  if (s == "record") return CacheMode::record;
  if (s == "replay") return CacheMode::replay;
  throw ConfigError("unknown cache mode '" + std::string(s) + "'");
}

void SamplingParams::validate() const {
  if (!(temperature >= 0) || !std::isfinite(temperature)) throw ConfigError("temperature must be >= 0");
  if (!(top_p > 0 && top_p <= 1)) throw ConfigError("top_p must be in (0, 1]");
  if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
}

void EndpointConfig::validate() const {
  if (base_url.empty()) throw ConfigError("endpoint base_url is empty");
  if (model.empty()) throw ConfigError("endpoint model is empty");
  if (max_parallel < 1) throw ConfigError("max_parallel must be >= 1");
  if (retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be >= 1");
  sampling.validate();
}

json to_json(const EndpointConfig& cfg) {
  json j;
  j["base_url"] = cfg.base_url;
  j["model"] = cfg.model;
  j["kind"] = to_string(cfg.kind);
  j["sampling"] = {{"temperature", cfg.sampling.temperature},
                   {"top_p", cfg.sampling.top_p},
                   {"seed", cfg.sampling.seed ? json(*cfg.sampling.seed) : json(nullptr)},
                   {"max_tokens", cfg.sampling.max_tokens},
                   {"n_samples", cfg.sampling.n_samples}};
  j["max_parallel"] = cfg.max_parallel;
  j["retry"] = {{"max_attempts", cfg.retry.max_attempts},
                {"backoff_ms", cfg.retry.backoff.count()},
                {"multiplier", cfg.retry.multiplier}};
  return j;
}

std::string HttpRequest::header(std::string_view name) const {
  for (const auto& [k, v] : headers) {
    if (to_lower_ascii(k) == to_lower_ascii(name)) return v;
  }
  return {};
}

// ---------------------------------------------------------------------------

struct Gateway::Limiter {
  std::mutex mu;
  std::condition_variable cv;
  int in_flight = 0;
  int peak = 0;
  int capacity = 1;

  void acquire() {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return in_flight < capacity; });
    ++in_flight;
    peak = std::max(peak, in_flight);
  }
  void release() {
    {
      std::lock_guard lock(mu);
      --in_flight;
    }
    cv.notify_one();
  }
};

namespace {

std::string sanitize_dir_name(std::string_view s) {
  std::string out;
  for (char c : s) {
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_' ? c : '_');
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

std::string endpoint_id(const EndpointConfig& cfg) { return cfg.base_url + "|" + cfg.model; }

void require_kind(const EndpointConfig& cfg, std::initializer_list<EndpointKind> allowed, const char* op) {
  if (std::find(allowed.begin(), allowed.end(), cfg.kind) == allowed.end()) {
    throw ConfigError(std::string(op) + " is not supported by a '" + std::string(to_string(cfg.kind)) +
                      "' endpoint (" + cfg.model + ")");
  }
}

std::vector<std::pair<std::string, std::string>> auth_headers(const EndpointConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> h;
  if (!cfg.auth_env.empty()) {
    if (const char* secret = std::getenv(cfg.auth_env.c_str()); secret && *secret) {
      h.emplace_back("Authorization", std::string("Bearer ") + secret);
    }
  }
  return h;
}

json sampling_json(const SamplingParams& s) {
  return {{"temperature", s.temperature},
          {"top_p", s.top_p},
          {"seed", s.seed ? json(*s.seed) : json(nullptr)},
          {"max_tokens", s.max_tokens}};
}

}  // namespace

Gateway::Gateway(GatewayOptions opts) : opts_(std::move(opts)) {
  if (!opts_.clock) opts_.clock = std::make_shared<SystemClock>();
  if (!opts_.sleep) opts_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  if (opts_.mode != CacheMode::off && opts_.cache_dir.empty()) {
    throw ConfigError("cache mode '" + std::string(to_string(opts_.mode)) + "' needs a cache directory");
  }
  if (opts_.mode != CacheMode::replay && !opts_.transport) opts_.transport = make_http_transport();
}

Gateway::~Gateway() = default;

GatewayStats Gateway::stats() const {
  return {network_calls_.load(), cache_hits_.load(), cache_writes_.load()};
}

int Gateway::peak_in_flight(const EndpointConfig& cfg) const {
  std::lock_guard lock(mu_);
  auto it = limiters_.find(endpoint_id(cfg));
  if (it == limiters_.end()) return 0;
  std::lock_guard inner(it->second->mu);
  return it->second->peak;
}

Gateway::Limiter& Gateway::limiter_for(const EndpointConfig& cfg) {
  std::lock_guard lock(mu_);
  auto& slot = limiters_[endpoint_id(cfg)];
  if (!slot) {
    slot = std::make_unique<Limiter>();
    slot->capacity = cfg.max_parallel;
  }
  return *slot;
}

std::string Gateway::cache_key(const EndpointConfig& cfg, const json& canonical_request) {
  const json envelope = {{"kind", to_string(cfg.kind)}, {"model", cfg.model}, {"request", canonical_request}};
  return sha256_hex(envelope.dump());
}

std::filesystem::path Gateway::cache_path(const EndpointConfig& cfg, const std::string& key) const {
  return opts_.cache_dir / sanitize_dir_name(cfg.model) / (key + ".json");
}

json Gateway::canonical_chat(const EndpointConfig& cfg, const std::vector<Message>& messages, int sample_index) {
  json msgs = json::array();
  for (const auto& m : messages) {
    json jm = {{"role", m.role}, {"text", m.text}};
    if (m.frames) {
      jm["frames"] = {{"video", m.frames->video},
                      {"timestamps", m.frames->timestamps},
                      {"resolution_budget", m.frames->resolution_budget}};
    }
    msgs.push_back(std::move(jm));
  }
  return {{"messages", std::move(msgs)}, {"sampling", sampling_json(cfg.sampling)}, {"sample_index", sample_index}};
}

json Gateway::canonical_embed(const EndpointConfig&, std::string_view text) { return {{"input", text}}; }

json Gateway::canonical_transcribe(const EndpointConfig&, const AudioSource& audio) {
  return {{"audio", audio.identity}, {"response_format", "verbose_json"}};
}

std::optional<Gateway::CachedResponse> Gateway::cache_lookup(const EndpointConfig& cfg, const std::string& key) {
  if (opts_.mode == CacheMode::off) return std::nullopt;
  const auto path = cache_path(cfg, key);
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) return std::nullopt;
  json entry;
  try {
    entry = json::parse(read_file(path));
  } catch (const std::exception& e) {
    throw Error("corrupt cache entry " + path.string() + ": " + e.what());
  }
  cache_hits_.fetch_add(1);
  return CachedResponse{entry.at("response"), entry.value("latency_s", 0.0)};
}

void Gateway::cache_store(const EndpointConfig& cfg, const std::string& key, const json& request,
                          const json& response, double latency_s) {
  if (opts_.mode != CacheMode::record) return;
  json entry = {{"key", key},
                {"kind", to_string(cfg.kind)},
                {"model", cfg.model},
                {"request", request},
                {"response", response},
                {"latency_s", latency_s},
                {"recorded_at", format_timestamp(opts_.clock->now())}};
  write_file_atomic(cache_path(cfg, key), entry.dump(2) + "\n");
  cache_writes_.fetch_add(1);
}

HttpResponse Gateway::send_with_retry(const EndpointConfig& cfg, const HttpRequest& req) {
  if (!opts_.transport) throw Error("gateway has no transport configured");
  auto& limiter = limiter_for(cfg);
  auto delay = cfg.retry.backoff;
  GatewayError last(GatewayError::Kind::transport, 0, "no attempts made");
  for (int attempt = 1; attempt <= cfg.retry.max_attempts; ++attempt) {
    if (attempt > 1) {
      opts_.sleep(delay);
      delay = std::chrono::milliseconds(
          static_cast<std::int64_t>(static_cast<double>(delay.count()) * cfg.retry.multiplier));
    }
    network_calls_.fetch_add(1);
    limiter.acquire();
    std::optional<HttpResponse> resp;
    try {
      resp = opts_.transport->send(req);
    } catch (const TransportError& e) {
      last = GatewayError(e.timeout() ? GatewayError::Kind::timeout : GatewayError::Kind::transport, 0,
                          cfg.model + ": " + e.what());
    }
    limiter.release();
    if (!resp) {
      spdlog::warn("{} attempt {}/{} failed: {}", cfg.model, attempt, cfg.retry.max_attempts, last.what());
      continue;
    }
    if (resp->status >= 200 && resp->status < 300) return *resp;
    const bool transient = resp->status >= 500 || resp->status == 429 || resp->status == 408;
    GatewayError err(GatewayError::Kind::http_status, resp->status,
                     cfg.model + ": HTTP " + std::to_string(resp->status) + " " + resp->body.substr(0, 200));
    if (!transient) throw err;
    spdlog::warn("{} attempt {}/{}: HTTP {}", cfg.model, attempt, cfg.retry.max_attempts, resp->status);
    last = err;
  }
  throw last;
}

Gateway::CachedResponse Gateway::execute(const EndpointConfig& cfg, const json& canonical,
                                         const std::function<HttpRequest()>& build,
                                         const std::function<json(const std::string&)>& decode,
                                         std::string& key_out, bool& from_cache) {
  key_out = cache_key(cfg, canonical);
  if (auto hit = cache_lookup(cfg, key_out)) {
    from_cache = true;
    return *hit;
  }
  if (opts_.mode == CacheMode::replay) throw ReplayMiss(key_out);

  from_cache = false;
  HttpRequest req = build();
  req.base_url = cfg.base_url;
  req.timeout = cfg.timeout;
  for (auto& h : auth_headers(cfg)) req.headers.push_back(std::move(h));

  const auto start = std::chrono::steady_clock::now();
  const HttpResponse resp = send_with_retry(cfg, req);
  const double latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json decoded;
  try {
    decoded = decode(resp.body);
  } catch (const GatewayError&) {
    throw;
  } catch (const std::exception& e) {
    throw GatewayError(GatewayError::Kind::decode, resp.status, cfg.model + ": cannot decode response: " + e.what());
  }
  cache_store(cfg, key_out, canonical, decoded, latency);
  return {std::move(decoded), latency};
}

ChatResult Gateway::chat_ex(const EndpointConfig& cfg, const std::vector<Message>& messages, int sample_index) {
  require_kind(cfg, {EndpointKind::chat, EndpointKind::chat_vision}, "chat");
  for (const auto& m : messages) {
    if (m.frames && cfg.kind != EndpointKind::chat_vision) {
      throw ConfigError("frames attached to a text-only endpoint (" + cfg.model + ")");
    }
  }
  const json canonical = canonical_chat(cfg, messages, sample_index);

  auto build = [&] {
    json wire_msgs = json::array();
    for (const auto& m : messages) {
      if (!m.frames) {
        wire_msgs.push_back({{"role", m.role}, {"content", m.text}});
        continue;
      }
      if (!opts_.frame_resolver) throw ConfigError("no frame resolver configured for vision requests");
      json parts = json::array();
      for (const auto& url : opts_.frame_resolver(*m.frames)) {
        parts.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
      }
      parts.push_back({{"type", "text"}, {"text", m.text}});
      wire_msgs.push_back({{"role", m.role}, {"content", std::move(parts)}});
    }
    json body = {{"model", cfg.model},
                 {"messages", std::move(wire_msgs)},
                 {"temperature", cfg.sampling.temperature},
                 {"top_p", cfg.sampling.top_p},
                 {"max_tokens", cfg.sampling.max_tokens}};
    if (cfg.sampling.seed) body["seed"] = *cfg.sampling.seed + sample_index;
    HttpRequest req;
    req.path = "/chat/completions";
    req.body = body.dump();
    req.headers.emplace_back("X-Sample-Index", std::to_string(sample_index));
    return req;
  };
  auto decode = [](const std::string& body) -> json {
    const json j = json::parse(body);
    const auto& content = j.at("choices").at(0).at("message").at("content");
    return {{"text", content.is_null() ? std::string() : content.get<std::string>()}};
  };

  ChatResult out;
  const auto resp = execute(cfg, canonical, build, decode, out.cache_key, out.from_cache);
  out.text = resp.response.at("text").get<std::string>();
  out.latency_s = resp.latency_s;
  return out;
}

std::string Gateway::chat(const EndpointConfig& cfg, const std::vector<Message>& messages, int sample_index) {
  return chat_ex(cfg, messages, sample_index).text;
}

std::vector<std::string> Gateway::sample_n(const EndpointConfig& cfg, const std::vector<Message>& messages, int n) {
  if (n < 1) throw ConfigError("sample_n requires n >= 1");
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(chat(cfg, messages, i));
  return out;
}

void Gateway::check_dimension(const EndpointConfig& cfg, std::size_t dim) {
  std::lock_guard lock(mu_);
  auto [it, inserted] = embedding_dims_.try_emplace(cfg.model, dim);
  if (!inserted && it->second != dim) throw DimensionMismatch(it->second, dim);
}

std::vector<double> Gateway::embed(const EndpointConfig& cfg, std::string_view text) {
  require_kind(cfg, {EndpointKind::embedding}, "embed");
  const json canonical = canonical_embed(cfg, text);
  auto build = [&] {
    HttpRequest req;
    req.path = "/embeddings";
    req.body = json{{"model", cfg.model}, {"input", text}}.dump();
    return req;
  };
  auto decode = [](const std::string& body) -> json {
    const json j = json::parse(body);
    return {{"embedding", j.at("data").at(0).at("embedding").get<std::vector<double>>()}};
  };
  std::string key;
  bool from_cache = false;
  const auto resp = execute(cfg, canonical, build, decode, key, from_cache);
  auto vec = resp.response.at("embedding").get<std::vector<double>>();
  check_dimension(cfg, vec.size());
  return vec;
}

TranscriptionResult Gateway::transcribe(const EndpointConfig& cfg, const AudioSource& audio) {
  require_kind(cfg, {EndpointKind::transcription}, "transcribe");
  const json canonical = canonical_transcribe(cfg, audio);
  auto build = [&] {
    if (!audio.extract) throw ConfigError("no audio extractor for " + audio.identity);
    const auto path = audio.extract();
    HttpRequest req;
    req.path = "/audio/transcriptions";
    req.multipart = {{"model", cfg.model, "", ""},
                     {"response_format", "verbose_json", "", ""},
                     {"file", read_file(path), path.filename().string(), "application/octet-stream"}};
    return req;
  };
  auto decode = [](const std::string& body) -> json {
    const json j = json::parse(body);
    json segs = json::array();
    if (j.contains("segments") && j.at("segments").is_array()) {
      for (const auto& s : j.at("segments")) {
        segs.push_back({{"start", s.at("start").get<double>()},
                        {"end", s.at("end").get<double>()},
                        {"text", s.at("text").get<std::string>()}});
      }
    }
    return {{"text", j.value("text", std::string())}, {"segments", std::move(segs)}};
  };
  std::string key;
  bool from_cache = false;
  const auto resp = execute(cfg, canonical, build, decode, key, from_cache);
  TranscriptionResult out;
  out.text = resp.response.at("text").get<std::string>();
  for (const auto& s : resp.response.at("segments")) {
    out.segments.push_back({s.at("start").get<double>(), s.at("end").get<double>(), s.at("text").get<std::string>()});
  }
  return out;
}

}  // namespace vknow::gateway
