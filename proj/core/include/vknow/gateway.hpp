#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vknow/common.hpp"

namespace vknow::gateway {

enum class EndpointKind { chat, chat_vision, embedding, transcription };

std::string_view to_string(EndpointKind k) noexcept;
EndpointKind parse_endpoint_kind(std::string_view s);

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct SamplingParams {
  double temperature = 0.0;
  double top_p = 1.0;
  std::optional<std::int64_t> seed;
  int max_tokens = 1024;
  int n_samples = 1;

  void validate() const;
  bool operator==(const SamplingParams&) const = default;

  static SamplingParams with(double temperature, double top_p) {
    SamplingParams s;
    s.temperature = temperature;
    s.top_p = top_p;
    return s;
  }
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds backoff{500};
  double multiplier = 2.0;

  bool operator==(const RetryPolicy&) const = default;
};

struct EndpointConfig {
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string model;
  EndpointKind kind = EndpointKind::chat;
  SamplingParams sampling;
  std::string auth_env;  // name of the environment variable holding the API key
  int max_parallel = 4;
  RetryPolicy retry;
  std::chrono::milliseconds timeout{120'000};

  void validate() const;
  bool operator==(const EndpointConfig&) const = default;
};

nlohmann::json to_json(const EndpointConfig& cfg);  // never includes the secret itself

/// Frames are carried by reference; pixels are only materialized when a live
/// request is sent (see FrameResolver).
struct FrameAttachment {
  std::string video;
  std::vector<double> timestamps;
  std::string resolution_budget;

  bool operator==(const FrameAttachment&) const = default;
};

struct Message {
  std::string role;
  std::string text;
  std::optional<FrameAttachment> frames;
};

// ---------------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------------

struct MultipartField {
  std::string name;
  std::string content;
  std::string filename;
  std::string content_type;
};

struct HttpRequest {
  std::string base_url;
  std::string path;  // appended to base_url, e.g. "/chat/completions"
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
  std::string content_type = "application/json";
  std::vector<MultipartField> multipart;  // non-empty => multipart/form-data
  std::chrono::milliseconds timeout{120'000};

  std::string header(std::string_view name) const;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

class TransportError : public Error {
 public:
  TransportError(const std::string& what, bool timeout) : Error(what), timeout_(timeout) {}
  bool timeout() const noexcept { return timeout_; }

 private:
  bool timeout_;
};

class Transport {
 public:
  virtual ~Transport() = default;
  /// Throws TransportError when no HTTP response was obtained.
  virtual HttpResponse send(const HttpRequest& req) = 0;
};

/// cpp-httplib backed transport; supports http and https base URLs.
std::shared_ptr<Transport> make_http_transport();

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class GatewayError : public Error {
 public:
  enum class Kind { timeout, http_status, decode, transport };
  GatewayError(Kind kind, int http_status, const std::string& what)
      : Error(what), kind_(kind), http_status_(http_status) {}
  Kind kind() const noexcept { return kind_; }
  int http_status() const noexcept { return http_status_; }

 private:
  Kind kind_;
  int http_status_;
};

class ReplayMiss : public Error {
 public:
  explicit ReplayMiss(const std::string& digest)
      : Error("replay cache miss for request " + digest), digest_(digest) {}
  const std::string& digest() const noexcept { return digest_; }

 private:
  std::string digest_;
};

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

enum class CacheMode {
  off,     // no disk cache
  record,  // read-through: hits are served from disk, misses go to the network and are written
  replay,  // read-only: misses are errors and the transport is never used
};

std::string_view to_string(CacheMode m) noexcept;
CacheMode parse_cache_mode(std::string_view s);

/// Turns frame references into image URLs (usually base64 data URLs).
using FrameResolver = std::function<std::vector<std::string>(const FrameAttachment&)>;

struct AudioSource {
  std::string identity;                            // stable id used in the cache key
  std::function<std::filesystem::path()> extract;  // only invoked on a live call
};

struct TranscriptSegment {
  double start = 0;
  double end = 0;
  std::string text;
  bool operator==(const TranscriptSegment&) const = default;
};

struct TranscriptionResult {
  std::string text;
  std::vector<TranscriptSegment> segments;
};

struct ChatResult {
  std::string text;
  double latency_s = 0;  // as measured when the response was first recorded
  bool from_cache = false;
  std::string cache_key;
};

struct GatewayOptions {
  std::filesystem::path cache_dir;
  CacheMode mode = CacheMode::off;
  std::shared_ptr<Transport> transport;
  FrameResolver frame_resolver;
  std::shared_ptr<const Clock> clock;
  /// Backoff sleeper; tests replace it to keep retries instant.
  std::function<void(std::chrono::milliseconds)> sleep;
};

struct GatewayStats {
  std::uint64_t network_calls = 0;  // HTTP attempts, including retries
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_writes = 0;
};

class Gateway {
 public:
  explicit Gateway(GatewayOptions opts);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  std::string chat(const EndpointConfig& cfg, const std::vector<Message>& messages, int sample_index = 0);
  ChatResult chat_ex(const EndpointConfig& cfg, const std::vector<Message>& messages, int sample_index = 0);

  /// n completions, sample indices 0..n-1, returned in index order.
  std::vector<std::string> sample_n(const EndpointConfig& cfg, const std::vector<Message>& messages, int n);

  std::vector<double> embed(const EndpointConfig& cfg, std::string_view text);

  TranscriptionResult transcribe(const EndpointConfig& cfg, const AudioSource& audio);

  /// Content digest of a canonical request; identical logical requests share
  /// a key and any change in sampling parameters or message bytes changes it.
  static std::string cache_key(const EndpointConfig& cfg, const nlohmann::json& canonical_request);
  static nlohmann::json canonical_chat(const EndpointConfig& cfg, const std::vector<Message>& messages,
                                       int sample_index);
  static nlohmann::json canonical_embed(const EndpointConfig& cfg, std::string_view text);
  static nlohmann::json canonical_transcribe(const EndpointConfig& cfg, const AudioSource& audio);

  std::filesystem::path cache_path(const EndpointConfig& cfg, const std::string& key) const;

  CacheMode mode() const noexcept { return opts_.mode; }
  GatewayStats stats() const;
  /// Highest number of simultaneous requests observed for the endpoint.
  int peak_in_flight(const EndpointConfig& cfg) const;

 private:
  struct Limiter;
  struct CachedResponse {
    nlohmann::json response;
    double latency_s = 0;
  };

  std::optional<CachedResponse> cache_lookup(const EndpointConfig& cfg, const std::string& key);
  void cache_store(const EndpointConfig& cfg, const std::string& key, const nlohmann::json& request,
                   const nlohmann::json& response, double latency_s);

  /// Cache lookup, then (if allowed) a retried network call whose response
  /// body is decoded by `decode`.
  CachedResponse execute(const EndpointConfig& cfg, const nlohmann::json& canonical,
                         const std::function<HttpRequest()>& build,
                         const std::function<nlohmann::json(const std::string&)>& decode, std::string& key_out,
                         bool& from_cache);

  HttpResponse send_with_retry(const EndpointConfig& cfg, const HttpRequest& req);
  Limiter& limiter_for(const EndpointConfig& cfg);
  void check_dimension(const EndpointConfig& cfg, std::size_t dim);

  GatewayOptions opts_;
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Limiter>> limiters_;
  std::map<std::string, std::size_t> embedding_dims_;
  std::atomic<std::uint64_t> network_calls_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
  std::atomic<std::uint64_t> cache_writes_{0};
};

}  // namespace vknow::gateway
