#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "vknow/common.hpp"
#include "vknow/corpus.hpp"
#include "vknow/gateway.hpp"
#include "vknow/review.hpp"
#include "vknow/rewards.hpp"

namespace vknow {

/// Minimal lifecycle shared by the HTTP services: bind, run in the
/// background or in the foreground, stop.
class HttpService {
 public:
  virtual ~HttpService();
  /// Binds host:port (port 0 picks a free port) and returns the bound port.
  /// Throws Error when the address is unavailable.
  int bind(const std::string& host, int port);
  /// Serves on a background thread; bind() must have been called.
  void start();
  /// Serves on the calling thread until stop().
  void serve_forever();
  void stop();
  int port() const noexcept { return port_; }

 protected:
  HttpService();
  struct Server;
  std::unique_ptr<Server> server_;

 private:
  int port_ = 0;
};

namespace review {

struct ReviewServiceOptions {
  std::filesystem::path decision_log;
  /// Relative local video paths are resolved against this directory.
  std::filesystem::path media_root;
  /// Static review UI bundle, served under /ui/ when set.
  std::filesystem::path ui_dir;
  /// When non-empty, POST /decision requires header X-Review-Token.
  std::string token;
  std::shared_ptr<const Clock> clock;
};

/// HTTP JSON API over a review queue:
///   GET /queue?status=   GET /item/{id}   GET /video/{id}   POST /decision   GET /progress
class ReviewService final : public HttpService {
 public:
  ReviewService(std::vector<ReviewTask> queue, ReviewServiceOptions opts);
  ~ReviewService() override;

  std::vector<ReviewTask> snapshot() const;

 private:
  struct State;
  void install_routes();

  ReviewServiceOptions opts_;
  std::unique_ptr<State> state_;
};

}  // namespace review

namespace rewards {

struct RewardServiceOptions {
  ScoringOptions scoring;
  TrainerMetadata trainer;
};

/// POST /score {"completions": [{"group_id", "item_id", "completion"}...]}
///   -> {"groups": [...], "trainer": {...}}
/// GET /healthz
class RewardService final : public HttpService {
 public:
  RewardService(corpus::Manifest manifest, VerifierConfig verifier, gateway::Gateway& gw,
                RewardServiceOptions opts = {});
  ~RewardService() override;

 private:
  corpus::Manifest manifest_;
  VerifierConfig verifier_;
  gateway::Gateway& gw_;
  RewardServiceOptions opts_;
};

nlohmann::json to_json(const TrainerMetadata& t);

}  // namespace rewards

}  // namespace vknow
