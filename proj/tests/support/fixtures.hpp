#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mock_openai.hpp"
#include "vknow/corpus.hpp"
#include "vknow/gateway.hpp"
#include "vknow/media.hpp"

namespace vknow::test {

inline corpus::QAItem make_item(std::string id, corpus::Task task, std::vector<std::string> options,
                                std::size_t answer, std::string question = {}) {
  corpus::QAItem it;
  it.id = std::move(id);
  it.video = "file:///videos/" + it.id + ".mp4";
  it.dimension = task;
  it.question = question.empty() ? "What happens next in clip " + it.id + "?" : std::move(question);
  it.options = std::move(options);
  it.answer_index = answer;
  return it;
}

inline std::vector<std::string> numbered_options(const std::string& id, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(id + " option " + std::to_string(i));
  return out;
}

// n items spread round-robin over the eight tasks.
inline corpus::Manifest synthetic_manifest(std::size_t n, std::size_t n_options = 4, std::uint64_t seed = 7) {
  corpus::Manifest m;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "q%03zu", i);
    const auto task = corpus::kAllTasks[i % 8];
    m.items.push_back(make_item(buf, task, numbered_options(buf, n_options), rng() % n_options));
  }
  return m;
}

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("vknow-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline gateway::EndpointConfig endpoint(std::string model, gateway::EndpointKind kind = gateway::EndpointKind::chat) {
  gateway::EndpointConfig e;
  e.base_url = "http://mock.invalid/v1";
  e.model = std::move(model);
  e.kind = kind;
  e.retry.backoff = std::chrono::milliseconds(0);
  return e;
}

inline gateway::GatewayOptions scripted_options(std::shared_ptr<gateway::Transport> transport,
                                                std::filesystem::path cache_dir = {},
                                                gateway::CacheMode mode = gateway::CacheMode::off) {
  gateway::GatewayOptions o;
  o.cache_dir = std::move(cache_dir);
  o.mode = mode;
  o.transport = std::move(transport);
  o.frame_resolver = fake_frame_resolver();
  o.clock = std::make_shared<FixedClock>();
  o.sleep = [](std::chrono::milliseconds) {};
  return o;
}

// Every video is a 60 s clip at 30 fps.
inline media::VideoAsset fake_asset(const std::string& ref) { return {ref, 60.0, 30.0, 640, 360}; }

}  // namespace vknow::test
