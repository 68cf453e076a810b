#include <spdlog/spdlog.h>

#include <algorithm>

#include "http_server.hpp"
#include "vknow/media.hpp"

namespace vknow {

using json = nlohmann::json;

HttpService::HttpService() : server_(std::make_unique<Server>()) {
  // No SO_REUSEPORT: a second service on a taken port must fail to bind.
  server_->http.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  });
}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->http.bind_to_any_port(host);
    if (port_ < 0) throw Error("cannot bind " + host + ":0");
  } else {
    if (!server_->http.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
    port_ = port;
  }
  return port_;
}

void HttpService::start() {
  server_->thread = std::thread([this] { server_->http.listen_after_bind(); });
  server_->http.wait_until_ready();
}

void HttpService::serve_forever() { server_->http.listen_after_bind(); }

void HttpService::stop() {
  if (!server_) return;
  server_->http.stop();
  if (server_->thread.joinable()) server_->thread.join();
}

namespace review {

struct ReviewService::State {
  std::vector<ReviewTask> queue;
  std::unique_ptr<DecisionLog> log;
  std::mutex write_mu;  // single writer over the decision log
  std::vector<ReviewDecision> decisions;
  mutable std::mutex snap_mu;
  std::shared_ptr<const std::vector<ReviewTask>> snap;

  std::shared_ptr<const std::vector<ReviewTask>> read() const {
    std::lock_guard lock(snap_mu);
    return snap;
  }
  void publish(std::vector<ReviewTask> tasks) {
    auto next = std::make_shared<const std::vector<ReviewTask>>(std::move(tasks));
    std::lock_guard lock(snap_mu);
    snap = std::move(next);
  }
};

ReviewService::ReviewService(std::vector<ReviewTask> queue, ReviewServiceOptions opts)
    : opts_(std::move(opts)), state_(std::make_unique<State>()) {
  if (!opts_.clock) opts_.clock = std::make_shared<SystemClock>();
  state_->queue = std::move(queue);
  if (!opts_.decision_log.empty()) {
    state_->log = std::make_unique<DecisionLog>(opts_.decision_log);
    for (auto& d : state_->log->load()) {
      const bool known = std::any_of(state_->queue.begin(), state_->queue.end(),
                                     [&](const ReviewTask& t) { return t.item.id == d.item_id; });
      if (!known) {
        spdlog::warn("decision log entry for unknown item {} ignored", d.item_id);
        continue;
      }
      state_->decisions.push_back(std::move(d));
    }
  }
  state_->publish(current_state(state_->queue, state_->decisions));
  install_routes();
}

ReviewService::~ReviewService() { stop(); }

std::vector<ReviewTask> ReviewService::snapshot() const { return *state_->read(); }

void ReviewService::install_routes() {
  auto& http = server_->http;
  State* st = state_.get();

  http.Get("/queue", [st](const httplib::Request& req, httplib::Response& res) {
    std::optional<Status> filter;
    if (req.has_param("status") && !req.get_param_value("status").empty()) {
      try {
        filter = parse_status(req.get_param_value("status"));
      } catch (const Error& e) {
        return send_error(res, 400, e.what());
      }
    }
    nlohmann::ordered_json tasks = nlohmann::ordered_json::array();
    for (const auto& t : *st->read()) {
      if (!filter || t.status == *filter) tasks.push_back(to_json(t));
    }
    nlohmann::ordered_json body;
    body["tasks"] = std::move(tasks);
    send_json(res, 200, body.dump());
  });

  http.Get(R"(/item/([^/]+))", [st](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    for (const auto& t : *st->read()) {
      if (t.item.id == id) return send_json(res, 200, to_json(t).dump());
    }
    send_error(res, 404, "unknown item '" + id + "'");
  });

  http.Get(R"(/video/([^/]+))", [st, this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    std::string video;
    for (const auto& t : *st->read()) {
      if (t.item.id == id) video = t.item.video;
    }
    if (video.empty()) return send_error(res, 404, "unknown item '" + id + "'");
    if (video.rfind("http://", 0) == 0 || video.rfind("https://", 0) == 0) {
      res.set_redirect(video);
      return;
    }
    auto path = media::local_path(video);
    if (path.is_relative() && !opts_.media_root.empty()) path = opts_.media_root / path;
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) return send_error(res, 404, "video file not found");
    // cpp-httplib answers Range requests (206) from the in-memory body.
    std::string ext = path.extension().string();
    const char* type = ext == ".webm" ? "video/webm" : ext == ".mkv" ? "video/x-matroska" : "video/mp4";
    res.set_content(read_file(path), type);
  });

  http.Post("/decision", [st, this](const httplib::Request& req, httplib::Response& res) {
    if (!opts_.token.empty() && req.get_header_value("X-Review-Token") != opts_.token) {
      return send_error(res, 401, "missing or invalid review token");
    }
    ReviewDecision d;
    try {
      d = decision_from_json(json::parse(req.body), opts_.clock->now());
      validate(d);
    } catch (const ValidationError& e) {
      return send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      return send_error(res, 400, std::string("malformed decision: ") + e.what());
    }
    const auto known = std::find_if(st->queue.begin(), st->queue.end(),
                                    [&](const ReviewTask& t) { return t.item.id == d.item_id; });
    if (known == st->queue.end()) return send_error(res, 404, "unknown item '" + d.item_id + "'");

    std::lock_guard lock(st->write_mu);
    try {
      if (st->log) st->log->append(d);
    } catch (const Error& e) {
      return send_error(res, 500, e.what());
    }
    st->decisions.push_back(d);
    auto tasks = current_state(st->queue, st->decisions);
    nlohmann::ordered_json body;
    for (const auto& t : tasks) {
      if (t.item.id == d.item_id) body = to_json(t);
    }
    st->publish(std::move(tasks));
    send_json(res, 200, body.dump());
  });

  http.Get("/progress", [st](const httplib::Request&, httplib::Response& res) {
    std::map<Status, int> counts;
    const auto snap = st->read();
    for (const auto& t : *snap) ++counts[t.status];
    const int total = static_cast<int>(snap->size());
    const json body = {{"total", total},
                       {"pending", counts[Status::pending]},
                       {"accepted", counts[Status::accepted]},
                       {"rejected", counts[Status::rejected]},
                       {"edited", counts[Status::edited]},
                       {"decided", total - counts[Status::pending]}};
    send_json(res, 200, body.dump());
  });

  if (!opts_.ui_dir.empty()) {
    if (!http.set_mount_point("/ui", opts_.ui_dir.string())) {
      spdlog::warn("review UI directory {} not found; /ui/ disabled", opts_.ui_dir.string());
    }
  }
}

}  // namespace review
}  // namespace vknow
