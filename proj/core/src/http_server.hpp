#pragma once

#include <httplib.h>

#include <thread>

#include "vknow/service.hpp"

namespace vknow {

struct HttpService::Server {
  httplib::Server http;
  std::thread thread;
};

inline void send_json(httplib::Response& res, int status, const std::string& body) {
  res.status = status;
  res.set_content(body, "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& reason) {
  send_json(res, status, nlohmann::json{{"error", reason}}.dump());
}

}  // namespace vknow
