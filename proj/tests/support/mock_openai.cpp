#include "mock_openai.hpp"

#include <httplib.h>

#include <thread>

namespace vknow::test {

using json = nlohmann::json;

std::string letter(std::size_t index) { return std::string(1, static_cast<char>('A' + index)); }

ChatCall parse_chat(const std::string& body, int sample_index) {
  ChatCall c;
  c.body = json::parse(body);
  c.model = c.body.value("model", "");
  c.temperature = c.body.value("temperature", 0.0);
  c.top_p = c.body.value("top_p", 1.0);
  c.sample_index = sample_index;
  for (const auto& m : c.body.at("messages")) {
    const std::string role = m.at("role");
    std::string text;
    if (m.at("content").is_string()) {
      text = m.at("content").get<std::string>();
    } else {
      for (const auto& part : m.at("content")) {
        if (part.at("type") == "text") text += part.at("text").get<std::string>();
        if (part.at("type") == "image_url") ++c.n_images;
      }
    }
    if (role == "system") c.system = text;
    if (role == "user") c.user = text;
  }
  return c;
}

gateway::HttpResponse dispatch(const MockModels& models, const std::string& path, const std::string& body,
                               const std::vector<gateway::MultipartField>& multipart, int sample_index) {
  try {
    if (path == "/chat/completions") {
      if (!models.chat) return {404, R"({"error":"no chat model"})"};
      const std::string reply = models.chat(parse_chat(body, sample_index));
      json out = {{"choices", json::array({{{"index", 0}, {"message", {{"role", "assistant"}, {"content", reply}}}}})}};
      return {200, out.dump()};
    }
    if (path == "/embeddings") {
      if (!models.embed) return {404, R"({"error":"no embedding model"})"};
      const json req = json::parse(body);
      std::string text = req.at("input").is_array() ? req.at("input").at(0).get<std::string>()
                                                    : req.at("input").get<std::string>();
      json out = {{"data", json::array({{{"index", 0}, {"embedding", models.embed(req.value("model", ""), text)}}})}};
      return {200, out.dump()};
    }
    if (path == "/audio/transcriptions") {
      if (!models.transcribe) return {404, R"({"error":"no transcription model"})"};
      std::string model, audio;
      for (const auto& f : multipart) {
        if (f.name == "model") model = f.content;
        if (f.name == "file") audio = f.content;
      }
      return {200, models.transcribe(model, audio).dump()};
    }
  } catch (const std::exception& e) {
    return {500, json{{"error", e.what()}}.dump()};
  }
  return {404, R"({"error":"unknown path"})"};
}

gateway::HttpResponse ScriptedTransport::send(const gateway::HttpRequest& req) {
  ++calls_;
  int failure = 200;
  {
    std::lock_guard lock(mu_);
    log_.push_back(req);
    if (!failures_.empty()) {
      failure = failures_.front();
      failures_.erase(failures_.begin());
    }
  }
  if (failure == 0) throw gateway::TransportError("scripted connection failure", false);
  if (failure == -1) throw gateway::TransportError("scripted timeout", true);
  if (failure != 200) return {failure, R"({"error":"scripted failure"})"};
  int sample = 0;
  if (auto h = req.header("X-Sample-Index"); !h.empty()) sample = std::stoi(h);
  return dispatch(models_, req.path, req.body, req.multipart, sample);
}

void ScriptedTransport::fail_next(int status, int count) {
  std::lock_guard lock(mu_);
  for (int i = 0; i < count; ++i) failures_.push_back(status);
}

std::vector<gateway::HttpRequest> ScriptedTransport::requests() const {
  std::lock_guard lock(mu_);
  return log_;
}

gateway::HttpResponse ForbiddenTransport::send(const gateway::HttpRequest& req) {
  ++calls_;
  throw gateway::TransportError("network access during replay: " + req.path, false);
}

struct MockOpenAIServer::Impl {
  httplib::Server http;
  std::thread thread;
};

MockOpenAIServer::MockOpenAIServer(MockModels models) : impl_(std::make_unique<Impl>()) {
  auto handler = [this, models](const httplib::Request& req, httplib::Response& res) {
    ++hits_;
    if (const auto d = delay_ms_.load(); d > 0) std::this_thread::sleep_for(std::chrono::milliseconds(d));
    {
      std::lock_guard lock(mu_);
      if (!failures_.empty()) {
        const int status = failures_.front();
        failures_.erase(failures_.begin());
        res.status = status;
        res.set_content(R"({"error":"scripted failure"})", "application/json");
        return;
      }
    }
    std::string path = req.path;
    if (path.rfind("/v1", 0) == 0) path = path.substr(3);
    std::vector<gateway::MultipartField> parts;
    for (const auto& [name, f] : req.files) parts.push_back({name, f.content, f.filename, f.content_type});
    int sample = 0;
    if (req.has_header("X-Sample-Index")) sample = std::stoi(req.get_header_value("X-Sample-Index"));
    const auto out = dispatch(models, path, req.body, parts, sample);
    res.status = out.status;
    res.set_content(out.body, "application/json");
  };
  impl_->http.Post(R"(/v1/.*)", handler);
  port_ = impl_->http.bind_to_any_port("127.0.0.1");
  impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
}

MockOpenAIServer::~MockOpenAIServer() {
  impl_->http.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

std::string MockOpenAIServer::base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

void MockOpenAIServer::fail_next(int status, int count) {
  std::lock_guard lock(mu_);
  for (int i = 0; i < count; ++i) failures_.push_back(status);
}

gateway::FrameResolver fake_frame_resolver() {
  return [](const gateway::FrameAttachment& a) {
    std::vector<std::string> urls;
    for (double t : a.timestamps) urls.push_back("data:image/jpeg;base64,ZnJhbWU=#t=" + std::to_string(t));
    return urls;
  };
}

}  // namespace vknow::test
