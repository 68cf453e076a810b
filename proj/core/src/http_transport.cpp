#include <httplib.h>

#include "vknow/gateway.hpp"

namespace vknow::gateway {

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url must include a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  out.origin = url.substr(0, path_start);
  out.prefix = path_start == std::string::npos ? std::string() : url.substr(path_start);
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

class HttplibTransport final : public Transport {
 public:
  HttpResponse send(const HttpRequest& req) override {
    const auto url = split_url(req.base_url);
    httplib::Client cli(url.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(req.timeout).count();
    cli.set_connection_timeout(std::min<std::int64_t>(secs, 30), 0);
    cli.set_read_timeout(secs, 0);
    cli.set_write_timeout(secs, 0);

    httplib::Headers headers;
    for (const auto& [k, v] : req.headers) headers.emplace(k, v);

    const std::string path = url.prefix + req.path;
    httplib::Result res;
    if (!req.multipart.empty()) {
      httplib::MultipartFormDataItems items;
      for (const auto& f : req.multipart) items.push_back({f.name, f.content, f.filename, f.content_type});
      res = cli.Post(path, headers, items);
    } else {
      res = cli.Post(path, headers, req.body, req.content_type);
    }
    if (!res) {
      const auto err = res.error();
      const bool timeout = err == httplib::Error::Read || err == httplib::Error::Write ||
                           err == httplib::Error::ConnectionTimeout;
      throw TransportError(req.base_url + req.path + ": " + httplib::to_string(err), timeout);
    }
    return {res->status, res->body};
  }
};

}  // namespace

std::shared_ptr<Transport> make_http_transport() { return std::make_shared<HttplibTransport>(); }

}  // namespace vknow::gateway
