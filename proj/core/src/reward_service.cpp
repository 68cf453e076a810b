#include <spdlog/spdlog.h>

#include "http_server.hpp"

namespace vknow::rewards {

using json = nlohmann::json;

json to_json(const TrainerMetadata& t) {
  return {{"kl_beta", t.kl_beta}, {"clip_epsilon", t.clip_epsilon}, {"num_generations", t.num_generations}};
}

RewardService::RewardService(corpus::Manifest manifest, VerifierConfig verifier, gateway::Gateway& gw,
                             RewardServiceOptions opts)
    : manifest_(std::move(manifest)), verifier_(std::move(verifier)), gw_(gw), opts_(std::move(opts)) {
  auto& http = server_->http;

  http.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, R"({"status":"ok"})");
  });

  http.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
    std::vector<Completion> completions;
    ScoringOptions scoring = opts_.scoring;
    try {
      const json body = json::parse(req.body);
      if (!body.is_object() || !body.contains("completions") || !body.at("completions").is_array()) {
        return send_error(res, 400, "body must be an object with a 'completions' array");
      }
      for (const auto& c : body.at("completions")) completions.push_back(completion_from_json(c));
      if (body.contains("lambda")) {
        scoring.weights.lambda = body.at("lambda").get<double>();
        scoring.weights.validate();
      }
    } catch (const std::exception& e) {
      return send_error(res, 400, std::string("schema violation: ") + e.what());
    }

    try {
      const auto groups = score_batch(completions, manifest_, verifier_, gw_, scoring);
      json out_groups = json::array();
      for (const auto& g : groups) out_groups.push_back(to_json(g));
      send_json(res, 200, json{{"groups", std::move(out_groups)}, {"trainer", to_json(opts_.trainer)}}.dump());
    } catch (const UnknownItem& e) {
      send_error(res, 422, e.what());
    } catch (const GroupTooSmall& e) {
      send_error(res, 422, e.what());
    } catch (const std::exception& e) {
      spdlog::error("scoring failed: {}", e.what());
      send_error(res, 502, e.what());
    }
  });
}

RewardService::~RewardService() { stop(); }

}  // namespace vknow::rewards
