#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "vknow/coldstart.hpp"
#include "vknow/debias.hpp"
#include "vknow/evalkit.hpp"
#include "vknow/gateway.hpp"
#include "vknow/rewards.hpp"

namespace vknow::config {

/// Everything a TOML configuration file can carry. Endpoints are declared
/// once under [endpoints.<name>] and referenced by name elsewhere:
///
///   [endpoints.judge]
///   base_url = "http://localhost:8000/v1"
///   model = "Qwen2.5-VL-7B-Instruct"
///   kind = "chat"
///   sampling = { temperature = 0.0 }
///
///   [verifier]
///   endpoint = "judge"
///
/// A file holding a single endpoint at top level (base_url, model, kind...)
/// is accepted wherever an evaluation model is expected.
struct ToolConfig {
  std::map<std::string, gateway::EndpointConfig> endpoints;
  std::optional<gateway::EndpointConfig> transcriber;
  std::optional<debias::DebiasConfig> debias;
  std::optional<rewards::VerifierConfig> verifier;
  rewards::RewardWeights weights;
  rewards::TrainerMetadata trainer;
  rewards::StaTemplate tmpl;
  std::optional<evalkit::EvalConfig> eval;
  std::optional<coldstart::GeneratorConfig> generator;
  std::filesystem::path cache_dir;
  std::optional<gateway::CacheMode> cache_mode;
};

ToolConfig parse_config(std::string_view toml_text, const std::string& source = "config");
ToolConfig load_config(const std::filesystem::path& path);

}  // namespace vknow::config
