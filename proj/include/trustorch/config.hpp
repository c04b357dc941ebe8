#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trustorch/agent_gateway.hpp"
#include "trustorch/core.hpp"

namespace trustorch {

struct ExperimentConfig {
  LabelSet labels = LabelSet::apple_default();
  std::vector<AgentSpec> agents;
  std::optional<AgentSpec> orchestrator;  // unset: deterministic rule arbiter
  Policy policy = Policy::ConfidenceAware;
  int k = 5;
  double tau = 0.7;
  double ocr_threshold = 0.9;
  int ece_bins = 10;
  int retry_cap = 3;
  std::uint64_t seed = 0;
  int parallelism = 1;
  std::optional<std::string> index_path;
  std::optional<std::string> embeddings_path;  // query embeddings keyed by image_id
  std::optional<std::string> profiles_path;    // JSON array of trust profiles
  std::optional<std::string> log_dir;
  std::optional<std::string> report_dir;

  // Throws ConfigError naming the offending key.
  void validate() const;
  int retry_cap_for(const AgentSpec& spec) const { return spec.retry_cap.value_or(retry_cap); }
};

// Parses the declarative config. "labels" and "agents" are required; relative
// paths resolve against `base_dir`. "orchestrator" is either an agent spec or
// the string "rule_fallback".
ExperimentConfig config_from_json(const Json& j, const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);
Json to_json(const ExperimentConfig& config);

}  // namespace trustorch
