#include "trustorch/config.hpp"

#include <filesystem>

namespace fs = std::filesystem;

namespace trustorch {

void ExperimentConfig::validate() const {
  if (agents.empty()) fail(ErrorCode::ConfigError, "'agents' must list at least one agent");
  for (const auto& a : agents) a.validate();
  for (std::size_t i = 0; i < agents.size(); ++i) {
    for (std::size_t j = i + 1; j < agents.size(); ++j) {
      if (agents[i].agent_id == agents[j].agent_id) {
        fail(ErrorCode::ConfigError, "duplicate agent_id '" + agents[i].agent_id + "'");
      }
    }
  }
  if (orchestrator) orchestrator->validate();
  if (k < 1) fail(ErrorCode::ConfigError, "'k' must be >= 1");
  if (!(tau >= 0.0 && tau <= 1.0)) fail(ErrorCode::ConfigError, "'tau' must lie in [0,1]");
  if (!(ocr_threshold > 0.0 && ocr_threshold < 1.0)) {
    fail(ErrorCode::ConfigError, "'ocr_threshold' must lie in (0,1)");
  }
  if (ece_bins < 1) fail(ErrorCode::ConfigError, "'ece_bins' must be >= 1");
  if (retry_cap < 0) fail(ErrorCode::ConfigError, "'retry_cap' must be >= 0");
  if (parallelism < 1) fail(ErrorCode::ConfigError, "'parallelism' must be >= 1");
}

namespace {

std::string resolve(const std::string& base_dir, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base_dir) / p).lexically_normal().string();
}

template <typename T>
T get_or(const Json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    fail(ErrorCode::ConfigError, std::string("config key '") + key + "' has the wrong type");
  }
}

std::optional<std::string> path_key(const Json& j, const char* key, const std::string& base) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return resolve(base, get_or<std::string>(j, key, ""));
}

}  // namespace

ExperimentConfig config_from_json(const Json& j, const std::string& base_dir) {
  if (!j.is_object()) fail(ErrorCode::ConfigError, "config must be a JSON object");
  for (const char* key : {"labels", "agents"}) {
    if (!j.contains(key)) fail(ErrorCode::ConfigError, std::string("missing config key '") + key + "'");
  }
  ExperimentConfig c;
  c.labels = LabelSet(get_or<std::vector<std::string>>(j, "labels", {}));
  if (!j.at("agents").is_array()) fail(ErrorCode::ConfigError, "config key 'agents' must be an array");
  for (const auto& a : j.at("agents")) {
    auto spec = agent_spec_from_json(a);
    if (spec.script_path) spec.script_path = resolve(base_dir, *spec.script_path);
    c.agents.push_back(std::move(spec));
  }
  if (j.contains("orchestrator") && !j.at("orchestrator").is_null()) {
    const auto& o = j.at("orchestrator");
    if (o.is_string()) {
      if (o.get<std::string>() != "rule_fallback") {
        fail(ErrorCode::ConfigError, "config key 'orchestrator' must be an agent spec or \"rule_fallback\"");
      }
    } else {
      auto spec = agent_spec_from_json(o);
      if (spec.script_path) spec.script_path = resolve(base_dir, *spec.script_path);
      c.orchestrator = std::move(spec);
    }
  }
  if (j.contains("policy")) c.policy = parse_policy(get_or<std::string>(j, "policy", ""));
  c.k = get_or(j, "k", c.k);
  c.tau = get_or(j, "tau", c.tau);
  c.ocr_threshold = get_or(j, "ocr_threshold", c.ocr_threshold);
  c.ece_bins = get_or(j, "ece_bins", c.ece_bins);
  c.retry_cap = get_or(j, "retry_cap", c.retry_cap);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.parallelism = get_or(j, "parallelism", c.parallelism);
  c.index_path = path_key(j, "index_path", base_dir);
  c.embeddings_path = path_key(j, "embeddings_path", base_dir);
  c.profiles_path = path_key(j, "profiles_path", base_dir);
  c.log_dir = path_key(j, "log_dir", base_dir);
  c.report_dir = path_key(j, "report_dir", base_dir);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  auto j = Json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::ConfigError, "config '" + path + "' is not valid JSON");
  return config_from_json(j, fs::path(path).parent_path().string());
}

Json to_json(const ExperimentConfig& c) {
  Json j = Json::object();
  j["labels"] = c.labels.labels();
  Json agents = Json::array();
  for (const auto& a : c.agents) agents.push_back(to_json(a));
  j["agents"] = std::move(agents);
  j["orchestrator"] = c.orchestrator ? to_json(*c.orchestrator) : Json("rule_fallback");
  j["policy"] = policy_name(c.policy);
  j["k"] = c.k;
  j["tau"] = c.tau;
  j["ocr_threshold"] = c.ocr_threshold;
  j["ece_bins"] = c.ece_bins;
  j["retry_cap"] = c.retry_cap;
  j["seed"] = c.seed;
  j["parallelism"] = c.parallelism;
  auto put = [&j](const char* key, const std::optional<std::string>& v) {
    if (v) j[key] = *v;
  };
  put("index_path", c.index_path);
  put("embeddings_path", c.embeddings_path);
  put("profiles_path", c.profiles_path);
  put("log_dir", c.log_dir);
  put("report_dir", c.report_dir);
  return j;
}

}  // namespace trustorch
