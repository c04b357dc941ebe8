#include <filesystem>
#include <fstream>
#include <set>

#include "trustorch/orchestrator.hpp"

namespace fs = std::filesystem;

namespace trustorch {

namespace {

Json failure_to_json(const AgentFailure& f) {
  Json j = Json::object();
  j["type"] = "failure";
  j["image_id"] = f.image_id;
  j["agent_id"] = f.agent_id;
  j["stage"] = f.stage;
  j["error"] = error_code_name(f.code);
  j["message"] = f.message;
  j["attempts"] = f.attempts;
  return j;
}

Json tagged(const char* type, const Json& payload) {
  Json j = Json::object();
  j["type"] = type;
  for (const auto& [k, v] : payload.items()) j[k] = v;
  return j;
}

// Drops a torn final line and every record of images that never reached a
// decision, so a resumed run can re-process them cleanly. Returns the ids of
// closed images.
std::set<std::string> prepare_resume(const std::string& path) {
  std::set<std::string> closed;
  if (!fs::exists(path)) return closed;
  std::string text = read_text_file(path);
  const auto original_size = text.size();
  const auto last_nl = text.rfind('\n');
  text.resize(last_nl == std::string::npos ? 0 : last_nl + 1);

  std::vector<std::pair<std::string, std::string>> lines;  // image_id, raw line
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    auto j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("image_id")) continue;
    const auto id = j.at("image_id").get<std::string>();
    const auto type = j.value("type", std::string());
    if (type == "decision" || type == "undecided") closed.insert(id);
    lines.emplace_back(id, std::move(line));
  }
  std::string kept;
  for (const auto& [id, line] : lines) {
    if (!closed.count(id)) continue;
    kept += line;
    kept += '\n';
  }
  if (kept.size() != original_size) write_text_file(path, kept);
  return closed;
}

}  // namespace

RunLog::RunLog(const std::string& path) : path_(path) {}

void RunLog::append(const Json& record) {
  std::lock_guard lock(mu_);
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) fail(ErrorCode::Io, "cannot append to '" + path_ + "'");
  out << record.dump() << '\n';
  out.flush();
  if (!out) fail(ErrorCode::Io, "write failed for '" + path_ + "'");
}

void RunLog::append(const ImageOutcome& o) {
  for (auto stage : {Stage::Initial, Stage::Reeval}) {
    for (const auto& p : o.predictions) {
      if (p.stage == stage) append(tagged("prediction", to_json(p)));
    }
    for (const auto& f : o.failures) {
      if (f.stage == stage_name(stage)) append(failure_to_json(f));
    }
  }
  for (const auto& prompt : o.orchestrator_prompts) {
    Json j = Json::object();
    j["type"] = "orchestrator_request";
    j["image_id"] = o.image_id;
    j["prompt"] = prompt;
    j["image_payload"] = nullptr;
    append(j);
  }
  for (const auto& f : o.failures) {
    if (f.stage == "arbitrate") append(failure_to_json(f));
  }
  if (o.trace) append(tagged("trace", to_json(*o.trace)));
  if (o.decision) {
    append(tagged("decision", to_json(*o.decision)));
  } else {
    Json j = Json::object();
    j["type"] = "undecided";
    j["image_id"] = o.image_id;
    j["reason"] = o.undecided_reason;
    append(j);
  }
}

Json to_json(const RunSummary& s) {
  Json j = Json::object();
  j["samples"] = s.samples;
  j["skipped"] = s.skipped;
  j["decided"] = s.decided;
  j["undecided"] = s.undecided;
  j["format_exhausted"] = s.format_exhausted;
  j["unreachable"] = s.unreachable;
  return j;
}

Experiment::Experiment(ExperimentConfig config, std::vector<std::unique_ptr<Agent>> agents,
                       std::unique_ptr<Agent> orchestrator, Clock& clock)
    : config_(std::move(config)),
      agents_(std::move(agents)),
      orchestrator_(std::move(orchestrator)),
      clock_(clock) {
  config_.validate();
  if (agents_.size() != config_.agents.size()) {
    fail(ErrorCode::ConfigError, "agent instances do not match the configured agents");
  }
}

RunSummary Experiment::run(std::span<const Sample> samples, const std::string& out_dir) {
  if (samples.empty()) fail(ErrorCode::ConfigError, "no samples to run");
  std::set<std::string> ids;
  for (const auto& s : samples) {
    if (!ids.insert(s.image_id).second) {
      fail(ErrorCode::ConfigError, "duplicate image_id '" + s.image_id + "'");
    }
    if (s.true_label && !config_.labels.contains(*s.true_label)) {
      fail(ErrorCode::UnknownLabel, "sample '" + s.image_id + "' has unknown label");
    }
  }

  PipelineContext ctx;
  ctx.labels = &config_.labels;
  for (std::size_t i = 0; i < agents_.size(); ++i) {
    ctx.agents.push_back({agents_[i].get(), config_.retry_cap_for(config_.agents[i])});
  }
  if (orchestrator_) {
    const int cap = config_.orchestrator ? config_.retry_cap_for(*config_.orchestrator) : config_.retry_cap;
    ctx.orchestrator = AgentHandle{orchestrator_.get(), cap};
  }
  ctx.index = index_.get();
  ctx.embeddings = &embeddings_;
  ctx.k = config_.k;
  ctx.tau = config_.tau;
  ctx.parallelism = config_.parallelism;
  ctx.clock = &clock_;

  const bool trust = config_.policy == Policy::TrustAwareRag;
  if (trust) {
    if (!index_) fail(ErrorCode::IndexUnavailable, "trust_aware_rag policy needs 'index_path'");
    for (const auto& h : ctx.agents) {
      auto it = profiles_.find(h.agent->id());
      if (it == profiles_.end()) {
        fail(ErrorCode::ConfigError, "no trust profile for agent '" + h.agent->id() + "'");
      }
      (void)trust_score(it->second);
    }
    ctx.profiles = &profiles_;
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create '" + out_dir + "': " + ec.message());
  const auto log_path = (fs::path(out_dir) / kRunLogFile).string();
  const auto closed = prepare_resume(log_path);

  write_text_file((fs::path(out_dir) / kConfigSnapshotFile).string(),
                  (snapshot_ ? *snapshot_ : to_json(config_)).dump(2) + "\n");
  std::vector<std::pair<std::string, Label>> truth;
  for (const auto& s : samples) {
    if (s.true_label) truth.emplace_back(s.image_id, *s.true_label);
  }
  write_ground_truth((fs::path(out_dir) / kGroundTruthFile).string(), truth);

  RunLog log(log_path);
  RunSummary summary;
  summary.samples = samples.size();
  for (const auto& s : samples) {
    if (closed.count(s.image_id)) {
      ++summary.skipped;
      continue;
    }
    auto outcome = trust ? run_trust_pipeline(s, ctx) : run_confidence_pipeline(s, ctx);
    for (const auto& f : outcome.failures) {
      if (f.code == ErrorCode::FormatExhausted) ++summary.format_exhausted;
      if (f.code == ErrorCode::AgentUnreachable) ++summary.unreachable;
    }
    if (outcome.decision) {
      ++summary.decided;
    } else {
      ++summary.undecided;
    }
    log.append(outcome);
  }
  return summary;
}

ProfileMap load_profiles(const std::string& path) {
  auto j = Json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::ConfigError, "profiles file '" + path + "' is not JSON");
  const Json& arr = j.is_object() && j.contains("profiles") ? j.at("profiles") : j;
  if (!arr.is_array()) fail(ErrorCode::ConfigError, "profiles file must hold an array of profiles");
  ProfileMap out;
  for (const auto& p : arr) {
    auto profile = profile_from_json(p);
    out[profile.agent_id] = std::move(profile);
  }
  return out;
}

RunSummary run_experiment(const ExperimentConfig& config, std::span<const Sample> samples,
                          const std::string& out_dir, Clock& clock) {
  config.validate();
  if (config.policy == Policy::TrustAwareRag) {
    if (!config.index_path) fail(ErrorCode::IndexUnavailable, "trust_aware_rag policy needs 'index_path'");
    if (!config.profiles_path) fail(ErrorCode::ConfigError, "trust_aware_rag policy needs 'profiles_path'");
  }
  std::vector<std::unique_ptr<Agent>> agents;
  for (const auto& spec : config.agents) agents.push_back(make_agent(spec, clock));
  std::unique_ptr<Agent> orchestrator;
  if (config.orchestrator) orchestrator = make_agent(*config.orchestrator, clock);

  Experiment exp(config, std::move(agents), std::move(orchestrator), clock);
  if (config.index_path) exp.set_index(std::make_shared<const VectorIndex>(load_index(*config.index_path)));
  if (config.profiles_path) exp.set_profiles(load_profiles(*config.profiles_path));
  if (config.embeddings_path) exp.set_embeddings(read_embedding_map(*config.embeddings_path));
  return exp.run(samples, out_dir);
}

}  // namespace trustorch
