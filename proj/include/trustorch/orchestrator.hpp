#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trustorch/agent_gateway.hpp"
#include "trustorch/config.hpp"
#include "trustorch/core.hpp"
#include "trustorch/trust_metrics.hpp"
#include "trustorch/vector_store.hpp"

namespace trustorch {

using ProfileMap = std::map<std::string, TrustProfile>;
using EmbeddingMap = std::map<std::string, std::vector<double>>;

struct AgentTrace {
  std::string agent_id;
  AgentPrediction initial;
  std::optional<AgentPrediction> revised;
  bool changed = false;

  friend bool operator==(const AgentTrace&, const AgentTrace&) = default;
};

struct ReEvalTrace {
  std::string image_id;
  bool triggered = false;
  std::map<std::string, double> trust_scores;
  double tau_used = 0.0;
  std::vector<ClassVote> votes;
  std::vector<RetrievalHit> exemplars;
  std::vector<AgentTrace> agents;

  friend bool operator==(const ReEvalTrace&, const ReEvalTrace&) = default;
};

Json to_json(const ReEvalTrace& trace);
ReEvalTrace trace_from_json(const Json& j);

struct ArbitrationInput {
  std::string image_id;
  std::vector<AgentPrediction> predictions;  // latest stage per agent
  const ProfileMap* profiles = nullptr;
  std::vector<ClassVote> votes;
};

// Text-only arbitration prompt asking for {category, rationale, confidence}.
std::string render_orchestrator_prompt(const ArbitrationInput& input, const LabelSet& labels);

// Deterministic arbiter: argmax of confidence (times trust score when profiles
// are given), ties by label order then agent id. A confident retrieval vote
// (>= 0.5) overrides a disagreeing pick whose trust score is below `tau`.
FinalDecision rule_arbitrate(const ArbitrationInput& input, const LabelSet& labels,
                             double tau = 0.7);

// True iff some score is below tau.
bool should_reevaluate(const std::map<std::string, double>& trust_scores, double tau);

struct AgentFailure {
  std::string image_id;
  std::string agent_id;
  std::string stage;  // initial / reeval / arbitrate
  ErrorCode code = ErrorCode::Internal;
  std::string message;
  int attempts = 0;
};

// Everything one image produced, in log order.
struct ImageOutcome {
  std::string image_id;
  std::vector<AgentPrediction> predictions;
  std::vector<AgentFailure> failures;
  std::vector<std::string> orchestrator_prompts;
  std::optional<ReEvalTrace> trace;
  std::optional<FinalDecision> decision;  // unset: undecided
  std::string undecided_reason;
};

struct AgentHandle {
  Agent* agent = nullptr;
  int retry_cap = 3;
};

struct PipelineContext {
  const LabelSet* labels = nullptr;
  std::vector<AgentHandle> agents;
  std::optional<AgentHandle> orchestrator;
  const ProfileMap* profiles = nullptr;
  const VectorIndex* index = nullptr;
  const EmbeddingMap* embeddings = nullptr;
  int k = 5;
  double tau = 0.7;
  int parallelism = 1;
  Clock* clock = nullptr;
};

// Experiment I/II flow: one agent round, then arbitration on confidences.
ImageOutcome run_confidence_pipeline(const Sample& sample, const PipelineContext& ctx);

// Experiment III flow: initial round, retrieval-grounded re-evaluation when
// any agent's trust score is below tau, then trust-weighted arbitration.
ImageOutcome run_trust_pipeline(const Sample& sample, const PipelineContext& ctx);

// Append-only JSONL run log; writes are serialized.
class RunLog {
 public:
  explicit RunLog(const std::string& path);

  void append(const Json& record);
  void append(const ImageOutcome& outcome);

 private:
  std::string path_;
  std::mutex mu_;
};

struct RunSummary {
  std::size_t samples = 0;
  std::size_t skipped = 0;  // already logged by a previous run
  std::size_t decided = 0;
  std::size_t undecided = 0;
  std::size_t format_exhausted = 0;
  std::size_t unreachable = 0;
};

Json to_json(const RunSummary& s);

inline constexpr const char* kRunLogFile = "runlog.jsonl";
inline constexpr const char* kGroundTruthFile = "ground_truth.jsonl";
inline constexpr const char* kConfigSnapshotFile = "config.json";

// Runs the configured policy over `samples`, writing into `out_dir`:
// runlog.jsonl, ground_truth.jsonl and config.json. Images already closed
// (decision or undecided record) in an existing run log are skipped.
class Experiment {
 public:
  Experiment(ExperimentConfig config, std::vector<std::unique_ptr<Agent>> agents,
             std::unique_ptr<Agent> orchestrator, Clock& clock);

  void set_profiles(ProfileMap profiles) { profiles_ = std::move(profiles); }
  void set_index(std::shared_ptr<const VectorIndex> index) { index_ = std::move(index); }
  void set_embeddings(EmbeddingMap embeddings) { embeddings_ = std::move(embeddings); }
  // Overrides the config snapshot written to the run directory.
  void set_config_snapshot(Json snapshot) { snapshot_ = std::move(snapshot); }

  RunSummary run(std::span<const Sample> samples, const std::string& out_dir);

 private:
  ExperimentConfig config_;
  std::vector<std::unique_ptr<Agent>> agents_;
  std::unique_ptr<Agent> orchestrator_;
  Clock& clock_;
  ProfileMap profiles_;
  std::shared_ptr<const VectorIndex> index_;
  EmbeddingMap embeddings_;
  std::optional<Json> snapshot_;
};

ProfileMap load_profiles(const std::string& path);

// Builds agents, index, profiles and embeddings from the config paths and runs.
RunSummary run_experiment(const ExperimentConfig& config, std::span<const Sample> samples,
                          const std::string& out_dir, Clock& clock);

}  // namespace trustorch
