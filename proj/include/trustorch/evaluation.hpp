#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trustorch/core.hpp"
#include "trustorch/orchestrator.hpp"
#include "trustorch/trust_metrics.hpp"

namespace trustorch {

// Rows are true labels, columns predicted labels, both in LabelSet order.
struct ConfusionMatrix {
  std::vector<Label> labels;
  std::vector<std::vector<std::int64_t>> counts;

  std::int64_t total() const;
  std::string to_csv() const;
};

struct ClassScores {
  Label label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;  // true-class count
};

struct MetricsReport {
  std::int64_t n = 0;
  double accuracy = 0.0;
  std::vector<ClassScores> per_class;
  double precision_macro = 0.0;
  double recall_macro = 0.0;
  double f1_macro = 0.0;
  double precision_weighted = 0.0;
  double recall_weighted = 0.0;
  double f1_weighted = 0.0;
  ConfusionMatrix confusion;
  std::vector<std::string> warnings;
};

Json to_json(const MetricsReport& m);

// Standard multi-class metrics. A class never predicted gets precision 0 and
// a warning. Throws LengthMismatch, UnknownLabel, EmptyLog.
MetricsReport classification_metrics(std::span<const Label> predicted, std::span<const Label> truth,
                                     const LabelSet& labels);

struct CalibrationBin {
  double lo = 0.0;
  double hi = 0.0;
  std::int64_t count = 0;
  std::optional<double> mean_conf;  // unset for empty bins
  std::optional<double> accuracy;
};

struct CalibrationCurve {
  std::vector<CalibrationBin> bins;

  std::string to_csv() const;
  // Support-weighted |accuracy - mean_conf| over occupied bins.
  double implied_ece() const;
};

// Same binning as ece(); every bin is emitted, occupied or not.
CalibrationCurve calibration_curve(std::span<const ScoredOutcome> outcomes, int bins = 10);

struct OverconfidencePoint {
  double mean_conf_on_wrong = 0.0;
  double macro_f1 = 0.0;
};

// NoErrors when every outcome is correct.
OverconfidencePoint overconfidence_point(std::span<const ScoredOutcome> outcomes,
                                         const MetricsReport& metrics);

struct DisagreementStats {
  std::string agent_id;
  std::int64_t evaluated = 0;  // decisions considered (denominator)
  std::int64_t disagreements = 0;
  double disagreement_rate = 0.0;
  std::int64_t orchestrator_correct = 0;
  std::optional<double> orchestrator_correct_rate;  // among disagreements
  std::int64_t missing_predictions = 0;
};

// Orchestrator-vs-agent audit over the agents' latest predictions. Rates use
// the full decision set as denominator. AlignmentError when a decision has no
// ground truth.
std::vector<DisagreementStats> disagreement_analysis(std::span<const AgentPrediction> agent_log,
                                                     std::span<const FinalDecision> decisions,
                                                     const std::vector<std::pair<std::string, Label>>& truth);

struct ReevalBehavior {
  std::string agent_id;
  std::int64_t traces = 0;
  std::int64_t reevaluated = 0;  // revised prediction present
  std::int64_t reaffirmations = 0;
  double reaffirmation_rate = 0.0;  // over traces
  std::int64_t reaffirm_correct = 0;
  std::optional<double> reaffirm_correct_rate;  // among reaffirmations
  std::int64_t overcorrections = 0;             // correct -> incorrect
  double overcorrection_rate = 0.0;             // over traces
  std::int64_t corrections = 0;                 // incorrect -> correct
};

std::vector<ReevalBehavior> reeval_behavior_analysis(std::span<const ReEvalTrace> traces,
                                                     const std::vector<std::pair<std::string, Label>>& truth);

struct LatencyStats {
  std::string agent_id;
  Stage stage = Stage::Initial;
  std::int64_t count = 0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
  double hist_lo = 0.0;
  double hist_hi = 0.0;
  std::vector<std::int64_t> histogram;
};

// Linear-interpolation quantile of sorted data, q in [0,1].
double quantile_sorted(std::span<const double> sorted, double q);

// Per (agent, stage) latency summaries with fixed-width histograms over
// [min, max]. EmptyLog on no predictions.
std::vector<LatencyStats> latency_stats(std::span<const AgentPrediction> predictions,
                                        int histogram_bins = 10);

std::string latency_csv(std::span<const LatencyStats> stats);

// Parsed contents of a run directory.
struct RunRecords {
  LabelSet labels = LabelSet::apple_default();
  TrustConfig trust_config;
  std::vector<AgentPrediction> predictions;
  std::vector<ReEvalTrace> traces;
  std::vector<FinalDecision> decisions;
  std::vector<std::string> undecided;
  std::vector<std::pair<std::string, Label>> truth;
  std::vector<std::string> agent_order;  // first appearance in the log
};

// MissingLog when the run log is absent or holds no records.
RunRecords load_run(const std::string& run_dir);

// Writes metrics.json, confusion_<name>.csv, calibration_<name>.csv,
// trust_profiles.csv, disagreements.json and latency.csv into
// `out_dir` (default: <run_dir>/report). Returns the metrics.json content.
Json emit_report(const std::string& run_dir, const std::string& out_dir = "");

}  // namespace trustorch
