#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "trustorch/error.hpp"

namespace trustorch {

using Json = nlohmann::ordered_json;
using Label = std::string;

// Lowercase, trimmed, with runs of whitespace, underscores and hyphens
// collapsed into a single hyphen. "Black  Rot" -> "black-rot".
std::string canonical_form(std::string_view raw);

// Ordered, duplicate-free set of canonical class labels. The order is fixed at
// construction and drives confusion-matrix axes and every label tie-break.
class LabelSet {
 public:
  explicit LabelSet(std::vector<std::string> labels);

  // healthy, black-rot, rust, scab
  static LabelSet apple_default();

  const std::vector<Label>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool contains(std::string_view label) const noexcept;
  // Position in canonical order; throws UnknownLabel.
  std::size_t index_of(std::string_view label) const;
  // Strict weak order following the configured label order.
  bool before(std::string_view a, std::string_view b) const;

  friend bool operator==(const LabelSet&, const LabelSet&) = default;

 private:
  std::vector<Label> labels_;
};

// Maps free text onto a member of `labels`; throws UnknownLabel otherwise.
Label canonicalize_label(std::string_view raw, const LabelSet& labels);

struct Sample {
  std::string image_id;
  std::string image_ref;  // file path; pixels never enter the core library
  std::optional<Label> true_label;
};

enum class Stage { Initial, Reeval };

std::string_view stage_name(Stage stage) noexcept;
Stage parse_stage(std::string_view name);

struct AgentPrediction {
  std::string agent_id;
  std::string image_id;
  Stage stage = Stage::Initial;
  Label category;
  double confidence = 0.0;
  std::string justification;
  double latency_ms = 0.0;
  double cost_usd = 0.0;
  int attempts = 1;
  double ts = 0.0;  // clock reading when the prediction was finalized

  friend bool operator==(const AgentPrediction&, const AgentPrediction&) = default;
};

// Prediction-log record, field names as written to JSONL.
Json to_json(const AgentPrediction& p);
AgentPrediction prediction_from_json(const Json& j);

enum class Policy { ConfidenceAware, TrustAwareRag, RuleFallback };

std::string_view policy_name(Policy policy) noexcept;
Policy parse_policy(std::string_view name);

struct PredictionRef {
  std::string agent_id;
  Stage stage = Stage::Initial;

  friend bool operator==(const PredictionRef&, const PredictionRef&) = default;
};

struct FinalDecision {
  std::string image_id;
  Label category;
  double confidence = 0.0;
  std::string rationale;
  Policy policy = Policy::RuleFallback;
  bool reeval_triggered = false;
  std::vector<PredictionRef> contributing;

  friend bool operator==(const FinalDecision&, const FinalDecision&) = default;
};

Json to_json(const FinalDecision& d);
FinalDecision decision_from_json(const Json& j);

// Time source in milliseconds. Readings never decrease.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now_ms() = 0;
};

// Wall clock (epoch milliseconds), clamped so it never runs backwards.
class SystemClock final : public Clock {
 public:
  double now_ms() override;

 private:
  std::mutex mu_;
  double last_ = 0.0;
};

// Deterministic clock for tests and replayable runs: every reading advances
// the time by `step_ms`.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(double start_ms = 0.0, double step_ms = 0.0)
      : now_(start_ms), step_(step_ms) {}

  double now_ms() override;
  void advance(double ms);

 private:
  std::mutex mu_;
  double now_;
  double step_;
};

// Ground-truth JSONL: {"image_id","label"} per line.
std::vector<std::pair<std::string, Label>> read_ground_truth(
    const std::string& path, const LabelSet& labels);
void write_ground_truth(const std::string& path,
                        const std::vector<std::pair<std::string, Label>>& truth);

// Reads every prediction record from a JSONL file. Lines tagged with a
// "type" other than "prediction" are skipped so run logs can be read too.
std::vector<AgentPrediction> read_prediction_log(const std::string& path);

// Reads all non-empty lines of a JSONL file as JSON values. CorruptRecord
// reports the 1-based line of the first malformed entry.
std::vector<Json> read_jsonl(const std::string& path);

// Fixed-point rendering used by reports and prompts ("%.<decimals>f", with
// negative zero printed as zero).
std::string format_fixed(double value, int decimals = 4);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

}  // namespace trustorch
