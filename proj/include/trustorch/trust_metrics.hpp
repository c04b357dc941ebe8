#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trustorch/core.hpp"

namespace trustorch {

struct ScoredOutcome {
  double confidence = 0.0;
  bool correct = false;
};

// Equal-width bin (1-based) holding confidence `c` among `bins` bins over
// (0,1]; bin m covers ((m-1)/M, m/M] and c == 0 lands in bin 1.
int calibration_bin(double confidence, int bins);

// Expected calibration error. Throws EmptyLog / InvalidArgument.
double ece(std::span<const ScoredOutcome> outcomes, int bins = 10);

struct OcrResult {
  std::optional<double> ratio;  // unset when no prediction clears the threshold
  std::int64_t hcw = 0;         // high-confidence wrong
  std::int64_t thc = 0;         // total high-confidence
};

// Overconfidence ratio with the strict test confidence > threshold.
OcrResult ocr(std::span<const ScoredOutcome> outcomes, double threshold = 0.9);

struct ConfidenceMeans {
  std::optional<double> correct;
  std::optional<double> incorrect;
};
ConfidenceMeans confidence_means(std::span<const ScoredOutcome> outcomes);

// Mean confidence on correct minus mean on incorrect. DegenerateLog when either
// side is empty.
double confidence_gap(std::span<const ScoredOutcome> outcomes);

// Fraction of aligned positions where two labelings differ.
double consistency_gap(std::span<const Label> run1, std::span<const Label> run2);

struct Correlation {
  double r = 0.0;
  double p_value = 1.0;
};

// Point-biserial correlation between confidence and correctness, with a
// two-sided t-test on n-2 degrees of freedom.
Correlation ccc(std::span<const ScoredOutcome> outcomes);

// Confidence-weighted accuracy: correct confidence mass over total mass.
double cwa(std::span<const ScoredOutcome> outcomes);

// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
// Two-sided p-value of Student's t statistic.
double student_t_two_sided_p(double t, double dof);

struct TrustConfig {
  int ece_bins = 10;
  double ocr_threshold = 0.9;
};

struct TrustProfile {
  std::string agent_id;
  std::int64_t n = 0;
  double accuracy = 0.0;
  double avg_conf = 0.0;
  std::optional<double> conf_correct;
  std::optional<double> conf_incorrect;
  std::optional<double> confidence_gap;
  std::optional<double> consistency_gap;
  std::optional<double> ocr;
  std::int64_t hcw = 0;
  std::int64_t thc = 0;
  std::optional<double> ccc;
  std::optional<double> ccc_p_value;
  std::optional<double> ece;
  std::optional<double> cwa;

  friend bool operator==(const TrustProfile&, const TrustProfile&) = default;
};

struct ProfileResult {
  TrustProfile profile;
  std::vector<std::string> warnings;
};

struct PairedRuns {
  std::vector<Label> run1;
  std::vector<Label> run2;
};

// Fills every profile field it can; undefined statistics stay unset and are
// reported in `warnings`.
ProfileResult build_trust_profile(const std::string& agent_id,
                                  std::span<const ScoredOutcome> outcomes,
                                  const TrustConfig& config = {},
                                  const std::optional<PairedRuns>& paired = std::nullopt);

// Mean of {1-ece, 1-ocr, max(0, ccc), cwa}; an unset ccc counts as 0.
// MissingMetric when ece, ocr or cwa is unset.
double trust_score(const TrustProfile& profile);

Json to_json(const TrustProfile& profile);
TrustProfile profile_from_json(const Json& j);

// Header and one row in trust_profiles.csv column order.
std::string trust_profile_csv_header();
std::string trust_profile_csv_row(const TrustProfile& profile);

// Joins predictions with ground truth (by image_id) into scored outcomes.
// Predictions whose image has no truth are skipped.
std::vector<ScoredOutcome> score_predictions(
    std::span<const AgentPrediction> predictions,
    const std::vector<std::pair<std::string, Label>>& truth);

}  // namespace trustorch
