#include "trustorch/trust_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace trustorch {

namespace {

void require_non_empty(std::span<const ScoredOutcome> outcomes) {
  if (outcomes.empty()) fail(ErrorCode::EmptyLog, "no outcomes");
}

// Continued fraction for the incomplete beta function (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

int calibration_bin(double confidence, int bins) {
  if (confidence <= 0.0) return 1;
  const double m = static_cast<double>(bins);
  int idx = static_cast<int>(std::ceil(confidence * m));
  idx = std::clamp(idx, 1, bins);
  // ceil(c*M) can be off by one where c*M rounds across an integer; settle
  // against the edges (idx-1)/M < c <= idx/M as computed elsewhere.
  while (idx > 1 && confidence <= (idx - 1) / m) --idx;
  while (idx < bins && confidence > idx / m) ++idx;
  return idx;
}

double ece(std::span<const ScoredOutcome> outcomes, int bins) {
  require_non_empty(outcomes);
  if (bins < 1) fail(ErrorCode::InvalidArgument, "ece needs at least one bin");
  std::vector<double> conf_sum(bins, 0.0);
  std::vector<double> correct_sum(bins, 0.0);
  std::vector<std::int64_t> count(bins, 0);
  for (const auto& o : outcomes) {
    const int b = calibration_bin(o.confidence, bins) - 1;
    conf_sum[b] += o.confidence;
    correct_sum[b] += o.correct ? 1.0 : 0.0;
    ++count[b];
  }
  const double n = static_cast<double>(outcomes.size());
  double total = 0.0;
  for (int b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double c = static_cast<double>(count[b]);
    total += c / n * std::fabs(correct_sum[b] / c - conf_sum[b] / c);
  }
  return total;
}

OcrResult ocr(std::span<const ScoredOutcome> outcomes, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    fail(ErrorCode::InvalidArgument, "ocr threshold must lie in (0,1)");
  }
  OcrResult r;
  for (const auto& o : outcomes) {
    if (o.confidence > threshold) {
      ++r.thc;
      if (!o.correct) ++r.hcw;
    }
  }
  if (r.thc > 0) r.ratio = static_cast<double>(r.hcw) / static_cast<double>(r.thc);
  return r;
}

ConfidenceMeans confidence_means(std::span<const ScoredOutcome> outcomes) {
  double sum_c = 0.0, sum_w = 0.0;
  std::int64_t n_c = 0, n_w = 0;
  for (const auto& o : outcomes) {
    if (o.correct) {
      sum_c += o.confidence;
      ++n_c;
    } else {
      sum_w += o.confidence;
      ++n_w;
    }
  }
  ConfidenceMeans m;
  if (n_c > 0) m.correct = sum_c / static_cast<double>(n_c);
  if (n_w > 0) m.incorrect = sum_w / static_cast<double>(n_w);
  return m;
}

double confidence_gap(std::span<const ScoredOutcome> outcomes) {
  const auto m = confidence_means(outcomes);
  if (!m.correct || !m.incorrect) {
    fail(ErrorCode::DegenerateLog, "confidence gap needs correct and incorrect outcomes");
  }
  return *m.correct - *m.incorrect;
}

double consistency_gap(std::span<const Label> run1, std::span<const Label> run2) {
  if (run1.size() != run2.size()) {
    fail(ErrorCode::LengthMismatch, "paired runs differ in length");
  }
  if (run1.empty()) fail(ErrorCode::EmptyLog, "no paired predictions");
  std::size_t differ = 0;
  for (std::size_t i = 0; i < run1.size(); ++i) {
    if (run1[i] != run2[i]) ++differ;
  }
  return static_cast<double>(differ) / static_cast<double>(run1.size());
}

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double dof) {
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

Correlation ccc(std::span<const ScoredOutcome> outcomes) {
  if (outcomes.size() < 3) {
    fail(ErrorCode::DegenerateLog, "correlation needs at least 3 outcomes");
  }
  const double n = static_cast<double>(outcomes.size());
  double mean_c = 0.0, mean_y = 0.0;
  for (const auto& o : outcomes) {
    mean_c += o.confidence;
    mean_y += o.correct ? 1.0 : 0.0;
  }
  mean_c /= n;
  mean_y /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (const auto& o : outcomes) {
    const double dx = o.confidence - mean_c;
    const double dy = (o.correct ? 1.0 : 0.0) - mean_y;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  // Constant confidences leave only summation roundoff in sxx.
  if (sxx <= n * 1e-24 || syy <= 0.0) {
    fail(ErrorCode::DegenerateLog, "zero variance in confidence or correctness");
  }
  Correlation out;
  out.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double dof = n - 2.0;
  const double denom = 1.0 - out.r * out.r;
  if (denom <= 0.0) {
    out.p_value = 0.0;
  } else {
    const double t = out.r * std::sqrt(dof / denom);
    out.p_value = student_t_two_sided_p(t, dof);
  }
  return out;
}

double cwa(std::span<const ScoredOutcome> outcomes) {
  double mass = 0.0, correct_mass = 0.0;
  for (const auto& o : outcomes) {
    mass += o.confidence;
    if (o.correct) correct_mass += o.confidence;
  }
  if (!(mass > 0.0)) fail(ErrorCode::ZeroMass, "total confidence mass is zero");
  return correct_mass / mass;
}

ProfileResult build_trust_profile(const std::string& agent_id,
                                  std::span<const ScoredOutcome> outcomes,
                                  const TrustConfig& config,
                                  const std::optional<PairedRuns>& paired) {
  require_non_empty(outcomes);
  ProfileResult res;
  auto& p = res.profile;
  p.agent_id = agent_id;
  p.n = static_cast<std::int64_t>(outcomes.size());

  double conf_total = 0.0;
  std::int64_t n_correct = 0;
  for (const auto& o : outcomes) {
    conf_total += o.confidence;
    if (o.correct) ++n_correct;
  }
  p.accuracy = static_cast<double>(n_correct) / static_cast<double>(p.n);
  p.avg_conf = conf_total / static_cast<double>(p.n);

  const auto means = confidence_means(outcomes);
  p.conf_correct = means.correct;
  p.conf_incorrect = means.incorrect;
  if (means.correct && means.incorrect) {
    p.confidence_gap = *means.correct - *means.incorrect;
  } else {
    res.warnings.push_back("confidence_gap undefined: log is all-correct or all-wrong");
  }

  if (paired) {
    try {
      p.consistency_gap = consistency_gap(paired->run1, paired->run2);
    } catch (const Error& e) {
      res.warnings.push_back(std::string("consistency_gap undefined: ") + e.what());
    }
  }

  const auto o = ocr(outcomes, config.ocr_threshold);
  p.ocr = o.ratio;
  p.hcw = o.hcw;
  p.thc = o.thc;
  if (!o.ratio) res.warnings.push_back("ocr undefined: no prediction above threshold");

  try {
    const auto c = ccc(outcomes);
    p.ccc = c.r;
    p.ccc_p_value = c.p_value;
  } catch (const Error& e) {
    res.warnings.push_back(std::string("ccc undefined: ") + e.what());
  }

  p.ece = ece(outcomes, config.ece_bins);

  try {
    p.cwa = cwa(outcomes);
  } catch (const Error& e) {
    res.warnings.push_back(std::string("cwa undefined: ") + e.what());
  }
  return res;
}

double trust_score(const TrustProfile& profile) {
  if (!profile.ece || !profile.ocr || !profile.cwa) {
    fail(ErrorCode::MissingMetric,
         "trust score for '" + profile.agent_id + "' needs ece, ocr and cwa");
  }
  const double ccc_term = std::max(0.0, profile.ccc.value_or(0.0));
  const double s = ((1.0 - *profile.ece) + (1.0 - *profile.ocr) + ccc_term + *profile.cwa) / 4.0;
  return std::clamp(s, 0.0, 1.0);
}

namespace {

Json opt(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::optional<double> opt_from(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string csv_opt(const std::optional<double>& v) {
  return v ? format_fixed(*v, 4) : std::string();
}

}  // namespace

Json to_json(const TrustProfile& p) {
  Json j = Json::object();
  j["agent_id"] = p.agent_id;
  j["n"] = p.n;
  j["accuracy"] = p.accuracy;
  j["avg_conf"] = p.avg_conf;
  j["conf_correct"] = opt(p.conf_correct);
  j["conf_incorrect"] = opt(p.conf_incorrect);
  j["confidence_gap"] = opt(p.confidence_gap);
  j["consistency_gap"] = opt(p.consistency_gap);
  j["ocr"] = opt(p.ocr);
  j["hcw"] = p.hcw;
  j["thc"] = p.thc;
  j["ccc"] = opt(p.ccc);
  j["ccc_p_value"] = opt(p.ccc_p_value);
  j["ece"] = opt(p.ece);
  j["cwa"] = opt(p.cwa);
  return j;
}

TrustProfile profile_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("agent_id")) {
    fail(ErrorCode::MissingKey, "trust profile needs 'agent_id'");
  }
  TrustProfile p;
  try {
    p.agent_id = j.at("agent_id").get<std::string>();
    p.n = j.value("n", std::int64_t{0});
    p.accuracy = j.value("accuracy", 0.0);
    p.avg_conf = j.value("avg_conf", 0.0);
    p.conf_correct = opt_from(j, "conf_correct");
    p.conf_incorrect = opt_from(j, "conf_incorrect");
    p.confidence_gap = opt_from(j, "confidence_gap");
    p.consistency_gap = opt_from(j, "consistency_gap");
    p.ocr = opt_from(j, "ocr");
    p.hcw = j.value("hcw", std::int64_t{0});
    p.thc = j.value("thc", std::int64_t{0});
    p.ccc = opt_from(j, "ccc");
    p.ccc_p_value = opt_from(j, "ccc_p_value");
    p.ece = opt_from(j, "ece");
    p.cwa = opt_from(j, "cwa");
  } catch (const Json::exception& e) {
    fail(ErrorCode::MissingKey, std::string("malformed trust profile: ") + e.what());
  }
  return p;
}

std::string trust_profile_csv_header() {
  return "agent,acc,avg_conf,conf_corr,conf_incorr,cg,ocr,hcw,thc,ccc,p_val,ece,cwa";
}

std::string trust_profile_csv_row(const TrustProfile& p) {
  std::string row = p.agent_id;
  auto add = [&row](const std::string& cell) {
    row += ',';
    row += cell;
  };
  add(format_fixed(p.accuracy, 4));
  add(format_fixed(p.avg_conf, 4));
  add(csv_opt(p.conf_correct));
  add(csv_opt(p.conf_incorrect));
  add(csv_opt(p.confidence_gap));
  add(csv_opt(p.ocr));
  add(std::to_string(p.hcw));
  add(std::to_string(p.thc));
  add(csv_opt(p.ccc));
  add(csv_opt(p.ccc_p_value));
  add(csv_opt(p.ece));
  add(csv_opt(p.cwa));
  return row;
}

std::vector<ScoredOutcome> score_predictions(
    std::span<const AgentPrediction> predictions,
    const std::vector<std::pair<std::string, Label>>& truth) {
  std::map<std::string, const Label*> by_id;
  for (const auto& [id, label] : truth) by_id[id] = &label;
  std::vector<ScoredOutcome> out;
  out.reserve(predictions.size());
  for (const auto& p : predictions) {
    auto it = by_id.find(p.image_id);
    if (it == by_id.end()) continue;
    out.push_back({p.confidence, p.category == *it->second});
  }
  return out;
}

}  // namespace trustorch
