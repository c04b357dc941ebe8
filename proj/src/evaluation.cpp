#include "trustorch/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

namespace fs = std::filesystem;

namespace trustorch {

namespace {

using TruthMap = std::map<std::string, Label>;

TruthMap truth_map(const std::vector<std::pair<std::string, Label>>& truth) {
  TruthMap m;
  for (const auto& [id, label] : truth) m[id] = label;
  return m;
}

Json optional_json(const std::optional<double>& v) {
  return v ? Json(*v) : Json(nullptr);
}

std::string optional_cell(const std::optional<double>& v) {
  return v ? format_fixed(*v) : std::string();
}

std::string file_safe(const std::string& name) {
  std::string out;
  for (char c : name) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    out += ok ? c : '_';
  }
  return out.empty() ? "_" : out;
}

// Non-negative fraction of 128-bit integers, kept reduced.
__extension__ typedef __int128 Int128;

Int128 gcd128(Int128 a, Int128 b) {
  while (b != 0) {
    const Int128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

struct Fraction {
  Int128 num = 0;
  Int128 den = 1;

  Fraction() = default;
  Fraction(std::int64_t n, std::int64_t d) : num(n), den(d) { reduce(); }

  void reduce() {
    const Int128 g = gcd128(num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }
  double value() const {
    constexpr Int128 kExact = Int128(1) << 53;
    if (num <= kExact && den <= kExact) return static_cast<double>(num) / static_cast<double>(den);
    return static_cast<double>(static_cast<long double>(num) / static_cast<long double>(den));
  }
};

// Sum of products a*b. Falls back to floating point if the exact
// denominators overflow.
class FractionSum {
 public:
  void add(const Fraction& a, const Fraction& b) {
    approx_ += static_cast<long double>(a.value()) * static_cast<long double>(b.value());
    if (!exact_) return;
    Fraction p;
    Int128 n, d, lhs, rhs, den;
    if (__builtin_mul_overflow(a.num, b.num, &n) || __builtin_mul_overflow(a.den, b.den, &d)) {
      exact_ = false;
      return;
    }
    p.num = n;
    p.den = d;
    p.reduce();
    if (__builtin_mul_overflow(sum_.num, p.den, &lhs) || __builtin_mul_overflow(p.num, sum_.den, &rhs) ||
        __builtin_add_overflow(lhs, rhs, &n) || __builtin_mul_overflow(sum_.den, p.den, &den)) {
      exact_ = false;
      return;
    }
    sum_.num = n;
    sum_.den = den;
    sum_.reduce();
  }
  double value() const { return exact_ ? sum_.value() : static_cast<double>(approx_); }

 private:
  Fraction sum_;
  long double approx_ = 0.0L;
  bool exact_ = true;
};

}  // namespace

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (const auto& row : counts) {
    for (auto c : row) t += c;
  }
  return t;
}

std::string ConfusionMatrix::to_csv() const {
  std::string out = "true_label";
  for (const auto& l : labels) out += "," + l;
  out += '\n';
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out += labels[i];
    for (auto c : counts[i]) out += "," + std::to_string(c);
    out += '\n';
  }
  return out;
}

Json to_json(const MetricsReport& m) {
  Json j = Json::object();
  j["n"] = m.n;
  j["accuracy"] = m.accuracy;
  j["precision_macro"] = m.precision_macro;
  j["recall_macro"] = m.recall_macro;
  j["f1_macro"] = m.f1_macro;
  j["precision_weighted"] = m.precision_weighted;
  j["recall_weighted"] = m.recall_weighted;
  j["f1_weighted"] = m.f1_weighted;
  Json per = Json::array();
  for (const auto& c : m.per_class) {
    Json e = Json::object();
    e["label"] = c.label;
    e["precision"] = c.precision;
    e["recall"] = c.recall;
    e["f1"] = c.f1;
    e["support"] = c.support;
    per.push_back(std::move(e));
  }
  j["per_class"] = std::move(per);
  Json cm = Json::object();
  cm["labels"] = m.confusion.labels;
  cm["counts"] = m.confusion.counts;
  j["confusion"] = std::move(cm);
  j["warnings"] = m.warnings;
  return j;
}

MetricsReport classification_metrics(std::span<const Label> predicted, std::span<const Label> truth,
                                     const LabelSet& labels) {
  if (predicted.size() != truth.size()) {
    fail(ErrorCode::LengthMismatch, "predicted and truth lists differ in length (" +
                                        std::to_string(predicted.size()) + " vs " +
                                        std::to_string(truth.size()) + ")");
  }
  if (predicted.empty()) fail(ErrorCode::EmptyLog, "no predictions to evaluate");
  const auto k = labels.size();
  MetricsReport r;
  r.n = static_cast<std::int64_t>(predicted.size());
  r.confusion.labels = labels.labels();
  r.confusion.counts.assign(k, std::vector<std::int64_t>(k, 0));
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto t = labels.index_of(truth[i]);
    const auto p = labels.index_of(predicted[i]);
    ++r.confusion.counts[t][p];
    if (t == p) ++hits;
  }
  r.accuracy = static_cast<double>(hits) / static_cast<double>(r.n);

  // Scores are ratios of counts; sums run over exact fractions so that the
  // aggregates are rounded once (macro-F1 of the 2x2 hand case is 11/15 to
  // the last bit, and balanced weighted sums equal macro sums bit for bit).
  std::vector<Fraction> prec(k), rec(k), f1(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::int64_t tp = r.confusion.counts[c][c];
    std::int64_t support = 0;
    std::int64_t predicted_count = 0;
    for (std::size_t o = 0; o < k; ++o) {
      support += r.confusion.counts[c][o];
      predicted_count += r.confusion.counts[o][c];
    }
    ClassScores s;
    s.label = labels.labels()[c];
    s.support = support;
    if (predicted_count > 0) {
      prec[c] = Fraction(tp, predicted_count);
    } else {
      r.warnings.push_back("label '" + s.label + "' was never predicted; precision set to 0");
    }
    if (support > 0) rec[c] = Fraction(tp, support);
    // 2PR/(P+R) reduces to 2tp / (predicted + support).
    if (tp > 0) f1[c] = Fraction(2 * tp, predicted_count + support);
    s.precision = prec[c].value();
    s.recall = rec[c].value();
    s.f1 = f1[c].value();
    r.per_class.push_back(std::move(s));
  }

  const auto k64 = static_cast<std::int64_t>(k);
  FractionSum pm, rm, fm, pw, rw, fw;
  for (std::size_t c = 0; c < k; ++c) {
    const Fraction w(r.per_class[c].support, r.n);
    const Fraction uniform(1, k64);
    pm.add(prec[c], uniform);
    rm.add(rec[c], uniform);
    fm.add(f1[c], uniform);
    pw.add(prec[c], w);
    rw.add(rec[c], w);
    fw.add(f1[c], w);
  }
  r.precision_macro = pm.value();
  r.recall_macro = rm.value();
  r.f1_macro = fm.value();
  r.precision_weighted = pw.value();
  r.recall_weighted = rw.value();
  r.f1_weighted = fw.value();
  return r;
}

std::string CalibrationCurve::to_csv() const {
  std::string out = "bin_lo,bin_hi,count,mean_conf,accuracy\n";
  for (const auto& b : bins) {
    out += format_fixed(b.lo) + "," + format_fixed(b.hi) + "," + std::to_string(b.count) + "," +
           optional_cell(b.mean_conf) + "," + optional_cell(b.accuracy) + "\n";
  }
  return out;
}

double CalibrationCurve::implied_ece() const {
  std::int64_t n = 0;
  for (const auto& b : bins) n += b.count;
  if (n == 0) return 0.0;
  double total = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    total += static_cast<double>(b.count) / static_cast<double>(n) * std::fabs(*b.accuracy - *b.mean_conf);
  }
  return total;
}

CalibrationCurve calibration_curve(std::span<const ScoredOutcome> outcomes, int bins) {
  if (outcomes.empty()) fail(ErrorCode::EmptyLog, "calibration curve needs at least one outcome");
  if (bins < 1) fail(ErrorCode::InvalidArgument, "bins must be >= 1");
  std::vector<double> conf_sum(bins, 0.0);
  std::vector<double> correct(bins, 0.0);
  std::vector<std::int64_t> count(bins, 0);
  for (const auto& o : outcomes) {
    const int m = calibration_bin(o.confidence, bins) - 1;
    conf_sum[m] += o.confidence;
    correct[m] += o.correct ? 1.0 : 0.0;
    ++count[m];
  }
  CalibrationCurve curve;
  for (int m = 0; m < bins; ++m) {
    CalibrationBin b;
    b.lo = static_cast<double>(m) / bins;
    b.hi = static_cast<double>(m + 1) / bins;
    b.count = count[m];
    if (count[m] > 0) {
      b.mean_conf = conf_sum[m] / static_cast<double>(count[m]);
      b.accuracy = correct[m] / static_cast<double>(count[m]);
    }
    curve.bins.push_back(b);
  }
  return curve;
}

OverconfidencePoint overconfidence_point(std::span<const ScoredOutcome> outcomes,
                                         const MetricsReport& metrics) {
  double sum = 0.0;
  std::int64_t wrong = 0;
  for (const auto& o : outcomes) {
    if (o.correct) continue;
    sum += o.confidence;
    ++wrong;
  }
  if (wrong == 0) fail(ErrorCode::NoErrors, "no incorrect predictions to measure overconfidence on");
  return {sum / static_cast<double>(wrong), metrics.f1_macro};
}

std::vector<DisagreementStats> disagreement_analysis(
    std::span<const AgentPrediction> agent_log, std::span<const FinalDecision> decisions,
    const std::vector<std::pair<std::string, Label>>& truth) {
  const auto truths = truth_map(truth);
  for (const auto& d : decisions) {
    if (!truths.count(d.image_id)) {
      fail(ErrorCode::AlignmentError, "decision for '" + d.image_id + "' has no ground truth");
    }
  }
  // Latest stage per (agent, image); the log order breaks ties.
  std::vector<std::string> agents;
  std::map<std::string, std::map<std::string, const AgentPrediction*>> latest;
  for (const auto& p : agent_log) {
    if (!latest.count(p.agent_id)) agents.push_back(p.agent_id);
    auto& slot = latest[p.agent_id][p.image_id];
    if (!slot || static_cast<int>(p.stage) >= static_cast<int>(slot->stage)) slot = &p;
  }
  std::sort(agents.begin(), agents.end());

  std::vector<DisagreementStats> out;
  for (const auto& agent : agents) {
    DisagreementStats s;
    s.agent_id = agent;
    const auto& preds = latest.at(agent);
    for (const auto& d : decisions) {
      ++s.evaluated;
      auto it = preds.find(d.image_id);
      if (it == preds.end()) {
        ++s.missing_predictions;
        continue;
      }
      if (it->second->category == d.category) continue;
      ++s.disagreements;
      if (d.category == truths.at(d.image_id)) ++s.orchestrator_correct;
    }
    if (s.evaluated > 0) {
      s.disagreement_rate = static_cast<double>(s.disagreements) / static_cast<double>(s.evaluated);
    }
    if (s.disagreements > 0) {
      s.orchestrator_correct_rate =
          static_cast<double>(s.orchestrator_correct) / static_cast<double>(s.disagreements);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ReevalBehavior> reeval_behavior_analysis(
    std::span<const ReEvalTrace> traces, const std::vector<std::pair<std::string, Label>>& truth) {
  const auto truths = truth_map(truth);
  std::map<std::string, ReevalBehavior> by_agent;
  for (const auto& t : traces) {
    auto truth_it = truths.find(t.image_id);
    for (const auto& a : t.agents) {
      auto& b = by_agent[a.agent_id];
      b.agent_id = a.agent_id;
      ++b.traces;
      if (!t.triggered || !a.revised) continue;
      ++b.reevaluated;
      const bool changed = a.revised->category != a.initial.category;
      if (truth_it == truths.end()) {
        if (!changed) ++b.reaffirmations;
        continue;
      }
      const bool initial_ok = a.initial.category == truth_it->second;
      const bool revised_ok = a.revised->category == truth_it->second;
      if (!changed) {
        ++b.reaffirmations;
        if (revised_ok) ++b.reaffirm_correct;
      } else if (initial_ok && !revised_ok) {
        ++b.overcorrections;
      } else if (!initial_ok && revised_ok) {
        ++b.corrections;
      }
    }
  }
  std::vector<ReevalBehavior> out;
  for (auto& [id, b] : by_agent) {
    const double n = static_cast<double>(b.traces);
    b.reaffirmation_rate = static_cast<double>(b.reaffirmations) / n;
    b.overcorrection_rate = static_cast<double>(b.overcorrections) / n;
    if (b.reaffirmations > 0) {
      b.reaffirm_correct_rate =
          static_cast<double>(b.reaffirm_correct) / static_cast<double>(b.reaffirmations);
    }
    out.push_back(b);
  }
  return out;
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) fail(ErrorCode::EmptyLog, "quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<LatencyStats> latency_stats(std::span<const AgentPrediction> predictions,
                                        int histogram_bins) {
  if (predictions.empty()) fail(ErrorCode::EmptyLog, "no predictions for latency statistics");
  if (histogram_bins < 1) fail(ErrorCode::InvalidArgument, "histogram_bins must be >= 1");
  std::map<std::pair<std::string, int>, std::vector<double>> groups;
  for (const auto& p : predictions) {
    groups[{p.agent_id, static_cast<int>(p.stage)}].push_back(p.latency_ms);
  }
  std::vector<LatencyStats> out;
  for (auto& [key, xs] : groups) {
    std::sort(xs.begin(), xs.end());
    LatencyStats s;
    s.agent_id = key.first;
    s.stage = static_cast<Stage>(key.second);
    s.count = static_cast<std::int64_t>(xs.size());
    s.min = xs.front();
    s.max = xs.back();
    s.q1 = quantile_sorted(xs, 0.25);
    s.median = quantile_sorted(xs, 0.5);
    s.q3 = quantile_sorted(xs, 0.75);
    s.hist_lo = s.min;
    s.hist_hi = s.max;
    s.histogram.assign(histogram_bins, 0);
    const double width = (s.max - s.min) / histogram_bins;
    for (double x : xs) {
      int b = width > 0 ? static_cast<int>((x - s.min) / width) : 0;
      b = std::clamp(b, 0, histogram_bins - 1);
      ++s.histogram[b];
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string latency_csv(std::span<const LatencyStats> stats) {
  std::string out = "agent,stage,count,min,q1,median,q3,max,hist_lo,hist_hi,histogram\n";
  for (const auto& s : stats) {
    std::string hist;
    for (std::size_t i = 0; i < s.histogram.size(); ++i) {
      if (i) hist += ';';
      hist += std::to_string(s.histogram[i]);
    }
    out += s.agent_id + "," + std::string(stage_name(s.stage)) + "," + std::to_string(s.count) + "," +
           format_fixed(s.min) + "," + format_fixed(s.q1) + "," + format_fixed(s.median) + "," +
           format_fixed(s.q3) + "," + format_fixed(s.max) + "," + format_fixed(s.hist_lo) + "," +
           format_fixed(s.hist_hi) + "," + hist + "\n";
  }
  return out;
}

RunRecords load_run(const std::string& run_dir) {
  const auto log_path = fs::path(run_dir) / kRunLogFile;
  if (!fs::exists(log_path)) {
    fail(ErrorCode::MissingLog, "no run log at '" + log_path.string() + "'");
  }
  RunRecords r;
  const auto config_path = fs::path(run_dir) / kConfigSnapshotFile;
  if (fs::exists(config_path)) {
    auto cfg = Json::parse(read_text_file(config_path.string()), nullptr, false);
    if (cfg.is_object()) {
      if (cfg.contains("labels")) r.labels = LabelSet(cfg.at("labels").get<std::vector<std::string>>());
      r.trust_config.ece_bins = cfg.value("ece_bins", r.trust_config.ece_bins);
      r.trust_config.ocr_threshold = cfg.value("ocr_threshold", r.trust_config.ocr_threshold);
    }
  }
  const auto records = read_jsonl(log_path.string());
  if (records.empty()) fail(ErrorCode::MissingLog, "run log '" + log_path.string() + "' is empty");
  std::set<std::string> seen_agents;
  for (const auto& rec : records) {
    const auto type = rec.value("type", std::string());
    if (type == "prediction") {
      auto p = prediction_from_json(rec);
      if (seen_agents.insert(p.agent_id).second) r.agent_order.push_back(p.agent_id);
      r.predictions.push_back(std::move(p));
    } else if (type == "trace") {
      r.traces.push_back(trace_from_json(rec));
    } else if (type == "decision") {
      r.decisions.push_back(decision_from_json(rec));
    } else if (type == "undecided") {
      r.undecided.push_back(rec.at("image_id").get<std::string>());
    }
  }
  const auto truth_path = fs::path(run_dir) / kGroundTruthFile;
  if (fs::exists(truth_path)) r.truth = read_ground_truth(truth_path.string(), r.labels);
  return r;
}

namespace {

struct Evaluated {
  std::vector<Label> predicted;
  std::vector<Label> truth;
  std::vector<ScoredOutcome> outcomes;
};

template <typename Item, typename GetId, typename GetLabel, typename GetConf>
Evaluated join_truth(const std::vector<Item>& items, const TruthMap& truths, GetId id, GetLabel label,
                     GetConf conf) {
  Evaluated e;
  for (const auto& it : items) {
    auto t = truths.find(id(it));
    if (t == truths.end()) continue;
    e.predicted.push_back(label(it));
    e.truth.push_back(t->second);
    e.outcomes.push_back({conf(it), label(it) == t->second});
  }
  return e;
}

Json metrics_block(const Evaluated& e, const RunRecords& r, const fs::path& out, const std::string& name,
                   std::vector<std::string>& warnings) {
  if (e.predicted.empty()) return nullptr;
  auto m = classification_metrics(e.predicted, e.truth, r.labels);
  for (const auto& w : m.warnings) warnings.push_back(name + ": " + w);
  write_text_file((out / ("confusion_" + file_safe(name) + ".csv")).string(), m.confusion.to_csv());
  const auto curve = calibration_curve(e.outcomes, r.trust_config.ece_bins);
  write_text_file((out / ("calibration_" + file_safe(name) + ".csv")).string(), curve.to_csv());

  Json j = to_json(m);
  j["ece"] = ece(e.outcomes, r.trust_config.ece_bins);
  try {
    const auto pt = overconfidence_point(e.outcomes, m);
    Json oc = Json::object();
    oc["mean_conf_on_wrong"] = pt.mean_conf_on_wrong;
    oc["macro_f1"] = pt.macro_f1;
    j["overconfidence"] = std::move(oc);
  } catch (const Error& err) {
    if (err.code() != ErrorCode::NoErrors) throw;
    j["overconfidence"] = nullptr;
  }
  return j;
}

}  // namespace

Json emit_report(const std::string& run_dir, const std::string& out_dir) {
  const auto r = load_run(run_dir);
  const fs::path out = out_dir.empty() ? fs::path(run_dir) / "report" : fs::path(out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) fail(ErrorCode::Io, "cannot create '" + out.string() + "': " + ec.message());
  const auto truths = truth_map(r.truth);
  std::vector<std::string> warnings;

  Json metrics = Json::object();
  metrics["labels"] = r.labels.labels();
  metrics["n_decisions"] = r.decisions.size();
  metrics["n_undecided"] = r.undecided.size();
  metrics["n_truth"] = r.truth.size();

  const auto decided = join_truth(
      r.decisions, truths, [](const FinalDecision& d) { return d.image_id; },
      [](const FinalDecision& d) { return d.category; }, [](const FinalDecision& d) { return d.confidence; });
  metrics["orchestrator"] = metrics_block(decided, r, out, "orchestrator", warnings);

  Json agents = Json::object();
  std::string profiles_csv = trust_profile_csv_header() + "\n";
  for (const auto& agent : r.agent_order) {
    Json block = Json::object();
    for (auto stage : {Stage::Initial, Stage::Reeval}) {
      std::vector<AgentPrediction> preds;
      for (const auto& p : r.predictions) {
        if (p.agent_id == agent && p.stage == stage) preds.push_back(p);
      }
      const std::string name = stage == Stage::Initial ? agent : agent + "_reeval";
      const auto e = join_truth(
          preds, truths, [](const AgentPrediction& p) { return p.image_id; },
          [](const AgentPrediction& p) { return p.category; },
          [](const AgentPrediction& p) { return p.confidence; });
      block[std::string(stage_name(stage))] = metrics_block(e, r, out, name, warnings);
      if (stage == Stage::Initial && !e.outcomes.empty()) {
        auto prof = build_trust_profile(agent, e.outcomes, r.trust_config);
        for (const auto& w : prof.warnings) warnings.push_back(agent + ": " + w);
        profiles_csv += trust_profile_csv_row(prof.profile) + "\n";
      }
    }
    agents[agent] = std::move(block);
  }
  metrics["agents"] = std::move(agents);

  Json reeval = Json::array();
  std::int64_t triggered = 0;
  for (const auto& t : r.traces) triggered += t.triggered ? 1 : 0;
  for (const auto& b : reeval_behavior_analysis(r.traces, r.truth)) {
    Json j = Json::object();
    j["agent_id"] = b.agent_id;
    j["traces"] = b.traces;
    j["reevaluated"] = b.reevaluated;
    j["reaffirmations"] = b.reaffirmations;
    j["reaffirmation_rate"] = b.reaffirmation_rate;
    j["reaffirm_correct"] = b.reaffirm_correct;
    j["reaffirm_correct_rate"] = optional_json(b.reaffirm_correct_rate);
    j["overcorrections"] = b.overcorrections;
    j["overcorrection_rate"] = b.overcorrection_rate;
    j["corrections"] = b.corrections;
    reeval.push_back(std::move(j));
  }

  Json disagreements = Json::object();
  Json per_agent = Json::array();
  if (!r.truth.empty()) {
    std::vector<FinalDecision> with_truth;
    for (const auto& d : r.decisions) {
      if (truths.count(d.image_id)) with_truth.push_back(d);
    }
    for (const auto& s : disagreement_analysis(r.predictions, with_truth, r.truth)) {
      Json j = Json::object();
      j["agent_id"] = s.agent_id;
      j["evaluated"] = s.evaluated;
      j["disagreements"] = s.disagreements;
      j["disagreement_rate"] = s.disagreement_rate;
      j["orchestrator_correct"] = s.orchestrator_correct;
      j["orchestrator_correct_rate"] = optional_json(s.orchestrator_correct_rate);
      j["missing_predictions"] = s.missing_predictions;
      per_agent.push_back(std::move(j));
    }
  }
  disagreements["agents"] = std::move(per_agent);
  disagreements["reeval_triggered"] = triggered;
  disagreements["traces"] = r.traces.size();
  disagreements["reeval_behavior"] = std::move(reeval);
  write_text_file((out / "disagreements.json").string(), disagreements.dump(2) + "\n");

  write_text_file((out / "trust_profiles.csv").string(), profiles_csv);

  Json latency = Json::array();
  std::string lat_csv;
  if (!r.predictions.empty()) {
    const auto stats = latency_stats(r.predictions);
    lat_csv = latency_csv(stats);
    for (const auto& s : stats) {
      Json j = Json::object();
      j["agent_id"] = s.agent_id;
      j["stage"] = stage_name(s.stage);
      j["count"] = s.count;
      j["min"] = s.min;
      j["q1"] = s.q1;
      j["median"] = s.median;
      j["q3"] = s.q3;
      j["max"] = s.max;
      j["hist_lo"] = s.hist_lo;
      j["hist_hi"] = s.hist_hi;
      j["histogram"] = s.histogram;
      latency.push_back(std::move(j));
    }
  } else {
    lat_csv = latency_csv({});
  }
  write_text_file((out / "latency.csv").string(), lat_csv);
  metrics["latency"] = std::move(latency);
  metrics["warnings"] = warnings;
  write_text_file((out / "metrics.json").string(), metrics.dump(2) + "\n");
  return metrics;
}

}  // namespace trustorch
