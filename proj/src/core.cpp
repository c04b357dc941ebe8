#include "trustorch/core.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace trustorch {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Ok: return "Ok";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::EmptyLog: return "EmptyLog";
    case ErrorCode::DegenerateLog: return "DegenerateLog";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ZeroMass: return "ZeroMass";
    case ErrorCode::MissingMetric: return "MissingMetric";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::EmptyHits: return "EmptyHits";
    case ErrorCode::ZeroSimilarityMass: return "ZeroSimilarityMass";
    case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::CorruptRecord: return "CorruptRecord";
    case ErrorCode::EmptyVotes: return "EmptyVotes";
    case ErrorCode::NoJsonFound: return "NoJsonFound";
    case ErrorCode::MissingKey: return "MissingKey";
    case ErrorCode::ConfidenceOutOfRange: return "ConfidenceOutOfRange";
    case ErrorCode::AgentUnreachable: return "AgentUnreachable";
    case ErrorCode::FormatExhausted: return "FormatExhausted";
    case ErrorCode::MissingFixtureEntry: return "MissingFixtureEntry";
    case ErrorCode::NoPredictions: return "NoPredictions";
    case ErrorCode::IndexUnavailable: return "IndexUnavailable";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::NoErrors: return "NoErrors";
    case ErrorCode::AlignmentError: return "AlignmentError";
    case ErrorCode::MissingLog: return "MissingLog";
    case ErrorCode::UnknownLabelDir: return "UnknownLabelDir";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Internal: return "Internal";
  }
  return "Internal";
}

std::string canonical_form(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_sep = false;
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || ch == '_' || ch == '-') {
      pending_sep = !out.empty();
      continue;
    }
    if (pending_sep) {
      out.push_back('-');
      pending_sep = false;
    }
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

LabelSet::LabelSet(std::vector<std::string> labels) {
  if (labels.size() < 2) {
    fail(ErrorCode::ConfigError, "label set needs at least 2 labels");
  }
  std::set<std::string> seen;
  for (auto& l : labels) {
    auto c = canonical_form(l);
    if (c.empty()) fail(ErrorCode::ConfigError, "empty label in label set");
    if (!seen.insert(c).second) {
      fail(ErrorCode::ConfigError, "duplicate label '" + c + "'");
    }
    labels_.push_back(std::move(c));
  }
}

LabelSet LabelSet::apple_default() {
  return LabelSet({"healthy", "black-rot", "rust", "scab"});
}

bool LabelSet::contains(std::string_view label) const noexcept {
  return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
}

std::size_t LabelSet::index_of(std::string_view label) const {
  auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) {
    fail(ErrorCode::UnknownLabel, "unknown label '" + std::string(label) + "'");
  }
  return static_cast<std::size_t>(it - labels_.begin());
}

bool LabelSet::before(std::string_view a, std::string_view b) const {
  return index_of(a) < index_of(b);
}

Label canonicalize_label(std::string_view raw, const LabelSet& labels) {
  auto c = canonical_form(raw);
  if (c.empty() || !labels.contains(c)) {
    fail(ErrorCode::UnknownLabel, "unknown label '" + std::string(raw) + "'");
  }
  return c;
}

std::string_view stage_name(Stage stage) noexcept {
  return stage == Stage::Initial ? "initial" : "reeval";
}

Stage parse_stage(std::string_view name) {
  if (name == "initial") return Stage::Initial;
  if (name == "reeval") return Stage::Reeval;
  fail(ErrorCode::InvalidArgument, "unknown stage '" + std::string(name) + "'");
}

std::string_view policy_name(Policy policy) noexcept {
  switch (policy) {
    case Policy::ConfidenceAware: return "confidence_aware";
    case Policy::TrustAwareRag: return "trust_aware_rag";
    case Policy::RuleFallback: return "rule_fallback";
  }
  return "rule_fallback";
}

Policy parse_policy(std::string_view name) {
  if (name == "confidence_aware" || name == "confidence") return Policy::ConfidenceAware;
  if (name == "trust_aware_rag" || name == "trust-rag") return Policy::TrustAwareRag;
  if (name == "rule_fallback") return Policy::RuleFallback;
  fail(ErrorCode::ConfigError, "unknown policy '" + std::string(name) + "'");
}

Json to_json(const AgentPrediction& p) {
  Json j = Json::object();
  j["image_id"] = p.image_id;
  j["agent_id"] = p.agent_id;
  j["stage"] = stage_name(p.stage);
  j["category"] = p.category;
  j["confidence"] = p.confidence;
  j["justification"] = p.justification;
  j["latency_ms"] = p.latency_ms;
  j["cost_usd"] = p.cost_usd;
  j["attempts"] = p.attempts;
  j["ts"] = p.ts;
  return j;
}

namespace {

template <typename T>
T required(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    fail(ErrorCode::MissingKey, std::string("missing key '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception&) {
    fail(ErrorCode::MissingKey, std::string("key '") + key + "' has the wrong type");
  }
}

}  // namespace

AgentPrediction prediction_from_json(const Json& j) {
  AgentPrediction p;
  p.image_id = required<std::string>(j, "image_id");
  p.agent_id = required<std::string>(j, "agent_id");
  p.stage = parse_stage(required<std::string>(j, "stage"));
  p.category = required<std::string>(j, "category");
  p.confidence = required<double>(j, "confidence");
  p.justification = j.value("justification", std::string());
  p.latency_ms = j.value("latency_ms", 0.0);
  p.cost_usd = j.value("cost_usd", 0.0);
  p.attempts = j.value("attempts", 1);
  p.ts = j.value("ts", 0.0);
  if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) {
    fail(ErrorCode::ConfidenceOutOfRange, "confidence outside [0,1]");
  }
  return p;
}

Json to_json(const FinalDecision& d) {
  Json contributing = Json::array();
  for (const auto& ref : d.contributing) {
    contributing.push_back({{"agent_id", ref.agent_id}, {"stage", stage_name(ref.stage)}});
  }
  return Json{{"image_id", d.image_id},
              {"category", d.category},
              {"confidence", d.confidence},
              {"rationale", d.rationale},
              {"policy", policy_name(d.policy)},
              {"reeval_triggered", d.reeval_triggered},
              {"contributing", std::move(contributing)}};
}

FinalDecision decision_from_json(const Json& j) {
  FinalDecision d;
  d.image_id = required<std::string>(j, "image_id");
  d.category = required<std::string>(j, "category");
  d.confidence = required<double>(j, "confidence");
  d.rationale = j.value("rationale", std::string());
  d.policy = parse_policy(required<std::string>(j, "policy"));
  d.reeval_triggered = j.value("reeval_triggered", false);
  if (j.contains("contributing")) {
    for (const auto& ref : j.at("contributing")) {
      d.contributing.push_back({required<std::string>(ref, "agent_id"),
                                parse_stage(required<std::string>(ref, "stage"))});
    }
  }
  return d;
}

double SystemClock::now_ms() {
  using namespace std::chrono;
  const double t =
      duration<double, std::milli>(system_clock::now().time_since_epoch()).count();
  std::lock_guard lock(mu_);
  last_ = std::max(last_, t);
  return last_;
}

double ManualClock::now_ms() {
  std::lock_guard lock(mu_);
  const double t = now_;
  now_ += step_;
  return t;
}

void ManualClock::advance(double ms) {
  std::lock_guard lock(mu_);
  if (ms > 0) now_ += ms;
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  std::string out(buf);
  if (out.front() == '-' && out.find_first_not_of("-0.") == std::string::npos) {
    out.erase(0, 1);
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write '" + path + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) fail(ErrorCode::Io, "write failed for '" + path + "'");
}

std::vector<Json> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path + "'");
  std::vector<Json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto j = Json::parse(line, nullptr, false);
    if (j.is_discarded()) throw CorruptRecordError(lineno, "malformed JSON");
    out.push_back(std::move(j));
  }
  return out;
}

std::vector<std::pair<std::string, Label>> read_ground_truth(
    const std::string& path, const LabelSet& labels) {
  std::vector<std::pair<std::string, Label>> out;
  std::set<std::string> seen;
  for (const auto& j : read_jsonl(path)) {
    auto id = required<std::string>(j, "image_id");
    auto label = canonicalize_label(required<std::string>(j, "label"), labels);
    if (!seen.insert(id).second) {
      fail(ErrorCode::DuplicateId, "duplicate image_id '" + id + "' in ground truth");
    }
    out.emplace_back(std::move(id), std::move(label));
  }
  return out;
}

void write_ground_truth(const std::string& path,
                        const std::vector<std::pair<std::string, Label>>& truth) {
  std::string text;
  for (const auto& [id, label] : truth) {
    text += Json{{"image_id", id}, {"label", label}}.dump();
    text += '\n';
  }
  write_text_file(path, text);
}

std::vector<AgentPrediction> read_prediction_log(const std::string& path) {
  std::vector<AgentPrediction> out;
  for (const auto& j : read_jsonl(path)) {
    if (j.contains("type") && j.at("type") != "prediction") continue;
    out.push_back(prediction_from_json(j));
  }
  return out;
}

}  // namespace trustorch
