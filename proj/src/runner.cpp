#include "trustorch/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "trustorch/evaluation.hpp"
#include "trustorch/trust_metrics.hpp"
#include "trustorch/vector_store.hpp"

namespace fs = std::filesystem;

namespace trustorch {

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) fail(ErrorCode::InvalidArgument, "below(0)");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string_view split_name(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  fail(ErrorCode::InvalidArgument, "unknown split '" + std::string(name) + "'");
}

std::array<std::size_t, 3> apportion(std::size_t n, const SplitRatios& ratios) {
  const std::array<double, 3> r{ratios.train, ratios.val, ratios.test};
  const double total = r[0] + r[1] + r[2];
  for (double x : r) {
    if (!(x >= 0.0) || !(total > 0.0)) fail(ErrorCode::InvalidArgument, "split ratios must be non-negative");
  }
  std::array<std::size_t, 3> out{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double quota = static_cast<double>(n) * r[i] / total;
    out[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    frac[i] = quota - static_cast<double>(out[i]);
    assigned += out[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b] + 1e-12; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++out[order[i % 3]];
  return out;
}

std::array<std::size_t, 3> RunManifest::split_sizes() const {
  std::array<std::size_t, 3> s{};
  for (const auto& e : entries) ++s[static_cast<int>(e.split)];
  return s;
}

Json to_json(const RunManifest& m) {
  Json j = Json::object();
  j["run_id"] = m.run_id;
  j["root"] = m.root;
  j["seed"] = m.seed;
  Json r = Json::object();
  r["train"] = m.ratios.train;
  r["val"] = m.ratios.val;
  r["test"] = m.ratios.test;
  j["ratios"] = std::move(r);
  j["labels"] = m.labels.labels();
  Json arr = Json::array();
  for (const auto& e : m.entries) {
    Json x = Json::object();
    x["image_id"] = e.image_id;
    x["path"] = e.path;
    x["label"] = e.label;
    x["split"] = split_name(e.split);
    arr.push_back(std::move(x));
  }
  j["samples"] = std::move(arr);
  return j;
}

RunManifest manifest_from_json(const Json& j) {
  try {
    RunManifest m;
    m.run_id = j.value("run_id", std::string());
    m.root = j.value("root", std::string());
    m.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("ratios")) {
      const auto& r = j.at("ratios");
      m.ratios = {r.at("train").get<double>(), r.at("val").get<double>(), r.at("test").get<double>()};
    }
    if (j.contains("labels")) m.labels = LabelSet(j.at("labels").get<std::vector<std::string>>());
    for (const auto& x : j.at("samples")) {
      ManifestEntry e;
      e.image_id = x.at("image_id").get<std::string>();
      e.path = x.at("path").get<std::string>();
      e.label = canonicalize_label(x.at("label").get<std::string>(), m.labels);
      e.split = parse_split(x.value("split", std::string("train")));
      m.entries.push_back(std::move(e));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("malformed manifest: ") + e.what());
  }
}

namespace {

bool is_image_file(const fs::path& p) {
  static const std::set<std::string> kExt{".jpg", ".jpeg", ".png", ".bmp", ".gif", ".webp", ".tif", ".tiff"};
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return kExt.count(ext) > 0;
}

}  // namespace

RunManifest ingest_dataset(const std::string& root, const LabelSet& labels, std::uint64_t seed,
                           const SplitRatios& ratios) {
  if (!fs::is_directory(root)) fail(ErrorCode::Io, "dataset root '" + root + "' is not a directory");
  std::map<Label, std::vector<ManifestEntry>> by_label;
  std::vector<fs::path> dirs;
  for (const auto& d : fs::directory_iterator(root)) {
    if (d.is_directory() && d.path().filename().string().front() != '.') dirs.push_back(d.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    const auto name = dir.filename().string();
    const auto canon = canonical_form(name);
    if (!labels.contains(canon)) {
      fail(ErrorCode::UnknownLabelDir, "directory '" + name + "' does not name a configured label");
    }
    if (by_label.count(canon)) {
      fail(ErrorCode::UnknownLabelDir, "two directories map to label '" + canon + "'");
    }
    auto& entries = by_label[canon];
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(dir)) {
      if (f.is_regular_file() && f.path().filename().string().front() != '.' && is_image_file(f.path())) {
        files.push_back(f.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      ManifestEntry e;
      e.image_id = canon + "/" + f.filename().string();
      e.path = f.lexically_normal().string();
      e.label = canon;
      entries.push_back(std::move(e));
    }
  }
  for (const auto& l : labels.labels()) {
    auto it = by_label.find(l);
    if (it == by_label.end() || it->second.empty()) {
      fail(ErrorCode::EmptyClass, "label '" + l + "' has no images under '" + root + "'");
    }
  }

  RunManifest m;
  m.root = root;
  m.seed = seed;
  m.ratios = ratios;
  m.labels = labels;
  std::uint64_t digest = fnv1a(std::to_string(seed));
  for (const auto& l : labels.labels()) {
    auto entries = by_label.at(l);
    Rng rng(mix_seed(seed, fnv1a(l)));
    rng.shuffle(entries);
    const auto sizes = apportion(entries.size(), ratios);
    std::size_t i = 0;
    for (int s = 0; s < 3; ++s) {
      for (std::size_t c = 0; c < sizes[s]; ++c, ++i) entries[i].split = static_cast<Split>(s);
    }
    for (auto& e : entries) m.entries.push_back(std::move(e));
  }
  std::sort(m.entries.begin(), m.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.image_id < b.image_id; });
  for (const auto& e : m.entries) {
    digest ^= fnv1a(e.image_id + ":" + std::string(split_name(e.split)));
    digest *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest));
  m.run_id = "ingest-" + std::string(buf);
  return m;
}

std::vector<Sample> load_samples(const std::string& path, const LabelSet& labels,
                                 const std::optional<Split>& split) {
  std::vector<Sample> out;
  const auto text = read_text_file(path);
  auto whole = Json::parse(text, nullptr, false);
  if (!whole.is_discarded() && whole.is_object() && whole.contains("samples")) {
    const auto m = manifest_from_json(whole);
    for (const auto& e : m.entries) {
      if (split && e.split != *split) continue;
      if (!labels.contains(e.label)) fail(ErrorCode::UnknownLabel, "manifest label '" + e.label + "' not configured");
      out.push_back({e.image_id, e.path, e.label});
    }
    return out;
  }
  if (split) fail(ErrorCode::InvalidArgument, "--split needs a manifest.json sample file");
  const auto base = fs::path(path).parent_path();
  for (const auto& j : read_jsonl(path)) {
    Sample s;
    s.image_id = j.at("image_id").get<std::string>();
    std::string ref = j.contains("image_ref") ? j.at("image_ref").get<std::string>()
                                              : j.value("path", std::string());
    if (!ref.empty() && fs::path(ref).is_relative()) ref = (base / ref).lexically_normal().string();
    s.image_ref = ref;
    if (j.contains("label") && !j.at("label").is_null()) {
      s.true_label = canonicalize_label(j.at("label").get<std::string>(), labels);
    }
    out.push_back(std::move(s));
  }
  return out;
}

SyntheticAgentSpec SyntheticAgentSpec::parse(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    fail(ErrorCode::InvalidArgument, "agent '" + std::string(text) + "' must look like kind:accuracy[@conf]");
  }
  SyntheticAgentSpec s;
  const auto kind = text.substr(0, colon);
  auto rest = std::string(text.substr(colon + 1));
  if (kind == "calibrated") {
    s.kind = Kind::Calibrated;
  } else if (kind == "overconfident") {
    s.kind = Kind::Overconfident;
  } else {
    fail(ErrorCode::InvalidArgument, "unknown synthetic agent kind '" + std::string(kind) + "'");
  }
  auto parse_num = [&](const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || !(x >= 0.0 && x <= 1.0)) {
      fail(ErrorCode::InvalidArgument, "synthetic agent value '" + v + "' must be a number in [0,1]");
    }
    return x;
  };
  const auto at = rest.find('@');
  if (at != std::string::npos) {
    if (s.kind != Kind::Overconfident) {
      fail(ErrorCode::InvalidArgument, "only overconfident agents take an @confidence");
    }
    s.confidence = parse_num(rest.substr(at + 1));
    rest.resize(at);
  }
  s.accuracy = parse_num(rest);
  s.agent_id = std::string(kind) + "-" + rest;
  return s;
}

std::string SyntheticAgentSpec::describe() const {
  if (kind == Kind::Calibrated) return "calibrated:" + format_fixed(accuracy, 2);
  return "overconfident:" + format_fixed(accuracy, 2) + "@" + format_fixed(confidence, 2);
}

SyntheticAgent::SyntheticAgent(std::string agent_id, std::map<std::string, Answer> answers)
    : agent_id_(std::move(agent_id)), answers_(std::move(answers)) {}

TransportReply SyntheticAgent::complete(const AgentRequest& request, std::span<const ChatMessage>) {
  auto it = answers_.find(request.image_id);
  if (it == answers_.end()) {
    fail(ErrorCode::MissingFixtureEntry, "synthetic agent '" + agent_id_ + "' has no answer for '" +
                                             request.image_id + "'");
  }
  Json reply = Json::object();
  reply["category"] = it->second.category;
  reply["justification"] = request.stage == Stage::Reeval ? "reaffirming the initial assessment"
                                                          : "synthetic assessment";
  reply["confidence"] = it->second.confidence;
  return {reply.dump(), it->second.latency_ms, 0.0};
}

std::map<std::string, SyntheticAgent::Answer> synthetic_answers(const SyntheticAgentSpec& spec,
                                                                std::span<const Sample> samples,
                                                                const LabelSet& labels,
                                                                std::uint64_t seed) {
  std::map<std::string, SyntheticAgent::Answer> out;
  for (const auto& s : samples) {
    if (!s.true_label) fail(ErrorCode::InvalidArgument, "synthetic samples need labels");
    Rng rng(mix_seed(seed, fnv1a(spec.agent_id + "|" + s.image_id)));
    SyntheticAgent::Answer a;
    const bool correct = rng.uniform() < spec.accuracy;
    if (correct) {
      a.category = *s.true_label;
    } else {
      std::vector<Label> others;
      for (const auto& l : labels.labels()) {
        if (l != *s.true_label) others.push_back(l);
      }
      a.category = others[rng.below(others.size())];
    }
    const double jitter = rng.uniform(-0.02, 0.02);
    if (spec.kind == SyntheticAgentSpec::Kind::Calibrated) {
      a.confidence = std::clamp(spec.accuracy + (correct ? 0.05 : -0.05) + jitter, 0.0, 1.0);
    } else {
      a.confidence = spec.confidence;
    }
    a.latency_ms = std::round(rng.uniform(500.0, 1500.0));
    out[s.image_id] = std::move(a);
  }
  return out;
}

namespace {

std::vector<Sample> make_samples(const std::string& prefix, std::size_t n, const LabelSet& labels, Rng& rng) {
  std::vector<Label> assigned;
  for (std::size_t i = 0; i < n; ++i) assigned.push_back(labels.labels()[i % labels.size()]);
  rng.shuffle(assigned);
  std::vector<Sample> out;
  char buf[32];
  for (std::size_t i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "%s-%05zu", prefix.c_str(), i + 1);
    out.push_back({buf, "", assigned[i]});
  }
  return out;
}

std::vector<double> embed(const std::vector<double>& prototype, double noise, Rng& rng) {
  std::vector<double> v(prototype);
  for (auto& x : v) x += noise * rng.normal() / std::sqrt(static_cast<double>(v.size()));
  return normalize(v);
}

double decision_accuracy(const std::string& run_dir) {
  const auto r = load_run(run_dir);
  std::map<std::string, Label> truth(r.truth.begin(), r.truth.end());
  std::size_t hits = 0;
  for (const auto& d : r.decisions) hits += truth.at(d.image_id) == d.category ? 1 : 0;
  // Undecided images are left out of both numerator and denominator.
  return r.decisions.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(r.decisions.size());
}

}  // namespace

SimulationResult simulate(const SimulationOptions& options, const std::string& out_dir) {
  if (options.agents.empty()) fail(ErrorCode::InvalidArgument, "simulate needs at least one agent");
  if (options.n == 0) fail(ErrorCode::InvalidArgument, "simulate needs n >= 1");
  if (options.dim < 2) fail(ErrorCode::InvalidArgument, "embedding dim must be >= 2");
  std::vector<SyntheticAgentSpec> specs;
  std::set<std::string> ids;
  for (const auto& text : options.agents) {
    auto s = SyntheticAgentSpec::parse(text);
    for (int dup = 2; ids.count(s.agent_id); ++dup) {
      s.agent_id = SyntheticAgentSpec::parse(text).agent_id + "-" + std::to_string(dup);
    }
    ids.insert(s.agent_id);
    specs.push_back(std::move(s));
  }
  const auto& labels = options.labels;
  const std::size_t profiling_n = options.profiling_n ? options.profiling_n : options.n;

  Rng data_rng(mix_seed(options.seed, 1));
  std::map<Label, std::vector<double>> prototypes;
  for (const auto& l : labels.labels()) {
    std::vector<double> p(options.dim);
    for (auto& x : p) x = data_rng.normal();
    prototypes[l] = normalize(p);
  }
  const auto profiling = make_samples("prof", profiling_n, labels, data_rng);
  const auto evaluation = make_samples("eval", options.n, labels, data_rng);

  std::vector<EmbeddingRecord> records;
  for (const auto& s : profiling) {
    records.push_back({s.image_id, *s.true_label, embed(prototypes.at(*s.true_label), options.embedding_noise, data_rng), {}});
  }
  EmbeddingMap queries;
  for (const auto& s : evaluation) {
    queries[s.image_id] = embed(prototypes.at(*s.true_label), options.embedding_noise, data_rng);
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create '" + out_dir + "': " + ec.message());
  const fs::path out(out_dir);
  auto index = std::make_shared<const VectorIndex>(VectorIndex::build(records));
  save_index(*index, (out / "index").string());

  // Profiling pass through the regular agent interface.
  ProfileMap profiles;
  Json profile_arr = Json::array();
  std::string profile_csv = trust_profile_csv_header() + "\n";
  std::vector<std::string> warnings;
  {
    ManualClock clock(0.0, 1.0);
    for (const auto& spec : specs) {
      SyntheticAgent agent(spec.agent_id, synthetic_answers(spec, profiling, labels, mix_seed(options.seed, 2)));
      std::vector<ScoredOutcome> outcomes;
      for (const auto& s : profiling) {
        AgentRequest req{s.image_id, std::nullopt, render_agent_prompt(labels), Stage::Initial, false};
        const auto p = invoke_with_retries(agent, req, labels, 0, clock);
        outcomes.push_back({p.confidence, p.category == *s.true_label});
      }
      auto result = build_trust_profile(spec.agent_id, outcomes);
      for (const auto& w : result.warnings) warnings.push_back(spec.agent_id + ": " + w);
      profile_arr.push_back(to_json(result.profile));
      profile_csv += trust_profile_csv_row(result.profile) + "\n";
      profiles[spec.agent_id] = std::move(result.profile);
    }
  }
  write_text_file((out / "profiles.json").string(), profile_arr.dump(2) + "\n");
  write_text_file((out / "trust_profiles.csv").string(), profile_csv);

  SimulationResult result;
  Json summary = Json::object();
  summary["seed"] = options.seed;
  summary["n"] = options.n;
  summary["profiling_n"] = profiling_n;
  summary["dim"] = options.dim;
  summary["k"] = options.k;
  summary["tau"] = options.tau;
  Json agent_json = Json::array();
  for (const auto& s : specs) {
    Json a = Json::object();
    a["agent_id"] = s.agent_id;
    a["spec"] = s.describe();
    a["trust_score"] = trust_score(profiles.at(s.agent_id));
    agent_json.push_back(std::move(a));
  }

  Json policies = Json::object();
  for (auto policy : {Policy::ConfidenceAware, Policy::TrustAwareRag}) {
    ExperimentConfig cfg;
    cfg.labels = labels;
    cfg.policy = policy;
    cfg.k = options.k;
    cfg.tau = options.tau;
    cfg.retry_cap = 0;
    cfg.seed = options.seed;
    std::vector<std::unique_ptr<Agent>> agents;
    for (const auto& spec : specs) {
      AgentSpec as;
      as.agent_id = spec.agent_id;
      as.kind = AgentKind::Scripted;
      as.script_path = "synthetic:" + spec.describe();
      cfg.agents.push_back(as);
      agents.push_back(std::make_unique<SyntheticAgent>(
          spec.agent_id, synthetic_answers(spec, evaluation, labels, mix_seed(options.seed, 3))));
    }
    ManualClock clock(0.0, 1.0);
    Experiment exp(cfg, std::move(agents), nullptr, clock);
    Json snapshot = to_json(cfg);
    snapshot["simulation"] = true;
    exp.set_config_snapshot(snapshot);
    if (policy == Policy::TrustAwareRag) {
      exp.set_profiles(profiles);
      exp.set_index(index);
      exp.set_embeddings(queries);
    }
    const auto run_dir = (out / std::string(policy_name(policy))).string();
    fs::remove(fs::path(run_dir) / kRunLogFile, ec);
    const auto run_summary = exp.run(evaluation, run_dir);
    const auto report = emit_report(run_dir);
    const double acc = decision_accuracy(run_dir);
    Json p = to_json(run_summary);
    p["accuracy"] = acc;
    const auto r = load_run(run_dir);
    std::size_t triggered = 0;
    for (const auto& t : r.traces) triggered += t.triggered ? 1 : 0;
    p["reeval_triggered"] = triggered;
    policies[std::string(policy_name(policy))] = std::move(p);
    if (policy == Policy::ConfidenceAware) {
      result.confidence_accuracy = acc;
      for (auto& a : agent_json) {
        const auto& block = report.at("agents").at(a.at("agent_id").get<std::string>()).at("initial");
        const double agent_acc = block.at("accuracy").get<double>();
        a["accuracy"] = agent_acc;
        result.best_single_accuracy = std::max(result.best_single_accuracy, agent_acc);
      }
    } else {
      result.trust_accuracy = acc;
      result.trigger_rate = static_cast<double>(triggered) / static_cast<double>(options.n);
    }
  }
  summary["agents"] = std::move(agent_json);
  summary["policies"] = std::move(policies);
  summary["best_single_accuracy"] = result.best_single_accuracy;
  summary["warnings"] = warnings;
  write_text_file((out / "summary.json").string(), summary.dump(2) + "\n");
  result.summary = std::move(summary);
  return result;
}

}  // namespace trustorch
