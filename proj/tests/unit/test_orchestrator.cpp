#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "test_support.hpp"
#include "trustorch/config.hpp"
#include "trustorch/orchestrator.hpp"
#include "trustorch/runner.hpp"

using namespace trustorch;
using testsupport::TempDir;
namespace fs = std::filesystem;

namespace {

const LabelSet kApple = LabelSet::apple_default();

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

AgentPrediction pred(const std::string& agent, const std::string& category, double conf,
                     Stage stage = Stage::Initial) {
  AgentPrediction p;
  p.agent_id = agent;
  p.image_id = "img";
  p.stage = stage;
  p.category = category;
  p.confidence = conf;
  p.justification = agent + " says " + category;
  return p;
}

ProfileMap table_profiles(const std::string& a = "A", const std::string& b = "B") {
  ProfileMap m;
  auto qwen = testsupport::table_profile("qwen");
  auto gpt = testsupport::table_profile("gpt");
  qwen.agent_id = a;
  gpt.agent_id = b;
  m[a] = qwen;
  m[b] = gpt;
  return m;
}

TrustProfile ideal_profile(const std::string& id) {
  TrustProfile p;
  p.agent_id = id;
  p.n = 100;
  p.accuracy = 1.0;
  p.avg_conf = 1.0;
  p.conf_correct = 1.0;
  p.ece = 0.0;
  p.ocr = 0.0;
  p.ccc = 1.0;
  p.cwa = 1.0;
  return p;
}

using Fixture = std::map<std::pair<std::string, std::string>, ScriptedAgent::Entry>;

void add(Fixture& fx, const std::string& image, const std::string& stage, const Json& reply) {
  fx[{image, stage}] = {{reply.dump()}, 10.0, 0.0};
}

}  // namespace

TEST_CASE("rule arbiter examples") {
  ArbitrationInput in{"img", {pred("A", "scab", 0.9), pred("B", "rust", 0.8)}, nullptr, {}};
  auto d = rule_arbitrate(in, kApple);
  CHECK(d.category == "scab");
  CHECK(d.confidence == 0.9);
  CHECK(d.policy == Policy::RuleFallback);
  REQUIRE(d.contributing.size() == 1);
  CHECK(d.contributing[0].agent_id == "A");

  // Trust-weighted: 0.9 * 0.415 < 0.8 * 0.561.
  const auto profiles = table_profiles();
  CHECK(trust_score(profiles.at("A")) == doctest::Approx(0.415).epsilon(0.002));
  CHECK(trust_score(profiles.at("B")) == doctest::Approx(0.561).epsilon(0.002));
  in.profiles = &profiles;
  d = rule_arbitrate(in, kApple);
  CHECK(d.category == "rust");
  CHECK(d.confidence == 0.8);

  ArbitrationInput tie{"img", {pred("A", "scab", 0.7), pred("B", "black-rot", 0.7)}, nullptr, {}};
  CHECK(rule_arbitrate(tie, kApple).category == "black-rot");
  ArbitrationInput same{"img", {pred("Z", "rust", 0.7), pred("A", "rust", 0.7)}, nullptr, {}};
  CHECK(rule_arbitrate(same, kApple).contributing[0].agent_id == "A");

  CHECK(code_of([] { (void)rule_arbitrate(ArbitrationInput{"img", {}, nullptr, {}}, kApple); }) ==
        ErrorCode::NoPredictions);
}

TEST_CASE("a confident retrieval vote overrides a low-trust pick") {
  const auto profiles = table_profiles();
  ArbitrationInput in{"img", {pred("A", "scab", 0.9), pred("B", "rust", 0.8)}, &profiles,
                      {{"healthy", 0.6}, {"rust", 0.4}}};
  auto d = rule_arbitrate(in, kApple, 0.7);
  CHECK(d.category == "healthy");
  CHECK(d.confidence == 0.6);
  CHECK(d.contributing.empty());

  in.votes = {{"healthy", 0.49}, {"rust", 0.3}, {"scab", 0.21}};
  CHECK(rule_arbitrate(in, kApple, 0.7).category == "rust");  // vote below 0.5

  in.votes = {{"healthy", 0.6}, {"rust", 0.4}};
  CHECK(rule_arbitrate(in, kApple, 0.5).category == "rust");  // pick trusted above tau

  in.votes = {{"scab", 0.9}, {"rust", 0.1}};
  d = rule_arbitrate(in, kApple, 0.7);
  CHECK(d.category == "scab");
  REQUIRE(d.contributing.size() == 1);
  CHECK(d.contributing[0].agent_id == "A");
}

TEST_CASE("rule arbiter ignores agent order") {
  std::mt19937_64 g(5);
  const auto profiles = table_profiles("a0", "a1");
  for (int round = 0; round < 300; ++round) {
    std::vector<AgentPrediction> preds;
    const int n = 2 + static_cast<int>(g() % 4);
    for (int i = 0; i < n; ++i) {
      // Coarse confidences make ties common.
      preds.push_back(pred("a" + std::to_string(i), kApple.labels()[g() % 4],
                           static_cast<double>(g() % 4 + 6) / 10.0));
    }
    const bool with_profiles = round % 2 == 0;
    ArbitrationInput in{"img", preds, with_profiles ? &profiles : nullptr, {}};
    if (with_profiles) {
      // Only agents with profiles take part.
      in.predictions.resize(2);
      in.votes = {{kApple.labels()[g() % 4], 0.55}};
    }
    const auto ref = rule_arbitrate(in, kApple);
    for (int p = 0; p < 5; ++p) {
      auto shuffled = in;
      std::shuffle(shuffled.predictions.begin(), shuffled.predictions.end(), g);
      REQUIRE(rule_arbitrate(shuffled, kApple) == ref);
    }
  }
}

TEST_CASE("single agent without votes decides its own prediction") {
  const auto p = pred("solo", "rust", 0.33, Stage::Reeval);
  const auto d = rule_arbitrate({"img", {p}, nullptr, {}}, kApple);
  CHECK(d.category == p.category);
  CHECK(d.confidence == p.confidence);
  CHECK(d.contributing[0].stage == Stage::Reeval);
}

TEST_CASE("re-evaluation trigger") {
  CHECK(should_reevaluate({{"q", 0.415}, {"g", 0.561}}, 0.7));
  CHECK_FALSE(should_reevaluate({{"q", 0.86}, {"g", 0.9}}, 0.7));
  CHECK_FALSE(should_reevaluate({{"q", 0.0}, {"g", 0.2}}, 0.0));
  CHECK(should_reevaluate({{"q", 0.69999}, {"g", 1.0}}, 0.7));
  CHECK_FALSE(should_reevaluate({{"q", 0.7}}, 0.7));

  const auto profiles = table_profiles();
  std::map<std::string, double> scores;
  for (const auto& [id, p] : profiles) scores[id] = trust_score(p);
  CHECK(should_reevaluate(scores, 0.7));
}

TEST_CASE("orchestrator prompt is text only and names every agent") {
  const auto profiles = table_profiles("qwen-vl", "gpt-4o");
  ArbitrationInput in{"img", {pred("qwen-vl", "scab", 0.9), pred("gpt-4o", "rust", 0.8)}, nullptr, {}};
  auto p = render_orchestrator_prompt(in, kApple);
  CHECK(p.find("qwen-vl") != std::string::npos);
  CHECK(p.find("gpt-4o") != std::string::npos);
  CHECK(p.find("\"rationale\"") != std::string::npos);
  CHECK(p.find("ECE") == std::string::npos);

  in.profiles = &profiles;
  in.votes = {{"scab", 0.50049999999999994}, {"healthy", 0.3996}, {"rust", 0.0999}};
  p = render_orchestrator_prompt(in, kApple);
  CHECK(p.find("ECE 0.4530") != std::string::npos);
  CHECK(p.find("ECE 0.2930") != std::string::npos);
  CHECK(p.find("0.5005") != std::string::npos);
  for (const char* marker : {"data:", "base64", "image_url"}) CHECK(p.find(marker) == std::string::npos);
}

TEST_CASE("trace records round-trip") {
  ReEvalTrace t;
  t.image_id = "img";
  t.triggered = true;
  t.trust_scores = {{"A", 0.4}, {"B", 0.9}};
  t.tau_used = 0.7;
  t.votes = {{"rust", 1.0}};
  t.exemplars = {{"r1", "rust", 0.25}};
  t.agents.push_back({"A", pred("A", "scab", 0.9), pred("A", "rust", 0.6, Stage::Reeval), true});
  t.agents.push_back({"B", pred("B", "rust", 0.8), std::nullopt, false});
  CHECK(trace_from_json(Json::parse(to_json(t).dump())) == t);
}

namespace {

struct PipelineRig {
  Fixture a_fx, b_fx;
  std::unique_ptr<ScriptedAgent> a, b;
  ProfileMap profiles = table_profiles();
  VectorIndex index;
  EmbeddingMap embeddings;
  ManualClock clock{0.0, 1.0};

  PipelineRig() {
    std::vector<EmbeddingRecord> refs{{"r1", "rust", {1, 0, 0}, {}},
                                      {"r2", "rust", {0.8, 0.6, 0}, {}},
                                      {"r3", "scab", {0, 1, 0}, {}}};
    index = VectorIndex::build(refs);
    embeddings["img"] = {1, 0, 0};
  }

  void arm() {
    a = std::make_unique<ScriptedAgent>("A", a_fx);
    b = std::make_unique<ScriptedAgent>("B", b_fx);
  }

  PipelineContext ctx(bool with_index = true) {
    PipelineContext c;
    c.labels = &kApple;
    c.agents = {{a.get(), 1}, {b.get(), 1}};
    c.profiles = &profiles;
    c.index = with_index ? &index : nullptr;
    c.embeddings = &embeddings;
    c.k = 3;
    c.tau = 0.7;
    c.clock = &clock;
    return c;
  }
};

const Sample kSample{"img", "img.jpg", std::string("rust")};

}  // namespace

TEST_CASE("trust pipeline re-evaluates low-trust agents with retrieval evidence") {
  PipelineRig rig;
  add(rig.a_fx, "img", "initial", testsupport::agent_reply("scab", 0.9));
  add(rig.a_fx, "img", "reeval", testsupport::agent_reply("rust", 0.7));
  add(rig.b_fx, "img", "initial", testsupport::agent_reply("rust", 0.8));
  add(rig.b_fx, "img", "reeval", testsupport::agent_reply("rust", 0.85));
  rig.arm();
  const auto out = run_trust_pipeline(kSample, rig.ctx());
  REQUIRE(out.trace);
  const auto& t = *out.trace;
  CHECK(t.triggered);
  CHECK(t.tau_used == 0.7);
  REQUIRE(t.votes.size() == 2);
  CHECK(t.votes[0].category == "rust");
  CHECK(t.exemplars.size() == 3);
  REQUIRE(t.agents.size() == 2);
  CHECK(t.agents[0].changed);
  CHECK_FALSE(t.agents[1].changed);  // reaffirmation
  CHECK(out.predictions.size() == 4);
  REQUIRE(out.decision);
  CHECK(out.decision->category == "rust");
  CHECK(out.decision->reeval_triggered);
  for (const auto& c : out.decision->contributing) CHECK(c.stage == Stage::Reeval);
}

TEST_CASE("trust pipeline without a trigger matches the confidence path") {
  PipelineRig rig;
  rig.profiles = {{"A", ideal_profile("A")}, {"B", ideal_profile("B")}};
  add(rig.a_fx, "img", "initial", testsupport::agent_reply("scab", 0.9));
  add(rig.b_fx, "img", "initial", testsupport::agent_reply("rust", 0.8));
  rig.arm();
  const auto trust = run_trust_pipeline(kSample, rig.ctx(false));
  REQUIRE(trust.trace);
  CHECK_FALSE(trust.trace->triggered);
  CHECK(trust.trace->votes.empty());
  CHECK(trust.predictions.size() == 2);
  const auto conf = run_confidence_pipeline(kSample, rig.ctx(false));
  REQUIRE(trust.decision);
  REQUIRE(conf.decision);
  CHECK(trust.decision->category == conf.decision->category);
  CHECK(trust.decision->confidence == conf.decision->confidence);
  CHECK(conf.decision->category == "scab");
  CHECK_FALSE(conf.trace);
}

TEST_CASE("trust pipeline fails fast without an index when re-evaluation is due") {
  PipelineRig rig;
  add(rig.a_fx, "img", "initial", testsupport::agent_reply("scab", 0.9));
  add(rig.b_fx, "img", "initial", testsupport::agent_reply("rust", 0.8));
  rig.arm();
  CHECK(code_of([&] { (void)run_trust_pipeline(kSample, rig.ctx(false)); }) == ErrorCode::IndexUnavailable);
}

TEST_CASE("agents that fail are skipped and logged") {
  PipelineRig rig;
  rig.a_fx[{"img", "initial"}] = {{"not json"}, 0.0, 0.0};
  add(rig.b_fx, "img", "initial", testsupport::agent_reply("rust", 0.8));
  add(rig.b_fx, "img", "reeval", testsupport::agent_reply("rust", 0.8));
  rig.arm();
  const auto out = run_trust_pipeline(kSample, rig.ctx());
  REQUIRE(out.failures.size() == 1);
  CHECK(out.failures[0].agent_id == "A");
  CHECK(out.failures[0].code == ErrorCode::FormatExhausted);
  CHECK(out.failures[0].attempts == 2);
  REQUIRE(out.trace);
  CHECK(out.trace->agents.size() == 1);  // no reeval without an initial answer
  REQUIRE(out.decision);
  CHECK(out.decision->category == "rust");
}

TEST_CASE("remote orchestrator failure falls back to the rule arbiter") {
  PipelineRig rig;
  add(rig.a_fx, "img", "initial", testsupport::agent_reply("scab", 0.9));
  add(rig.b_fx, "img", "initial", testsupport::agent_reply("rust", 0.8));
  rig.arm();
  Fixture o_fx;
  o_fx[{"img", "arbitrate"}] = {{"{\"category\":\"scab\",\"justification\":\"wrong key\",\"confidence\":0.5}"}, 0, 0};
  ScriptedAgent orch("orch", o_fx);
  auto ctx = rig.ctx(false);
  ctx.orchestrator = AgentHandle{&orch, 1};
  const auto out = run_confidence_pipeline(kSample, ctx);
  REQUIRE(out.decision);
  CHECK(out.decision->policy == Policy::RuleFallback);
  CHECK(out.decision->category == "scab");
  REQUIRE(out.failures.size() == 1);
  CHECK(out.failures[0].stage == "arbitrate");
  CHECK(out.orchestrator_prompts.size() == 1);

  Fixture ok_fx;
  add(ok_fx, "img", "arbitrate", testsupport::orchestrator_reply("healthy", 0.55));
  ScriptedAgent good("orch", ok_fx);
  ctx.orchestrator = AgentHandle{&good, 1};
  const auto ok = run_confidence_pipeline(kSample, ctx);
  CHECK(ok.decision->policy == Policy::ConfidenceAware);
  CHECK(ok.decision->category == "healthy");
  CHECK(ok.decision->contributing.size() == 2);
}

TEST_CASE("no valid agent reply leaves the image to retrieval or undecided") {
  PipelineRig rig;
  rig.a_fx[{"img", "initial"}] = {{"?"}, 0.0, 0.0};
  rig.b_fx[{"img", "initial"}] = {{"?"}, 0.0, 0.0};
  rig.arm();
  const auto with_index = run_confidence_pipeline(kSample, rig.ctx(true));
  REQUIRE(with_index.decision);
  CHECK(with_index.decision->category == "rust");
  const auto without = run_confidence_pipeline(kSample, rig.ctx(false));
  CHECK_FALSE(without.decision);
  CHECK_FALSE(without.undecided_reason.empty());
}

namespace {

std::vector<Sample> audit_samples(const std::string& dir) {
  return load_samples((fs::path(dir) / "samples.jsonl").string(), kApple);
}

std::vector<Json> records_of(const std::string& run_dir, const std::string& type) {
  std::vector<Json> out;
  for (const auto& j : read_jsonl((fs::path(run_dir) / kRunLogFile).string())) {
    if (j.value("type", "") == type) out.push_back(j);
  }
  return out;
}

}  // namespace

TEST_CASE("scripted 160-image run with Table-level profiles") {
  TempDir dir("orch");
  const auto cfg_path = testsupport::write_audit_fixture(dir.path());
  const auto cfg = load_config(cfg_path);
  const auto samples = audit_samples(dir.str());
  REQUIRE(samples.size() == 160);
  ManualClock clock(0.0, 1.0);
  const auto summary = run_experiment(cfg, samples, dir / "run", clock);
  CHECK(summary.decided == 160);
  CHECK(summary.undecided == 0);

  const auto traces = records_of(dir / "run", "trace");
  REQUIRE(traces.size() == 160);
  for (const auto& t : traces) {
    const auto trace = trace_from_json(t);
    double lowest = 1.0;
    for (const auto& [id, s] : trace.trust_scores) lowest = std::min(lowest, s);
    CHECK(trace.triggered == (lowest < trace.tau_used));
    CHECK(trace.triggered);
    for (const auto& a : trace.agents) {
      if (a.revised) CHECK(a.changed == (a.revised->category != a.initial.category));
    }
  }

  const auto requests = records_of(dir / "run", "orchestrator_request");
  CHECK(requests.size() == 160);
  for (const auto& r : requests) {
    CHECK(r.at("image_payload").is_null());
    CHECK(r.at("prompt").get<std::string>().find("base64") == std::string::npos);
  }

  testsupport::AuditPlan plan;
  const auto decisions = records_of(dir / "run", "decision");
  REQUIRE(decisions.size() == 160);
  for (int i = 0; i < 160; ++i) {
    const auto d = decision_from_json(decisions[i]);
    CHECK(d.image_id == plan.id(i));
    CHECK(d.category == plan.decision(i));
    CHECK(d.policy == Policy::TrustAwareRag);
  }

  // Stage monotonicity: every reeval prediction has an initial one.
  std::set<std::pair<std::string, std::string>> initial;
  for (const auto& p : records_of(dir / "run", "prediction")) {
    const auto pr = prediction_from_json(p);
    if (pr.stage == Stage::Initial) initial.insert({pr.image_id, pr.agent_id});
    if (pr.stage == Stage::Reeval) CHECK(initial.count({pr.image_id, pr.agent_id}) == 1);
    CHECK(pr.attempts <= 4);
  }
}

TEST_CASE("confidence policy over the same scripted split decides every image") {
  TempDir dir("orch");
  auto cfg = load_config(testsupport::write_audit_fixture(dir.path(), false));
  cfg.policy = Policy::ConfidenceAware;
  ManualClock clock(0.0, 1.0);
  const auto summary = run_experiment(cfg, audit_samples(dir.str()), dir / "run", clock);
  CHECK(summary.decided == 160);
  CHECK(records_of(dir / "run", "decision").size() == 160);
  CHECK(records_of(dir / "run", "trace").empty());
  // qwen (0.9) always outranks gpt (0.85) and is always right.
  for (const auto& d : records_of(dir / "run", "decision")) {
    CHECK(d.at("policy") == "rule_fallback");
  }
}

TEST_CASE("resume after an interruption processes only the remaining images") {
  TempDir dir("orch");
  const auto cfg = load_config(testsupport::write_audit_fixture(dir.path()));
  const auto samples = audit_samples(dir.str());
  ManualClock clock(0.0, 1.0);
  const std::vector<Sample> first(samples.begin(), samples.begin() + 80);
  CHECK(run_experiment(cfg, first, dir / "run", clock).decided == 80);

  // Simulate a crash mid-image: a prediction for image 80 and a torn line.
  {
    std::ofstream out(dir / "run/runlog.jsonl", std::ios::app);
    Json p = to_json(pred("gpt", "rust", 0.5));
    p["image_id"] = samples[80].image_id;
    p["type"] = "prediction";
    out << p.dump() << "\n{\"type\":\"predic";
  }
  const auto summary = run_experiment(cfg, samples, dir / "run", clock);
  CHECK(summary.skipped == 80);
  CHECK(summary.decided == 80);
  const auto decisions = records_of(dir / "run", "decision");
  CHECK(decisions.size() == 160);
  std::set<std::string> ids;
  for (const auto& d : decisions) ids.insert(d.at("image_id").get<std::string>());
  CHECK(ids.size() == 160);
  std::size_t preds_80 = 0;
  for (const auto& p : records_of(dir / "run", "prediction")) {
    preds_80 += p.at("image_id") == samples[80].image_id ? 1 : 0;
  }
  CHECK(preds_80 == 4);

  CHECK(run_experiment(cfg, samples, dir / "run", clock).skipped == 160);
}

TEST_CASE("trust policy without an index fails before any agent call") {
  TempDir dir("orch");
  auto cfg = load_config(testsupport::write_audit_fixture(dir.path()));
  cfg.index_path.reset();
  ManualClock clock;
  CHECK(code_of([&] { (void)run_experiment(cfg, audit_samples(dir.str()), dir / "run", clock); }) ==
        ErrorCode::IndexUnavailable);
  CHECK_FALSE(fs::exists(dir / "run"));
}

TEST_CASE("scripted runs are byte-identical under a fixed clock") {
  TempDir dir("orch");
  const auto cfg = load_config(testsupport::write_audit_fixture(dir.path()));
  const auto samples = audit_samples(dir.str());
  ManualClock c1(0.0, 1.0), c2(0.0, 1.0);
  run_experiment(cfg, samples, dir / "r1", c1);
  run_experiment(cfg, samples, dir / "r2", c2);
  CHECK(testsupport::read_file(dir / "r1/runlog.jsonl") == testsupport::read_file(dir / "r2/runlog.jsonl"));
  CHECK(testsupport::snapshot_tree(dir.path() / "r1") == testsupport::snapshot_tree(dir.path() / "r2"));
}

TEST_CASE("experiment input validation") {
  TempDir dir("orch");
  auto cfg = load_config(testsupport::write_audit_fixture(dir.path()));
  ManualClock clock;
  CHECK(code_of([&] { (void)run_experiment(cfg, {}, dir / "run", clock); }) == ErrorCode::ConfigError);
  auto samples = audit_samples(dir.str());
  samples[1].image_id = samples[0].image_id;
  CHECK(code_of([&] { (void)run_experiment(cfg, samples, dir / "run", clock); }) == ErrorCode::ConfigError);
  cfg.profiles_path = dir / "missing-profiles.json";
  CHECK(code_of([&] { (void)run_experiment(cfg, audit_samples(dir.str()), dir / "run2", clock); }) ==
        ErrorCode::Io);
}
