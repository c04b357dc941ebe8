// Scripted 160-image run used by the audit and trigger checks. Every agent and
// orchestrator reply is fixed, so the disagreement and re-evaluation counts
// are known by construction:
//   gpt  i<3        initial correct, reaffirms
//        3<=i<20    initial wrong, reaffirms
//        20<=i<23   initial correct, revised wrong (overcorrection)
//        i>=23      initial wrong, revised correct
//   orchestrator    3<=i<19: truth (gpt wrong) | 23<=i<43: second wrong label
//                   (gpt right) | otherwise gpt's revised answer
#pragma once

#include <random>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "trustorch/core.hpp"
#include "trustorch/vector_store.hpp"

namespace testsupport {

struct AuditPlan {
  static constexpr int kImages = 160;
  trustorch::LabelSet labels = trustorch::LabelSet::apple_default();

  std::string id(int i) const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "img-%03d", i);
    return buf;
  }
  std::string truth(int i) const { return labels.labels()[i % 4]; }
  std::string wrong1(int i) const { return labels.labels()[(i + 1) % 4]; }
  std::string wrong2(int i) const { return labels.labels()[(i + 2) % 4]; }

  std::string gpt_initial(int i) const {
    if (i < 3 || (i >= 20 && i < 23)) return truth(i);
    return wrong1(i);
  }
  std::string gpt_revised(int i) const {
    if (i < 3 || i >= 23) return truth(i);
    return wrong1(i);
  }
  std::string decision(int i) const {
    if (i >= 3 && i < 19) return truth(i);
    if (i >= 23 && i < 43) return wrong2(i);
    return gpt_revised(i);
  }
};

// Writes fixtures, index, embeddings, profiles, samples and config.json into
// `dir`. Returns the config path.
inline std::string write_audit_fixture(const fs::path& dir, bool scripted_orchestrator = true) {
  AuditPlan plan;
  std::vector<Json> gpt, qwen, orch, samples, embeddings;
  std::mt19937_64 g(20240601);
  std::vector<trustorch::EmbeddingRecord> refs;
  for (int r = 0; r < 40; ++r) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "ref-%03d", r);
    refs.push_back({buf, plan.labels.labels()[r % 4], unit_vector(g, 8), {}});
  }
  for (int i = 0; i < AuditPlan::kImages; ++i) {
    const auto id = plan.id(i);
    gpt.push_back(fixture_row(id, "initial", agent_reply(plan.gpt_initial(i), 0.85), 900.0 + i));
    gpt.push_back(fixture_row(id, "reeval", agent_reply(plan.gpt_revised(i), 0.8), 700.0 + i));
    qwen.push_back(fixture_row(id, "initial", agent_reply(plan.truth(i), 0.9), 400.0 + i));
    qwen.push_back(fixture_row(id, "reeval", agent_reply(plan.truth(i), 0.9), 350.0 + i));
    orch.push_back(fixture_row(id, "arbitrate", orchestrator_reply(plan.decision(i), 0.9), 50.0));
    Json s = Json::object();
    s["image_id"] = id;
    s["image_ref"] = "images/" + id + ".jpg";
    s["label"] = plan.truth(i);
    samples.push_back(s);
    Json e = Json::object();
    e["id"] = id;
    e["vector"] = unit_vector(g, 8);
    embeddings.push_back(e);
  }
  write_jsonl((dir / "gpt.jsonl").string(), gpt);
  write_jsonl((dir / "qwen.jsonl").string(), qwen);
  write_jsonl((dir / "orchestrator.jsonl").string(), orch);
  write_jsonl((dir / "samples.jsonl").string(), samples);
  write_jsonl((dir / "queries.jsonl").string(), embeddings);
  trustorch::save_index(trustorch::VectorIndex::build(refs), (dir / "index").string());
  Json profiles = Json::array();
  profiles.push_back(trustorch::to_json(table_profile("gpt")));
  profiles.push_back(trustorch::to_json(table_profile("qwen")));
  write_file((dir / "profiles.json").string(), profiles.dump(2));

  Json cfg = Json::object();
  cfg["labels"] = plan.labels.labels();
  Json agents = Json::array();
  agents.push_back({{"agent_id", "gpt"}, {"kind", "scripted"}, {"script_path", "gpt.jsonl"}});
  agents.push_back({{"agent_id", "qwen"}, {"kind", "scripted"}, {"script_path", "qwen.jsonl"}});
  cfg["agents"] = agents;
  if (scripted_orchestrator) {
    cfg["orchestrator"] = {{"agent_id", "orchestrator"}, {"kind", "scripted"}, {"script_path", "orchestrator.jsonl"}};
  } else {
    cfg["orchestrator"] = "rule_fallback";
  }
  cfg["policy"] = "trust_aware_rag";
  cfg["k"] = 5;
  cfg["tau"] = 0.7;
  cfg["index_path"] = "index";
  cfg["embeddings_path"] = "queries.jsonl";
  cfg["profiles_path"] = "profiles.json";
  const auto path = (dir / "config.json").string();
  write_file(path, cfg.dump(2));
  return path;
}

}  // namespace testsupport
