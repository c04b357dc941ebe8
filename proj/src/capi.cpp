#include "trustorch/trustorch.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <new>

#include "trustorch/evaluation.hpp"
#include "trustorch/orchestrator.hpp"
#include "trustorch/runner.hpp"
#include "trustorch/trust_metrics.hpp"
#include "trustorch/vector_store.hpp"

namespace fs = std::filesystem;
using namespace trustorch;

struct tor_index {
  VectorIndex index;
};

namespace {

thread_local std::string g_last_error;

tor_status set_error(tor_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
tor_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return TOR_OK;
  } catch (const Error& e) {
    return set_error(static_cast<tor_status>(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return set_error(TOR_CONFIG_ERROR, std::string("invalid JSON: ") + e.what());
  } catch (const std::bad_alloc&) {
    return set_error(TOR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(TOR_INTERNAL, e.what());
  } catch (...) {
    return set_error(TOR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

void require(const void* p, const char* what) {
  if (!p) fail(ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

std::vector<ScoredOutcome> outcomes(const double* conf, const uint8_t* correct, size_t n) {
  if (n > 0) {
    require(conf, "conf");
    require(correct, "correct");
  }
  std::vector<ScoredOutcome> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = {conf[i], correct[i] != 0};
  return out;
}

LabelSet labels_from(const char* labels_json) {
  if (!labels_json) return LabelSet::apple_default();
  auto j = Json::parse(labels_json, nullptr, false);
  if (j.is_discarded() || !j.is_array()) fail(ErrorCode::ConfigError, "labels must be a JSON array");
  std::vector<std::string> raw;
  for (const auto& x : j) raw.push_back(canonical_form(x.get<std::string>()));
  return LabelSet(std::move(raw));
}

Json warnings_json(const std::vector<std::string>& w) {
  return Json(w);
}

Json hits_json(const std::vector<RetrievalHit>& hits) {
  Json arr = Json::array();
  for (const auto& h : hits) {
    Json j = Json::object();
    j["record_id"] = h.record_id;
    j["label"] = h.label;
    j["similarity"] = h.similarity;
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace

extern "C" {

const char* tor_last_error(void) { return g_last_error.c_str(); }

const char* tor_status_name(tor_status status) {
  static thread_local std::string name;
  name = std::string(error_code_name(static_cast<ErrorCode>(status)));
  return name.c_str();
}

void tor_string_free(char* s) { std::free(s); }

const char* tor_version(void) { return "0.1.0"; }

tor_status tor_ece(const double* conf, const uint8_t* correct, size_t n, int bins, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = ece(outcomes(conf, correct, n), bins);
  });
}

tor_status tor_ocr(const double* conf, const uint8_t* correct, size_t n, double threshold, double* ratio,
                   int* defined, int64_t* hcw, int64_t* thc) {
  return guarded([&] {
    const auto r = ocr(outcomes(conf, correct, n), threshold);
    if (ratio) *ratio = r.ratio.value_or(0.0);
    if (defined) *defined = r.ratio ? 1 : 0;
    if (hcw) *hcw = r.hcw;
    if (thc) *thc = r.thc;
  });
}

tor_status tor_cwa(const double* conf, const uint8_t* correct, size_t n, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = cwa(outcomes(conf, correct, n));
  });
}

tor_status tor_ccc(const double* conf, const uint8_t* correct, size_t n, double* r, double* p_value) {
  return guarded([&] {
    const auto c = ccc(outcomes(conf, correct, n));
    if (r) *r = c.r;
    if (p_value) *p_value = c.p_value;
  });
}

tor_status tor_confidence_gap(const double* conf, const uint8_t* correct, size_t n, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = confidence_gap(outcomes(conf, correct, n));
  });
}

tor_status tor_trust_score(const char* profile_json, double* out) {
  return guarded([&] {
    require(profile_json, "profile_json");
    require(out, "out");
    *out = trust_score(profile_from_json(Json::parse(profile_json)));
  });
}

tor_status tor_index_load(const char* dir, tor_index** out, char** warnings) {
  return guarded([&] {
    require(dir, "dir");
    require(out, "out");
    std::vector<std::string> w;
    auto idx = std::make_unique<tor_index>(tor_index{load_index(dir, &w)});
    put(warnings, warnings_json(w).dump());
    *out = idx.release();
  });
}

tor_status tor_index_build_from_embeddings(const char* embeddings, tor_index** out, char** warnings) {
  return guarded([&] {
    require(embeddings, "embeddings");
    require(out, "out");
    std::vector<std::string> w;
    std::unique_ptr<tor_index> idx;
    if (fs::is_directory(embeddings)) {
      idx = std::make_unique<tor_index>(tor_index{load_index(embeddings, &w)});
    } else {
      std::vector<EmbeddingRecord> records;
      for (const auto& j : read_jsonl(embeddings)) records.push_back(embedding_record_from_json(j));
      idx = std::make_unique<tor_index>(tor_index{VectorIndex::build(std::move(records), 0, &w)});
    }
    put(warnings, warnings_json(w).dump());
    *out = idx.release();
  });
}

tor_status tor_index_save(const tor_index* index, const char* dir) {
  return guarded([&] {
    require(index, "index");
    require(dir, "dir");
    save_index(index->index, dir);
  });
}

size_t tor_index_count(const tor_index* index) { return index ? index->index.count() : 0; }

size_t tor_index_dim(const tor_index* index) { return index ? index->index.dim() : 0; }

tor_status tor_index_query(const tor_index* index, const double* vec, size_t dim, size_t k,
                           char** hits_out) {
  return guarded([&] {
    require(index, "index");
    require(vec, "vec");
    require(hits_out, "hits_json");
    const auto hits = index->index.knn_query(std::span<const double>(vec, dim), k);
    put(hits_out, hits_json(hits).dump());
  });
}

tor_status tor_index_query_votes(const tor_index* index, const double* vec, size_t dim, size_t k,
                                 int decimals, char** votes_json) {
  return guarded([&] {
    require(index, "index");
    require(vec, "vec");
    require(votes_json, "votes_json");
    const auto hits = index->index.knn_query(std::span<const double>(vec, dim), k);
    put(votes_json, format_votes(weighted_vote(hits), decimals));
  });
}

void tor_index_free(tor_index* index) { delete index; }

tor_status tor_read_vector(const char* path, double** vec, size_t* dim) {
  return guarded([&] {
    require(path, "path");
    require(vec, "vec");
    require(dim, "dim");
    const auto v = read_query_vector(path);
    auto* buf = static_cast<double*>(std::malloc(sizeof(double) * std::max<size_t>(v.size(), 1)));
    if (!buf) throw std::bad_alloc();
    std::copy(v.begin(), v.end(), buf);
    *vec = buf;
    *dim = v.size();
  });
}

void tor_vector_free(double* vec) { std::free(vec); }

tor_status tor_ingest(const char* root, const char* labels_json, uint64_t seed, const char* manifest_out,
                      char** summary_json) {
  return guarded([&] {
    require(root, "root");
    const auto m = ingest_dataset(root, labels_from(labels_json), seed);
    if (manifest_out) {
      const auto parent = fs::path(manifest_out).parent_path();
      if (!parent.empty()) fs::create_directories(parent);
      write_text_file(manifest_out, to_json(m).dump(2) + "\n");
    }
    const auto sizes = m.split_sizes();
    Json s = Json::object();
    s["run_id"] = m.run_id;
    s["images"] = m.entries.size();
    s["train"] = sizes[0];
    s["val"] = sizes[1];
    s["test"] = sizes[2];
    Json per = Json::object();
    for (const auto& l : m.labels.labels()) {
      std::array<std::size_t, 3> c{};
      for (const auto& e : m.entries) {
        if (e.label == l) ++c[static_cast<int>(e.split)];
      }
      per[l] = c;
    }
    s["per_label"] = std::move(per);
    put(summary_json, s.dump());
  });
}

tor_status tor_profile_trust(const char* predictions_path, const char* truth_path, const char* labels_json,
                             int ece_bins, double ocr_threshold, const char* profiles_out,
                             const char* csv_out, char** profiles_json) {
  return guarded([&] {
    require(predictions_path, "predictions_path");
    require(truth_path, "truth_path");
    const auto labels = labels_from(labels_json);
    const auto preds = read_prediction_log(predictions_path);
    const auto truth = read_ground_truth(truth_path, labels);
    TrustConfig cfg;
    if (ece_bins > 0) cfg.ece_bins = ece_bins;
    if (ocr_threshold > 0) cfg.ocr_threshold = ocr_threshold;

    std::vector<std::string> order;
    for (const auto& p : preds) {
      if (p.stage == Stage::Initial && std::find(order.begin(), order.end(), p.agent_id) == order.end()) {
        order.push_back(p.agent_id);
      }
    }
    if (order.empty()) fail(ErrorCode::EmptyLog, "no initial-stage predictions in '" + std::string(predictions_path) + "'");
    Json arr = Json::array();
    Json warnings = Json::array();
    std::string csv = trust_profile_csv_header() + "\n";
    for (const auto& agent : order) {
      std::vector<AgentPrediction> mine;
      for (const auto& p : preds) {
        if (p.agent_id == agent && p.stage == Stage::Initial) mine.push_back(p);
      }
      const auto scored = score_predictions(mine, truth);
      auto result = build_trust_profile(agent, scored, cfg);
      for (const auto& w : result.warnings) warnings.push_back(agent + ": " + w);
      Json pj = to_json(result.profile);
      try {
        pj["trust_score"] = trust_score(result.profile);
      } catch (const Error&) {
        pj["trust_score"] = nullptr;
      }
      arr.push_back(std::move(pj));
      csv += trust_profile_csv_row(result.profile) + "\n";
    }
    if (profiles_out) write_text_file(profiles_out, arr.dump(2) + "\n");
    if (csv_out) write_text_file(csv_out, csv);
    Json out = Json::object();
    out["profiles"] = std::move(arr);
    out["warnings"] = std::move(warnings);
    put(profiles_json, out.dump());
  });
}

tor_status tor_run(const char* config_path, const char* samples_path, const char* split, const char* policy,
                   const char* out_dir, char** summary_json) {
  return guarded([&] {
    require(config_path, "config_path");
    require(samples_path, "samples_path");
    auto config = load_config(config_path);
    if (policy) config.policy = parse_policy(policy);
    std::string dir;
    if (out_dir) {
      dir = out_dir;
    } else if (config.log_dir) {
      dir = *config.log_dir;
    } else {
      fail(ErrorCode::ConfigError, "no output directory: pass one or set 'log_dir'");
    }
    std::optional<Split> sp;
    if (split) sp = parse_split(split);
    const auto samples = load_samples(samples_path, config.labels, sp);
    SystemClock clock;
    const auto summary = run_experiment(config, samples, dir, clock);
    Json s = to_json(summary);
    s["run_dir"] = dir;
    s["policy"] = policy_name(config.policy);
    put(summary_json, s.dump());
  });
}

tor_status tor_report(const char* run_dir, const char* out_dir, char** metrics_json) {
  return guarded([&] {
    require(run_dir, "run_dir");
    const auto m = emit_report(run_dir, out_dir ? out_dir : "");
    put(metrics_json, m.dump());
  });
}

tor_status tor_simulate(const char* agents_json, size_t n, uint64_t seed, const char* out_dir,
                        char** summary_json) {
  return guarded([&] {
    require(out_dir, "out_dir");
    SimulationOptions opt;
    if (agents_json) {
      auto j = Json::parse(agents_json, nullptr, false);
      if (j.is_discarded() || !j.is_array()) fail(ErrorCode::InvalidArgument, "agents must be a JSON array");
      opt.agents = j.get<std::vector<std::string>>();
    }
    opt.n = n;
    opt.seed = seed;
    const auto r = simulate(opt, out_dir);
    put(summary_json, r.summary.dump());
  });
}

}  // extern "C"
