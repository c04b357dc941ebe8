// Command-line front end. Talks to the library only through the C API.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "trustorch/trustorch.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitPartial = 3;
constexpr int kExitFatal = 4;

using Json = nlohmann::ordered_json;

void emit_error(const std::string& kind, int code, const std::string& message) {
  Json j = Json::object();
  j["error"] = kind;
  j["code"] = code;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
}

int fail_status(tor_status status) {
  emit_error(tor_status_name(status), static_cast<int>(status), tor_last_error());
  const bool usage = status == TOR_CONFIG_ERROR || status == TOR_INVALID_ARGUMENT;
  return usage ? kExitUsage : kExitFatal;
}

// Takes ownership of a library string.
std::string take(char* s) {
  std::string out = s ? s : "";
  tor_string_free(s);
  return out;
}

const char* opt_cstr(const std::optional<std::string>& s) { return s ? s->c_str() : nullptr; }

std::optional<std::string> labels_json(const std::vector<std::string>& labels) {
  if (labels.empty()) return std::nullopt;
  return Json(labels).dump();
}

void print_json(const std::string& text) {
  auto j = Json::parse(text, nullptr, false);
  std::cout << (j.is_discarded() ? text : j.dump(2)) << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trust-aware multi-agent classification orchestration"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Scan a labelled image tree and write a split manifest");
  std::string ingest_root, ingest_out;
  std::vector<std::string> ingest_labels;
  std::uint64_t ingest_seed = 0;
  ingest->add_option("--root", ingest_root, "Dataset root (one subdirectory per label)")->required();
  ingest->add_option("--out", ingest_out, "Manifest path to write")->required();
  ingest->add_option("--labels", ingest_labels, "Label set in canonical order")->delimiter(',');
  ingest->add_option("--seed", ingest_seed, "Shuffle seed");

  // build-index
  auto* build = app.add_subcommand("build-index", "Build a vector index from embedding records");
  std::string build_embeddings, build_out;
  build->add_option("--embeddings", build_embeddings, "JSONL records or an embeddings directory")->required();
  build->add_option("--out", build_out, "Index directory")->required();

  // query
  auto* query = app.add_subcommand("query", "Retrieve neighbours and print weighted class votes");
  std::string query_index, query_vector;
  std::size_t query_k = 5;
  int query_decimals = 4;
  bool query_hits = false;
  query->add_option("--index", query_index, "Index directory")->required();
  query->add_option("--vector-file", query_vector, "Query vector JSON")->required();
  query->add_option("-k", query_k, "Neighbours to retrieve");
  query->add_option("--decimals", query_decimals, "Decimals for vote confidences (-1: full precision)");
  query->add_flag("--hits", query_hits, "Print the raw hits instead of votes");

  // profile-trust
  auto* profile = app.add_subcommand("profile-trust", "Compute per-agent trust profiles from a prediction log");
  std::string prof_predictions, prof_truth, prof_out;
  std::optional<std::string> prof_csv;
  std::vector<std::string> prof_labels;
  int prof_bins = 10;
  double prof_threshold = 0.9;
  profile->add_option("--predictions", prof_predictions, "Prediction log (JSONL)")->required();
  profile->add_option("--truth", prof_truth, "Ground truth (JSONL)")->required();
  profile->add_option("--out", prof_out, "Profiles JSON to write")->required();
  profile->add_option("--csv", prof_csv, "Profile table CSV to write");
  profile->add_option("--labels", prof_labels, "Label set")->delimiter(',');
  profile->add_option("--ece-bins", prof_bins, "Calibration bins");
  profile->add_option("--ocr-threshold", prof_threshold, "High-confidence threshold");

  // run
  auto* run = app.add_subcommand("run", "Run an experiment from a config file");
  std::string run_config, run_samples;
  std::optional<std::string> run_out, run_policy, run_split;
  run->add_option("--config", run_config, "Experiment config (JSON)")->required();
  run->add_option("--samples", run_samples, "Sample manifest or JSONL")->required();
  run->add_option("--policy", run_policy, "confidence | trust-rag");
  run->add_option("--split", run_split, "train | val | test (manifest input)");
  run->add_option("--out", run_out, "Run directory (default: config log_dir)");

  // report
  auto* report = app.add_subcommand("report", "Emit the report bundle for a run directory");
  std::string report_run;
  std::optional<std::string> report_out;
  report->add_option("run_dir", report_run, "Run directory")->required();
  report->add_option("--out", report_out, "Report directory (default: <run_dir>/report)");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Run both policies on synthetic agents");
  std::vector<std::string> sim_agents{"calibrated:0.9", "overconfident:0.5@0.95"};
  std::size_t sim_n = 400;
  std::uint64_t sim_seed = 7;
  std::string sim_out = "simulation";
  sim->add_option("--agents", sim_agents, "calibrated:<p> or overconfident:<p>@<conf>");
  sim->add_option("--n", sim_n, "Evaluation samples");
  sim->add_option("--seed", sim_seed, "Seed");
  sim->add_option("--out", sim_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("UsageError", e.get_exit_code(), e.what());
    return kExitUsage;
  }

  char* out = nullptr;
  tor_status st = TOR_OK;

  if (*ingest) {
    const auto lj = labels_json(ingest_labels);
    st = tor_ingest(ingest_root.c_str(), opt_cstr(lj), ingest_seed, ingest_out.c_str(), &out);
    if (st != TOR_OK) return fail_status(st);
    print_json(take(out));
    return kExitOk;
  }

  if (*build) {
    tor_index* idx = nullptr;
    st = tor_index_build_from_embeddings(build_embeddings.c_str(), &idx, &out);
    if (st != TOR_OK) return fail_status(st);
    const auto warnings = take(out);
    st = tor_index_save(idx, build_out.c_str());
    Json j = Json::object();
    j["count"] = tor_index_count(idx);
    j["dim"] = tor_index_dim(idx);
    j["warnings"] = Json::parse(warnings);
    tor_index_free(idx);
    if (st != TOR_OK) return fail_status(st);
    std::cout << j.dump(2) << std::endl;
    return kExitOk;
  }

  if (*query) {
    tor_index* idx = nullptr;
    st = tor_index_load(query_index.c_str(), &idx, nullptr);
    if (st != TOR_OK) return fail_status(st);
    double* vec = nullptr;
    std::size_t dim = 0;
    st = tor_read_vector(query_vector.c_str(), &vec, &dim);
    if (st == TOR_OK) {
      st = query_hits ? tor_index_query(idx, vec, dim, query_k, &out)
                      : tor_index_query_votes(idx, vec, dim, query_k, query_decimals, &out);
    }
    tor_vector_free(vec);
    tor_index_free(idx);
    if (st != TOR_OK) return fail_status(st);
    const auto text = take(out);
    if (query_hits) {
      print_json(text);
    } else {
      std::cout << text << std::endl;
    }
    return kExitOk;
  }

  if (*profile) {
    const auto lj = labels_json(prof_labels);
    st = tor_profile_trust(prof_predictions.c_str(), prof_truth.c_str(), opt_cstr(lj), prof_bins,
                           prof_threshold, prof_out.c_str(), opt_cstr(prof_csv), &out);
    if (st != TOR_OK) return fail_status(st);
    print_json(take(out));
    return kExitOk;
  }

  if (*run) {
    st = tor_run(run_config.c_str(), run_samples.c_str(), opt_cstr(run_split), opt_cstr(run_policy),
                 opt_cstr(run_out), &out);
    if (st != TOR_OK) return fail_status(st);
    const auto text = take(out);
    print_json(text);
    const auto j = Json::parse(text);
    return j.value("undecided", 0) > 0 ? kExitPartial : kExitOk;
  }

  if (*report) {
    st = tor_report(report_run.c_str(), opt_cstr(report_out), &out);
    if (st != TOR_OK) return fail_status(st);
    const auto j = Json::parse(take(out));
    Json s = Json::object();
    s["n_decisions"] = j.at("n_decisions");
    s["n_undecided"] = j.at("n_undecided");
    s["orchestrator_accuracy"] =
        j.at("orchestrator").is_null() ? Json(nullptr) : j.at("orchestrator").at("accuracy");
    std::cout << s.dump(2) << std::endl;
    return kExitOk;
  }

  if (*sim) {
    const auto agents = Json(sim_agents).dump();
    st = tor_simulate(agents.c_str(), sim_n, sim_seed, sim_out.c_str(), &out);
    if (st != TOR_OK) return fail_status(st);
    const auto text = take(out);
    print_json(text);
    const auto j = Json::parse(text);
    for (const auto& [name, p] : j.at("policies").items()) {
      if (p.value("undecided", 0) > 0) return kExitPartial;
    }
    return kExitOk;
  }
  return kExitUsage;
}
