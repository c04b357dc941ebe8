// Shared helpers for unit and acceptance tests: scratch directories, random
// log generators, independently coded oracles and fixture builders.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "trustorch/core.hpp"
#include "trustorch/trust_metrics.hpp"
#include "trustorch/vector_store.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using trustorch::Json;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("trustorch-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

inline void write_file(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_jsonl(const std::string& path, const std::vector<Json>& rows) {
  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  write_file(path, text);
}

// Map of relative path -> bytes for every regular file under `root`.
inline std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path().string());
  }
  return out;
}

inline double unit_uniform(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

// Random (confidence, correct) log. When `quantize` is set confidences are
// drawn from a 1/100 grid, which puts many values exactly on bin edges.
inline std::vector<trustorch::ScoredOutcome> random_log(std::mt19937_64& g, std::size_t n,
                                                        bool quantize = false) {
  std::vector<trustorch::ScoredOutcome> out(n);
  for (auto& o : out) {
    o.confidence = quantize ? static_cast<double>(g() % 101) / 100.0 : unit_uniform(g);
    o.correct = unit_uniform(g) < o.confidence;
  }
  return out;
}

// Two-pass ECE: first assign every outcome to a bin by scanning the bin
// edges, then accumulate per-bin sums.
inline double oracle_ece(const std::vector<trustorch::ScoredOutcome>& log, int bins) {
  std::vector<int> assignment(log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    int b = 0;
    for (int m = 1; m <= bins; ++m) {
      const double lo = static_cast<double>(m - 1) / bins;
      const double hi = static_cast<double>(m) / bins;
      if (log[i].confidence > lo && log[i].confidence <= hi) {
        b = m - 1;
        break;
      }
    }
    assignment[i] = b;  // confidence 0 stays in the first bin
  }
  double total = 0.0;
  const double n = static_cast<double>(log.size());
  for (int b = 0; b < bins; ++b) {
    double conf = 0.0, acc = 0.0, count = 0.0;
    for (std::size_t i = 0; i < log.size(); ++i) {
      if (assignment[i] != b) continue;
      conf += log[i].confidence;
      acc += log[i].correct ? 1.0 : 0.0;
      count += 1.0;
    }
    if (count == 0.0) continue;
    total += count / n * std::fabs(acc / count - conf / count);
  }
  return total;
}

inline std::vector<double> unit_vector(std::mt19937_64& g, std::size_t dim) {
  std::normal_distribution<double> nd;
  std::vector<double> v(dim);
  double s = 0.0;
  do {
    s = 0.0;
    for (auto& x : v) {
      x = nd(g);
      s += x * x;
    }
  } while (s == 0.0);
  const double norm = std::sqrt(s);
  for (auto& x : v) x /= norm;
  return v;
}

struct OracleHit {
  std::string id;
  std::string label;
  double similarity;
};

// Full sort of all similarities; vectors and query are expected unit-norm.
inline std::vector<OracleHit> oracle_knn(const std::vector<trustorch::EmbeddingRecord>& records,
                                         const std::vector<double>& query, std::size_t k) {
  std::vector<OracleHit> all;
  for (const auto& r : records) {
    double s = 0.0;
    for (std::size_t i = 0; i < query.size(); ++i) s += query[i] * r.vector[i];
    all.push_back({r.id, r.label, s});
  }
  std::sort(all.begin(), all.end(), [](const OracleHit& a, const OracleHit& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

// Trust profiles as published for the two hosted agents (512 training images).
inline trustorch::TrustProfile table_profile(const std::string& which) {
  trustorch::TrustProfile p;
  p.n = 512;
  if (which == "qwen") {
    p.agent_id = "qwen";
    p.accuracy = 0.492;
    p.avg_conf = 0.945;
    p.conf_correct = 0.950;
    p.conf_incorrect = 0.941;
    p.confidence_gap = 0.009;
    p.ocr = 0.508;
    p.hcw = 260;
    p.thc = 512;
    p.ccc = 0.126;
    p.ccc_p_value = 0.0042;
    p.ece = 0.453;
    p.cwa = 0.495;
  } else {
    p.agent_id = "gpt";
    p.accuracy = 0.584;
    p.avg_conf = 0.877;
    p.conf_correct = 0.890;
    p.conf_incorrect = 0.860;
    p.confidence_gap = 0.030;
    p.ocr = 0.416;
    p.hcw = 213;
    p.thc = 512;
    p.ccc = 0.361;
    p.ccc_p_value = 0.0;
    p.ece = 0.293;
    p.cwa = 0.592;
  }
  return p;
}

inline Json agent_reply(const std::string& category, double confidence,
                        const std::string& why = "visible lesions") {
  Json j = Json::object();
  j["category"] = category;
  j["justification"] = why;
  j["confidence"] = confidence;
  return j;
}

inline Json orchestrator_reply(const std::string& category, double confidence,
                               const std::string& why = "weighted agent evidence") {
  Json j = Json::object();
  j["category"] = category;
  j["rationale"] = why;
  j["confidence"] = confidence;
  return j;
}

inline Json fixture_row(const std::string& image_id, const std::string& stage, const Json& reply,
                        double latency_ms = 0.0) {
  Json j = Json::object();
  j["image_id"] = image_id;
  j["stage"] = stage;
  j["reply"] = reply.dump();
  j["latency_ms"] = latency_ms;
  return j;
}

}  // namespace testsupport
