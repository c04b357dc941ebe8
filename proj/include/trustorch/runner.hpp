#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "trustorch/agent_gateway.hpp"
#include "trustorch/core.hpp"
#include "trustorch/orchestrator.hpp"

namespace trustorch {

// Portable draws on top of mt19937_64 (the engine output is fully specified by
// the standard, unlike the std distributions).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0,1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Seed derivation for independent streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t fnv1a(std::string_view s);

enum class Split { Train, Val, Test };
std::string_view split_name(Split s) noexcept;
Split parse_split(std::string_view name);

struct SplitRatios {
  double train = 0.64;
  double val = 0.16;
  double test = 0.20;
};

// Largest-remainder apportionment of n items; ties go to the earlier split.
std::array<std::size_t, 3> apportion(std::size_t n, const SplitRatios& ratios);

struct ManifestEntry {
  std::string image_id;
  std::string path;
  Label label;
  Split split = Split::Train;
};

struct RunManifest {
  std::string run_id;
  std::string root;
  std::uint64_t seed = 0;
  SplitRatios ratios;
  LabelSet labels = LabelSet::apple_default();
  std::vector<ManifestEntry> entries;  // sorted by image_id

  std::array<std::size_t, 3> split_sizes() const;
};

Json to_json(const RunManifest& m);
RunManifest manifest_from_json(const Json& j);

// Scans `root` (one subdirectory per label, named in any spelling that
// canonicalizes to a label) and assigns a stratified, seeded split.
// Throws UnknownLabelDir and EmptyClass.
RunManifest ingest_dataset(const std::string& root, const LabelSet& labels, std::uint64_t seed,
                           const SplitRatios& ratios = {});

// Samples from a manifest.json (optionally one split) or a JSONL file of
// {"image_id", "image_ref" or "path", "label"?}.
std::vector<Sample> load_samples(const std::string& path, const LabelSet& labels,
                                 const std::optional<Split>& split = std::nullopt);

// Synthetic agent description: "calibrated:<p>" or "overconfident:<p>@<conf>".
struct SyntheticAgentSpec {
  enum class Kind { Calibrated, Overconfident };
  Kind kind = Kind::Calibrated;
  double accuracy = 0.9;
  double confidence = 0.95;  // overconfident only
  std::string agent_id;

  static SyntheticAgentSpec parse(std::string_view text);
  std::string describe() const;
};

// Agent answering from a per-image table built up front, so replies do not
// depend on call order. Re-evaluation requests get the initial answer back.
class SyntheticAgent final : public Agent {
 public:
  struct Answer {
    Label category;
    double confidence = 0.0;
    double latency_ms = 0.0;
  };

  SyntheticAgent(std::string agent_id, std::map<std::string, Answer> answers);

  const std::string& id() const override { return agent_id_; }
  TransportReply complete(const AgentRequest& request, std::span<const ChatMessage> followups) override;

 private:
  std::string agent_id_;
  std::map<std::string, Answer> answers_;
};

std::map<std::string, SyntheticAgent::Answer> synthetic_answers(const SyntheticAgentSpec& spec,
                                                                std::span<const Sample> samples,
                                                                const LabelSet& labels,
                                                                std::uint64_t seed);

struct SimulationOptions {
  std::vector<std::string> agents{"calibrated:0.9", "overconfident:0.5@0.95"};
  std::size_t n = 400;           // evaluation samples
  std::size_t profiling_n = 0;   // 0: same as n
  std::uint64_t seed = 7;
  int dim = 32;
  double embedding_noise = 0.35;
  int k = 5;
  double tau = 0.7;
  LabelSet labels = LabelSet::apple_default();
};

struct SimulationResult {
  Json summary;
  double confidence_accuracy = 0.0;
  double trust_accuracy = 0.0;
  double best_single_accuracy = 0.0;
  double trigger_rate = 0.0;
};

// Profiles the synthetic agents on a separate set, builds a retrieval index
// from that set, runs both policies on fresh samples under a fixed clock and
// writes run directories, reports and summary.json under `out_dir`.
SimulationResult simulate(const SimulationOptions& options, const std::string& out_dir);

}  // namespace trustorch
