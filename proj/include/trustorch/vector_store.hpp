#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "trustorch/core.hpp"

namespace trustorch {

inline constexpr int kIndexFormatVersion = 1;
inline constexpr const char* kManifestFile = "embeddings.manifest.json";
inline constexpr const char* kRecordsFile = "embeddings.jsonl";

struct EmbeddingRecord {
  std::string id;
  Label label;
  std::vector<double> vector;
  std::map<std::string, std::string> meta;

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

struct RetrievalHit {
  std::string record_id;
  Label label;
  double similarity = 0.0;

  friend bool operator==(const RetrievalHit&, const RetrievalHit&) = default;
};

struct ClassVote {
  Label category;
  double confidence = 0.0;

  friend bool operator==(const ClassVote&, const ClassVote&) = default;
};

double l2_norm(std::span<const double> v);

// Unit-norm copy of `v`; ZeroVector when the norm is zero.
std::vector<double> normalize(std::span<const double> v);

// Flat, immutable store answering exact inner-product queries by full scan.
class VectorIndex {
 public:
  // Builds from records of one dimension with unique ids. Vectors are
  // normalized; corrections larger than 1e-3 in norm are reported through
  // `warnings`. `dim` fixes the dimension of an empty index.
  static VectorIndex build(std::vector<EmbeddingRecord> records, std::size_t dim = 0,
                           std::vector<std::string>* warnings = nullptr);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t count() const noexcept { return records_.size(); }
  const std::vector<EmbeddingRecord>& records() const noexcept { return records_; }

  // Top min(k, count) hits by cosine similarity, ties by ascending id.
  std::vector<RetrievalHit> knn_query(std::span<const double> query, std::size_t k) const;

  Json manifest() const;

 private:
  std::size_t dim_ = 0;
  std::vector<EmbeddingRecord> records_;
};

// Similarity-weighted class votes over a hit set. Negative similarities are
// clamped to zero. Sorted by confidence, ties by `labels` order when given,
// otherwise lexicographically.
std::vector<ClassVote> weighted_vote(std::span<const RetrievalHit> hits,
                                     const LabelSet* labels = nullptr);

// Ranked vote array in the retrieval reply shape:
// [
//   {"category": "scab", "confidence": 0.5005},
//   ...
// ]
// With decimals < 0 confidences are written at full round-trip precision.
std::string format_votes(std::span<const ClassVote> votes, int decimals = 4);
std::vector<ClassVote> parse_votes(std::string_view text);

Json to_json(const EmbeddingRecord& r);
EmbeddingRecord embedding_record_from_json(const Json& j, bool label_required = true);

// Writes embeddings.manifest.json + embeddings.jsonl into `dir`.
void save_index(const VectorIndex& index, const std::string& dir);
// Loads and validates the directory layout written by save_index (and by the
// embedding sidecar). FormatVersionMismatch / CorruptRecord on bad input.
VectorIndex load_index(const std::string& dir, std::vector<std::string>* warnings = nullptr);

// Reads a query vector: either a bare JSON array of numbers or an embedding
// record object carrying "vector".
std::vector<double> read_query_vector(const std::string& path);

// Embedding records keyed by id, from an embeddings directory or a JSONL file.
std::map<std::string, std::vector<double>> read_embedding_map(const std::string& path);

}  // namespace trustorch
