#include "trustorch/vector_store.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

namespace fs = std::filesystem;

namespace trustorch {

namespace {

// Vectors whose norm is this close to 1 are stored as given, so saving and
// reloading an index reproduces it bit for bit.
constexpr double kUnitTolerance = 1e-9;
constexpr double kWarnCorrection = 1e-3;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

std::vector<double> normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) {
    fail(ErrorCode::ZeroVector, "cannot normalize a zero or non-finite vector");
  }
  std::vector<double> out(v.begin(), v.end());
  for (auto& x : out) x /= n;
  return out;
}

VectorIndex VectorIndex::build(std::vector<EmbeddingRecord> records, std::size_t dim,
                               std::vector<std::string>* warnings) {
  VectorIndex index;
  index.dim_ = records.empty() ? dim : records.front().vector.size();
  if (!records.empty() && dim != 0 && dim != index.dim_) {
    fail(ErrorCode::DimensionMismatch,
         "records have dimension " + std::to_string(index.dim_) + ", expected " +
             std::to_string(dim));
  }
  std::set<std::string> ids;
  for (auto& r : records) {
    if (r.vector.size() != index.dim_) {
      fail(ErrorCode::DimensionMismatch,
           "record '" + r.id + "' has dimension " + std::to_string(r.vector.size()) +
               ", expected " + std::to_string(index.dim_));
    }
    if (!ids.insert(r.id).second) {
      fail(ErrorCode::DuplicateId, "duplicate record id '" + r.id + "'");
    }
    const double n = l2_norm(r.vector);
    if (std::fabs(n - 1.0) > kUnitTolerance) {
      if (std::fabs(n - 1.0) > kWarnCorrection && warnings) {
        warnings->push_back("record '" + r.id + "' renormalized (norm " +
                            std::to_string(n) + ")");
      }
      r.vector = normalize(r.vector);
    }
  }
  index.records_ = std::move(records);
  return index;
}

std::vector<RetrievalHit> VectorIndex::knn_query(std::span<const double> query,
                                                 std::size_t k) const {
  if (records_.empty()) fail(ErrorCode::EmptyIndex, "index holds no records");
  if (query.size() != dim_) {
    fail(ErrorCode::DimensionMismatch,
         "query has dimension " + std::to_string(query.size()) + ", index has " +
             std::to_string(dim_));
  }
  if (k == 0) fail(ErrorCode::InvalidArgument, "k must be at least 1");

  std::vector<double> q(query.begin(), query.end());
  if (std::fabs(l2_norm(q) - 1.0) > kUnitTolerance) q = normalize(q);

  std::vector<double> sims(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) sims[i] = dot(q, records_[i].vector);

  std::vector<std::size_t> order(records_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t take = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      if (sims[a] != sims[b]) return sims[a] > sims[b];
                      return records_[a].id < records_[b].id;
                    });

  std::vector<RetrievalHit> hits;
  hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    const auto& r = records_[order[i]];
    hits.push_back({r.id, r.label, sims[order[i]]});
  }
  return hits;
}

Json VectorIndex::manifest() const {
  return Json{{"dim", dim_},
              {"count", records_.size()},
              {"normalized", true},
              {"format_version", kIndexFormatVersion}};
}

std::vector<ClassVote> weighted_vote(std::span<const RetrievalHit> hits,
                                     const LabelSet* labels) {
  if (hits.empty()) fail(ErrorCode::EmptyHits, "no retrieval hits to vote over");
  std::map<Label, double> mass;
  double total = 0.0;
  for (const auto& h : hits) {
    const double s = std::max(h.similarity, 0.0);
    mass[h.label] += s;
    total += s;
  }
  if (!(total > 0.0)) {
    fail(ErrorCode::ZeroSimilarityMass, "all retrieved similarities are non-positive");
  }
  std::vector<ClassVote> votes;
  votes.reserve(mass.size());
  for (const auto& [label, m] : mass) votes.push_back({label, m / total});

  auto label_less = [labels](const Label& a, const Label& b) {
    if (labels && labels->contains(a) && labels->contains(b)) return labels->before(a, b);
    return a < b;
  };
  std::sort(votes.begin(), votes.end(), [&](const ClassVote& a, const ClassVote& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return label_less(a.category, b.category);
  });
  return votes;
}

std::string format_votes(std::span<const ClassVote> votes, int decimals) {
  std::string out = "[\n";
  for (std::size_t i = 0; i < votes.size(); ++i) {
    out += "  {\"category\": ";
    out += Json(votes[i].category).dump();
    out += ", \"confidence\": ";
    out += decimals >= 0 ? format_fixed(votes[i].confidence, decimals)
                         : Json(votes[i].confidence).dump();
    out += '}';
    if (i + 1 < votes.size()) out += ',';
    out += '\n';
  }
  out += ']';
  return out;
}

std::vector<ClassVote> parse_votes(std::string_view text) {
  auto j = Json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_array()) {
    fail(ErrorCode::CorruptRecord, "vote list is not a JSON array");
  }
  std::vector<ClassVote> out;
  for (const auto& v : j) {
    if (!v.is_object() || !v.contains("category") || !v.contains("confidence")) {
      fail(ErrorCode::MissingKey, "vote entry needs category and confidence");
    }
    out.push_back({v.at("category").get<std::string>(), v.at("confidence").get<double>()});
  }
  return out;
}

Json to_json(const EmbeddingRecord& r) {
  Json meta = Json::object();
  for (const auto& [k, v] : r.meta) meta[k] = v;
  return Json{{"id", r.id}, {"label", r.label}, {"vector", r.vector}, {"meta", meta}};
}

EmbeddingRecord embedding_record_from_json(const Json& j, bool label_required) {
  if (!j.is_object()) fail(ErrorCode::CorruptRecord, "record is not an object");
  EmbeddingRecord r;
  try {
    if (!j.contains("id")) fail(ErrorCode::CorruptRecord, "record has no 'id'");
    r.id = j.at("id").get<std::string>();
    if (j.contains("label") && !j.at("label").is_null()) {
      r.label = j.at("label").get<std::string>();
    } else if (label_required) {
      fail(ErrorCode::CorruptRecord, "record '" + r.id + "' has no 'label'");
    }
    if (!j.contains("vector") || !j.at("vector").is_array()) {
      fail(ErrorCode::CorruptRecord, "record '" + r.id + "' has no 'vector' array");
    }
    r.vector = j.at("vector").get<std::vector<double>>();
    if (j.contains("meta") && j.at("meta").is_object()) {
      for (const auto& [k, v] : j.at("meta").items()) {
        r.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::CorruptRecord, std::string("malformed record: ") + e.what());
  }
  return r;
}

void save_index(const VectorIndex& index, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create '" + dir + "': " + ec.message());
  write_text_file((fs::path(dir) / kManifestFile).string(), index.manifest().dump() + "\n");
  std::string body;
  for (const auto& r : index.records()) {
    body += to_json(r).dump();
    body += '\n';
  }
  write_text_file((fs::path(dir) / kRecordsFile).string(), body);
}

VectorIndex load_index(const std::string& dir, std::vector<std::string>* warnings) {
  const auto manifest_path = (fs::path(dir) / kManifestFile).string();
  const auto records_path = (fs::path(dir) / kRecordsFile).string();
  auto manifest = Json::parse(read_text_file(manifest_path), nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object()) {
    fail(ErrorCode::CorruptRecord, "manifest is not a JSON object");
  }
  if (!manifest.contains("format_version") ||
      manifest.at("format_version") != kIndexFormatVersion) {
    fail(ErrorCode::FormatVersionMismatch,
         "unsupported index format_version " +
             (manifest.contains("format_version") ? manifest.at("format_version").dump()
                                                  : std::string("(missing)")));
  }
  if (!manifest.contains("dim") || !manifest.at("dim").is_number_unsigned() ||
      !manifest.contains("count") || !manifest.at("count").is_number_unsigned()) {
    fail(ErrorCode::CorruptRecord, "manifest needs unsigned 'dim' and 'count'");
  }
  const auto dim = manifest.at("dim").get<std::size_t>();
  const auto count = manifest.at("count").get<std::size_t>();

  std::ifstream in(records_path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + records_path + "'");
  std::vector<EmbeddingRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto j = Json::parse(line, nullptr, false);
    if (j.is_discarded()) throw CorruptRecordError(lineno, "malformed JSON");
    EmbeddingRecord r;
    try {
      r = embedding_record_from_json(j);
    } catch (const Error& e) {
      throw CorruptRecordError(lineno, e.what());
    }
    if (r.vector.size() != dim) {
      throw CorruptRecordError(lineno, "vector dimension " + std::to_string(r.vector.size()) +
                                           " does not match manifest dim " +
                                           std::to_string(dim));
    }
    records.push_back(std::move(r));
  }
  if (records.size() != count) {
    throw CorruptRecordError(lineno + 1, "manifest count " + std::to_string(count) +
                                             " but " + std::to_string(records.size()) +
                                             " records present");
  }
  return VectorIndex::build(std::move(records), dim, warnings);
}

std::vector<double> read_query_vector(const std::string& path) {
  auto j = Json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::CorruptRecord, "query vector file is not JSON");
  try {
    if (j.is_array()) return j.get<std::vector<double>>();
    if (j.is_object() && j.contains("vector")) return j.at("vector").get<std::vector<double>>();
  } catch (const Json::exception& e) {
    fail(ErrorCode::CorruptRecord, std::string("bad query vector: ") + e.what());
  }
  fail(ErrorCode::CorruptRecord, "query file needs a number array or a record with 'vector'");
}

std::map<std::string, std::vector<double>> read_embedding_map(const std::string& path) {
  const auto file = fs::is_directory(path) ? (fs::path(path) / kRecordsFile).string() : path;
  std::map<std::string, std::vector<double>> out;
  std::size_t lineno = 0;
  for (const auto& j : read_jsonl(file)) {
    ++lineno;
    auto r = embedding_record_from_json(j, false);
    if (!out.emplace(r.id, std::move(r.vector)).second) {
      fail(ErrorCode::DuplicateId, "duplicate embedding id '" + r.id + "'");
    }
  }
  return out;
}

}  // namespace trustorch
