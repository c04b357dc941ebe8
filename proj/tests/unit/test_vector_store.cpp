#include <doctest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "trustorch/vector_store.hpp"

using namespace trustorch;
using doctest::Approx;
using testsupport::TempDir;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

std::vector<EmbeddingRecord> random_records(std::mt19937_64& g, std::size_t n, std::size_t dim) {
  const auto labels = LabelSet::apple_default().labels();
  std::vector<EmbeddingRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "r%05zu", (i * 7919) % n);  // ids not in insertion order
    out.push_back({buf, labels[g() % labels.size()], testsupport::unit_vector(g, dim), {}});
  }
  return out;
}

}  // namespace

TEST_CASE("normalize") {
  const auto v = normalize(std::vector<double>{3, 4, 0, 0});
  CHECK(v[0] == Approx(0.6));
  CHECK(v[1] == Approx(0.8));
  std::mt19937_64 g(1);
  const auto u = testsupport::unit_vector(g, 64);
  const auto w = normalize(u);
  for (std::size_t i = 0; i < u.size(); ++i) CHECK(std::fabs(u[i] - w[i]) <= 1e-12);
  CHECK(code_of([] { (void)normalize(std::vector<double>(5, 0.0)); }) == ErrorCode::ZeroVector);
}

TEST_CASE("build: empty, manifest, duplicates, dimensions, renormalization") {
  const auto empty = VectorIndex::build({}, 512);
  CHECK(empty.count() == 0);
  CHECK(empty.manifest().at("dim") == 512);
  CHECK(code_of([&] { (void)empty.knn_query(std::vector<double>(512, 1.0), 3); }) == ErrorCode::EmptyIndex);

  std::mt19937_64 g(2);
  const auto recs = random_records(g, 512, 512);
  const auto idx = VectorIndex::build(recs);
  CHECK(idx.manifest() == Json::parse(R"({"dim":512,"count":512,"normalized":true,"format_version":1})"));

  auto dup = recs;
  dup[1].id = dup[0].id;
  CHECK(code_of([&] { (void)VectorIndex::build(dup); }) == ErrorCode::DuplicateId);
  auto mixed = recs;
  mixed[3].vector.pop_back();
  CHECK(code_of([&] { (void)VectorIndex::build(mixed); }) == ErrorCode::DimensionMismatch);

  std::vector<std::string> warnings;
  std::vector<EmbeddingRecord> raw{{"a", "rust", {3, 4}, {}}, {"b", "scab", {0.6, 0.8000001}, {}}};
  const auto fixed = VectorIndex::build(raw, 0, &warnings);
  CHECK(warnings.size() == 1);  // only the first needed a large correction
  for (const auto& r : fixed.records()) CHECK(std::fabs(l2_norm(r.vector) - 1.0) <= 1e-12);
}

TEST_CASE("knn: self-similarity, truncation, errors") {
  std::mt19937_64 g(3);
  const auto recs = random_records(g, 100, 16);
  const auto idx = VectorIndex::build(recs);
  const auto hits = idx.knn_query(recs[42].vector, 5);
  REQUIRE(hits.size() == 5);
  CHECK(hits[0].record_id == recs[42].id);
  CHECK(hits[0].similarity == Approx(1.0).epsilon(1e-6));
  CHECK(idx.knn_query(recs[0].vector, 1000).size() == 100);
  CHECK(code_of([&] { (void)idx.knn_query(std::vector<double>(8, 1.0), 5); }) == ErrorCode::DimensionMismatch);
  CHECK(code_of([&] { (void)idx.knn_query(recs[0].vector, 0); }) == ErrorCode::InvalidArgument);
  for (const auto& h : idx.knn_query(recs[1].vector, 100)) {
    CHECK(h.similarity >= -1.0 - 1e-9);
    CHECK(h.similarity <= 1.0 + 1e-9);
  }
}

TEST_CASE("knn equals the full-sort oracle, ties included") {
  std::mt19937_64 g(4);
  for (int trial = 0; trial < 5; ++trial) {
    auto recs = random_records(g, 1000, 32);
    // exact duplicates under other ids force similarity ties
    for (int d = 0; d < 50; ++d) {
      auto copy = recs[g() % 1000];
      copy.id = "dup" + std::to_string(trial) + "-" + std::to_string(d);
      recs.push_back(copy);
    }
    const auto idx = VectorIndex::build(recs);
    for (int q = 0; q < 10; ++q) {
      const auto query = q % 2 ? recs[g() % recs.size()].vector : testsupport::unit_vector(g, 32);
      for (std::size_t k : {1u, 5u, 10u}) {
        const auto got = idx.knn_query(query, k);
        const auto want = testsupport::oracle_knn(recs, query, k);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
          CHECK(got[i].record_id == want[i].id);
          CHECK(got[i].similarity == want[i].similarity);
        }
      }
    }
  }
}

TEST_CASE("weighted_vote") {
  std::vector<RetrievalHit> hits{{"1", "scab", 0.9}, {"2", "scab", 0.8}, {"3", "rust", 0.3}};
  auto votes = weighted_vote(hits);
  REQUIRE(votes.size() == 2);
  CHECK(votes[0].category == "scab");
  CHECK(votes[0].confidence == Approx(0.85));
  CHECK(votes[1].confidence == Approx(0.15));

  votes = weighted_vote(std::vector<RetrievalHit>{{"1", "rust", 0.4}});
  REQUIRE(votes.size() == 1);
  CHECK(votes[0].confidence == 1.0);

  // negative similarities are clamped away
  votes = weighted_vote(std::vector<RetrievalHit>{{"1", "rust", 0.4}, {"2", "scab", -0.3}});
  CHECK(votes[0].confidence == 1.0);
  CHECK(votes[1].confidence == 0.0);

  CHECK(code_of([] { (void)weighted_vote({}); }) == ErrorCode::EmptyHits);
  CHECK(code_of([] { (void)weighted_vote(std::vector<RetrievalHit>{{"1", "rust", -0.1}, {"2", "scab", 0.0}}); }) ==
        ErrorCode::ZeroSimilarityMass);

  // equal confidences follow label order when a label set is given
  const auto labels = LabelSet::apple_default();
  votes = weighted_vote(std::vector<RetrievalHit>{{"1", "scab", 0.5}, {"2", "healthy", 0.5}}, &labels);
  CHECK(votes[0].category == "healthy");
}

TEST_CASE("vote normalization and scale invariance on random hit sets") {
  std::mt19937_64 g(5);
  const auto labels = LabelSet::apple_default();
  for (int t = 0; t < 2000; ++t) {
    std::vector<RetrievalHit> hits;
    const int k = 1 + static_cast<int>(g() % 10);
    for (int i = 0; i < k; ++i) {
      hits.push_back({std::to_string(i), labels.labels()[g() % 4], 0.01 + testsupport::unit_uniform(g)});
    }
    const auto votes = weighted_vote(hits, &labels);
    double sum = 0.0;
    for (const auto& v : votes) sum += v.confidence;
    CHECK(std::fabs(sum - 1.0) <= 1e-9);
    const double scale = 0.1 + 10.0 * testsupport::unit_uniform(g);
    auto scaled = hits;
    for (auto& h : scaled) h.similarity *= scale;
    const auto votes2 = weighted_vote(scaled, &labels);
    REQUIRE(votes2.size() == votes.size());
    for (std::size_t i = 0; i < votes.size(); ++i) {
      CHECK(votes2[i].category == votes[i].category);
      CHECK(std::fabs(votes2[i].confidence - votes[i].confidence) <= 1e-12);
    }
  }
}

TEST_CASE("format_votes produces the reply shape and round-trips") {
  const std::vector<ClassVote> votes{{"scab", 0.5005}, {"healthy", 0.3996}, {"rust", 0.0999}};
  const std::string expected =
      "[\n"
      "  {\"category\": \"scab\", \"confidence\": 0.5005},\n"
      "  {\"category\": \"healthy\", \"confidence\": 0.3996},\n"
      "  {\"category\": \"rust\", \"confidence\": 0.0999}\n"
      "]";
  CHECK(format_votes(votes) == expected);
  const auto parsed = parse_votes(expected);
  REQUIRE(parsed.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(parsed[i].category == votes[i].category);
    CHECK(parsed[i].confidence == votes[i].confidence);  // bit-exact
  }
  CHECK(format_votes(parsed) == expected);

  const std::vector<ClassVote> odd{{"rust", 1.0 / 3.0}, {"scab", 2.0 / 3.0}};
  const auto full = parse_votes(format_votes(odd, -1));
  CHECK(full[0].confidence == odd[0].confidence);
  CHECK(full[1].confidence == odd[1].confidence);
}

TEST_CASE("save/load round trip and validation") {
  TempDir dir("vs");
  std::mt19937_64 g(6);
  auto recs = random_records(g, 3, 8);
  recs[0].meta["url"] = "https://example.org/a.jpg";
  const auto idx = VectorIndex::build(recs);
  save_index(idx, dir / "idx");
  std::vector<std::string> warnings;
  const auto back = load_index(dir / "idx", &warnings);
  CHECK(warnings.empty());
  REQUIRE(back.count() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.records()[i].id == idx.records()[i].id);
    CHECK(back.records()[i].label == idx.records()[i].label);
    CHECK(back.records()[i].vector == idx.records()[i].vector);
    CHECK(back.records()[i].meta == idx.records()[i].meta);
  }

  // format version
  auto manifest = Json::parse(testsupport::read_file(dir / "idx/embeddings.manifest.json"));
  manifest["format_version"] = 2;
  testsupport::write_file(dir / "v2/embeddings.manifest.json", manifest.dump());
  testsupport::write_file(dir / "v2/embeddings.jsonl", testsupport::read_file(dir / "idx/embeddings.jsonl"));
  CHECK(code_of([&] { (void)load_index(dir / "v2"); }) == ErrorCode::FormatVersionMismatch);

  // manifest dim disagrees with the records
  manifest["format_version"] = 1;
  manifest["dim"] = 9;
  testsupport::write_file(dir / "dim/embeddings.manifest.json", manifest.dump());
  testsupport::write_file(dir / "dim/embeddings.jsonl", testsupport::read_file(dir / "idx/embeddings.jsonl"));
  CHECK(code_of([&] { (void)load_index(dir / "dim"); }) == ErrorCode::CorruptRecord);
}

TEST_CASE("truncated record file reports the torn line") {
  TempDir dir("vs");
  std::mt19937_64 g(7);
  const auto idx = VectorIndex::build(random_records(g, 4, 8));
  save_index(idx, dir / "idx");
  const auto text = testsupport::read_file(dir / "idx/embeddings.jsonl");
  const auto manifest = testsupport::read_file(dir / "idx/embeddings.manifest.json");
  // cut at several byte offsets inside the last line
  const auto last_start = text.rfind('\n', text.size() - 2) + 1;
  for (std::size_t cut = last_start + 1; cut < text.size() - 1; cut += 37) {
    testsupport::write_file(dir / "cut/embeddings.manifest.json", manifest);
    testsupport::write_file(dir / "cut/embeddings.jsonl", text.substr(0, cut));
    try {
      (void)load_index(dir / "cut");
      FAIL("expected CorruptRecord");
    } catch (const CorruptRecordError& e) {
      CHECK(e.line() == 4);
    }
  }
  // a cleanly dropped last line is a count mismatch at the missing line
  testsupport::write_file(dir / "cut/embeddings.jsonl", text.substr(0, last_start));
  try {
    (void)load_index(dir / "cut");
    FAIL("expected CorruptRecord");
  } catch (const CorruptRecordError& e) {
    CHECK(e.line() == 4);
  }
}

TEST_CASE("sidecar-format fixture loads without warnings") {
  std::vector<std::string> warnings;
  const auto idx = load_index(std::string(TRUSTORCH_FIXTURE_DIR) + "/sidecar", &warnings);
  CHECK(warnings.empty());
  CHECK(idx.dim() == 512);
  CHECK(idx.count() == 12);
  const auto& recs = idx.records();
  for (const auto& r : recs) CHECK(std::fabs(l2_norm(r.vector) - 1.0) <= 1e-6);
  // train-011 is the same image as train-000
  const auto hits = idx.knn_query(recs[0].vector, 2);
  CHECK(hits[0].record_id == "train-000");
  CHECK(hits[1].record_id == "train-011");
  CHECK(hits[1].similarity == Approx(1.0).epsilon(1e-6));
}

TEST_CASE("query vector files and embedding maps") {
  TempDir dir("vs");
  testsupport::write_file(dir / "bare.json", "[1, 0, 0]");
  testsupport::write_file(dir / "rec.json", R"({"id":"q","vector":[0,1,0]})");
  CHECK(read_query_vector(dir / "bare.json") == std::vector<double>{1, 0, 0});
  CHECK(read_query_vector(dir / "rec.json") == std::vector<double>{0, 1, 0});
  testsupport::write_file(dir / "q.jsonl", "{\"id\":\"a\",\"vector\":[1,0]}\n{\"id\":\"b\",\"vector\":[0,1]}\n");
  const auto m = read_embedding_map(dir / "q.jsonl");
  CHECK(m.size() == 2);
  CHECK(m.at("b") == std::vector<double>{0, 1});
}
