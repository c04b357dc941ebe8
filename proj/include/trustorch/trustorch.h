/* C interface to the trustorch library. All strings are UTF-8. Strings
 * returned through `char**` out-parameters are owned by the caller and must be
 * released with tor_string_free. Every function returns a tor_status; on
 * failure tor_last_error() describes the problem (thread-local, valid until
 * the next call on the same thread). */
#ifndef TRUSTORCH_H
#define TRUSTORCH_H

#include <stddef.h>
#include <stdint.h>

#if defined(TOR_BUILDING_LIBRARY)
#define TOR_API __attribute__((visibility("default")))
#else
#define TOR_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tor_status {
  TOR_OK = 0,
  TOR_UNKNOWN_LABEL = 1,
  TOR_EMPTY_LOG = 2,
  TOR_DEGENERATE_LOG = 3,
  TOR_LENGTH_MISMATCH = 4,
  TOR_ZERO_MASS = 5,
  TOR_MISSING_METRIC = 6,
  TOR_ZERO_VECTOR = 7,
  TOR_DIMENSION_MISMATCH = 8,
  TOR_DUPLICATE_ID = 9,
  TOR_EMPTY_INDEX = 10,
  TOR_EMPTY_HITS = 11,
  TOR_ZERO_SIMILARITY_MASS = 12,
  TOR_FORMAT_VERSION_MISMATCH = 13,
  TOR_CORRUPT_RECORD = 14,
  TOR_EMPTY_VOTES = 15,
  TOR_NO_JSON_FOUND = 16,
  TOR_MISSING_KEY = 17,
  TOR_CONFIDENCE_OUT_OF_RANGE = 18,
  TOR_AGENT_UNREACHABLE = 19,
  TOR_FORMAT_EXHAUSTED = 20,
  TOR_MISSING_FIXTURE_ENTRY = 21,
  TOR_NO_PREDICTIONS = 22,
  TOR_INDEX_UNAVAILABLE = 23,
  TOR_CONFIG_ERROR = 24,
  TOR_NO_ERRORS = 25,
  TOR_ALIGNMENT_ERROR = 26,
  TOR_MISSING_LOG = 27,
  TOR_UNKNOWN_LABEL_DIR = 28,
  TOR_EMPTY_CLASS = 29,
  TOR_INVALID_ARGUMENT = 30,
  TOR_IO = 31,
  TOR_INTERNAL = 99
} tor_status;

/* Last error message on this thread ("" after success). */
TOR_API const char* tor_last_error(void);
/* Stable name of a status, e.g. "MissingLog". */
TOR_API const char* tor_status_name(tor_status status);
TOR_API void tor_string_free(char* s);
TOR_API const char* tor_version(void);

/* ---- metrics over (confidence, correct) pairs ---- */
TOR_API tor_status tor_ece(const double* conf, const uint8_t* correct, size_t n, int bins, double* out);
/* *defined is 0 when no confidence clears the threshold. */
TOR_API tor_status tor_ocr(const double* conf, const uint8_t* correct, size_t n, double threshold,
                           double* ratio, int* defined, int64_t* hcw, int64_t* thc);
TOR_API tor_status tor_cwa(const double* conf, const uint8_t* correct, size_t n, double* out);
TOR_API tor_status tor_ccc(const double* conf, const uint8_t* correct, size_t n, double* r,
                           double* p_value);
TOR_API tor_status tor_confidence_gap(const double* conf, const uint8_t* correct, size_t n, double* out);
/* Profile JSON string -> trust score. */
TOR_API tor_status tor_trust_score(const char* profile_json, double* out);

/* ---- vector index ---- */
typedef struct tor_index tor_index;

TOR_API tor_status tor_index_load(const char* dir, tor_index** out, char** warnings_json);
/* `embeddings` is a JSONL file of records or a sidecar output directory. */
TOR_API tor_status tor_index_build_from_embeddings(const char* embeddings, tor_index** out,
                                                   char** warnings_json);
TOR_API tor_status tor_index_save(const tor_index* index, const char* dir);
TOR_API size_t tor_index_count(const tor_index* index);
TOR_API size_t tor_index_dim(const tor_index* index);
/* Top-k neighbours as a JSON array of {record_id, label, similarity}. */
TOR_API tor_status tor_index_query(const tor_index* index, const double* vec, size_t dim, size_t k,
                                   char** hits_json);
/* Weighted class votes, formatted with `decimals` places (negative: full
 * precision) in the canonical array shape. */
TOR_API tor_status tor_index_query_votes(const tor_index* index, const double* vec, size_t dim,
                                         size_t k, int decimals, char** votes_json);
TOR_API void tor_index_free(tor_index* index);

/* Reads a query vector file (bare array or an object with "vector"). */
TOR_API tor_status tor_read_vector(const char* path, double** vec, size_t* dim);
TOR_API void tor_vector_free(double* vec);

/* ---- pipeline entry points; JSON results through out-parameters ---- */
/* labels_json: JSON array of labels, or NULL for the default apple set. */
TOR_API tor_status tor_ingest(const char* root, const char* labels_json, uint64_t seed,
                              const char* manifest_out, char** summary_json);
/* Profiles every agent in a prediction log (initial stage) against ground
 * truth. Writes profiles JSON and the profile CSV when paths are given. */
TOR_API tor_status tor_profile_trust(const char* predictions_path, const char* truth_path,
                                     const char* labels_json, int ece_bins, double ocr_threshold,
                                     const char* profiles_out, const char* csv_out,
                                     char** profiles_json);
/* policy: NULL keeps the config's policy. split: NULL, "train", "val", "test".
 * Returns TOR_OK even when some images are undecided; inspect the summary. */
TOR_API tor_status tor_run(const char* config_path, const char* samples_path, const char* split,
                           const char* policy, const char* out_dir, char** summary_json);
TOR_API tor_status tor_report(const char* run_dir, const char* out_dir, char** metrics_json);
/* agents_json: JSON array of "calibrated:<p>" / "overconfident:<p>@<c>". */
TOR_API tor_status tor_simulate(const char* agents_json, size_t n, uint64_t seed, const char* out_dir,
                                char** summary_json);

#ifdef __cplusplus
}
#endif

#endif /* TRUSTORCH_H */
