/**
 * @file vector_index.hpp
 * @brief Document pools with exact cosine top-k search and snapshot files.
 *
 * Corpus files are JSON lines, one record per line:
 *
 *   {"doc_id": "p3", "pool": "chartqa", "embedding": [..], "metadata": {..}}
 *
 * Snapshots are a header line followed by one record per line, every object
 * serialized with sorted keys:
 *
 *   {"count": n, "dimension": d, "format_version": 1, "name": "chartqa"}
 */
#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "fineprint/embedding_math.hpp"

namespace fineprint {

inline constexpr int kSnapshotFormatVersion = 1;
inline constexpr const char* kAllPoolName = "all";

struct DocKey {
  std::string pool;
  std::string doc_id;

  friend auto operator<=>(const DocKey&, const DocKey&) = default;
};

struct DocumentRecord {
  std::string doc_id;
  std::string pool_name;
  Embedding embedding;
  nlohmann::json metadata = nlohmann::json::object();

  DocKey key() const { return {pool_name, doc_id}; }
  friend bool operator==(const DocumentRecord&, const DocumentRecord&) = default;
};

struct Pool {
  std::string name;
  std::size_t dimension = 0;
  std::vector<DocumentRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
  const DocumentRecord* find(const DocKey& key) const;

  friend bool operator==(const Pool&, const Pool&) = default;
};

struct RankedEntry {
  std::string doc_id;
  std::string pool_name;
  double score = 0.0;

  DocKey key() const { return {pool_name, doc_id}; }
  friend bool operator==(const RankedEntry&, const RankedEntry&) = default;
};

struct RankedResult {
  std::vector<RankedEntry> entries;
  std::size_t k = 0;
};

enum class ScoringMode {
  cosine,
  // Experimental: cosine between the query and the document under the
  // pair's hybrid mask.
  masked,
};

ScoringMode parse_scoring_mode(const std::string& s);
std::string to_string(ScoringMode mode);

struct ScoringOptions {
  ScoringMode mode = ScoringMode::cosine;
  double alpha = kDefaultAlpha;
  double eps = kDefaultEps;
};

// Builds a pool from a corpus file. The pool takes the name of its first
// record's "pool" field (the file stem when the file is empty); every record
// must belong to that pool. Warnings, if requested, receive non-fatal notes.
Pool ingest_corpus(const std::filesystem::path& path,
                   std::vector<std::string>* warnings = nullptr);

// Parses one corpus line; `line_no` is used in error messages only.
DocumentRecord parse_record(const std::string& line, std::size_t line_no);

// Adds a record, enforcing dimension and (pool, doc_id) uniqueness.
void add_record(Pool& pool, DocumentRecord record);

// Exact search: scores every record, orders by score descending, then doc_id
// ascending, then pool name ascending.
RankedResult top_k(const Pool& pool, const Embedding& query, std::size_t k,
                   const ScoringOptions& options = {});

// Union pool named "all"; records keep their source pool names in input order.
Pool merge_pools(const std::vector<Pool>& pools);

void save_snapshot(const Pool& pool, const std::filesystem::path& path);
std::string serialize_snapshot(const Pool& pool);
Pool load_snapshot(const std::filesystem::path& path);
Pool parse_snapshot(const std::string& text);

nlohmann::ordered_json to_json(const RankedResult& result);

}  // namespace fineprint
