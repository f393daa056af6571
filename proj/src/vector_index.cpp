#include "fineprint/vector_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "fineprint/error.hpp"

namespace fineprint {
namespace {

using nlohmann::json;

std::string at_line(std::size_t line_no, const std::string& what) {
  return "line " + std::to_string(line_no) + ": " + what;
}

bool ranks_before(const RankedEntry& a, const RankedEntry& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.doc_id != b.doc_id) return a.doc_id < b.doc_id;
  return a.pool_name < b.pool_name;
}

double score_record(const Embedding& query, double query_norm,
                    const DocumentRecord& rec, const ScoringOptions& opt) {
  const auto& d = rec.embedding.values;
  const double dn = l2_norm(d);
  if (dn == 0.0) return 0.0;
  if (opt.mode == ScoringMode::cosine) {
    return std::clamp(dot(query.values, d) / (query_norm * dn), -1.0, 1.0);
  }
  const HybridMask m = mask_for_pair(query, rec.embedding, opt.alpha, opt.eps);
  const Embedding masked = apply_mask(rec.embedding, m.weights);
  const double mn = l2_norm(masked.values);
  if (mn == 0.0) return 0.0;
  return std::clamp(dot(query.values, masked.values) / (query_norm * mn), -1.0, 1.0);
}

json record_to_json(const DocumentRecord& r) {
  json j;
  j["doc_id"] = r.doc_id;
  j["embedding"] = r.embedding.values;
  j["metadata"] = r.metadata;
  j["pool"] = r.pool_name;
  return j;
}

DocumentRecord record_from_json(const json& j, std::size_t line_no) {
  if (!j.is_object()) throw Error(ErrorCode::parse_error, at_line(line_no, "expected an object"));
  auto str_field = [&](const char* name) {
    auto it = j.find(name);
    if (it == j.end() || !it->is_string()) {
      throw Error(ErrorCode::parse_error,
                  at_line(line_no, std::string("missing string field \"") + name + "\""));
    }
    return it->get<std::string>();
  };
  DocumentRecord r;
  r.doc_id = str_field("doc_id");
  r.pool_name = str_field("pool");
  if (r.doc_id.empty()) throw Error(ErrorCode::parse_error, at_line(line_no, "empty doc_id"));
  auto emb = j.find("embedding");
  if (emb == j.end() || !emb->is_array() || emb->empty()) {
    throw Error(ErrorCode::parse_error, at_line(line_no, "\"embedding\" must be a nonempty array"));
  }
  r.embedding.values.reserve(emb->size());
  for (const auto& x : *emb) {
    if (!x.is_number()) {
      throw Error(ErrorCode::parse_error, at_line(line_no, "non-numeric embedding entry"));
    }
    const double v = x.get<double>();
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::parse_error, at_line(line_no, "non-finite embedding entry"));
    }
    r.embedding.values.push_back(v);
  }
  if (auto md = j.find("metadata"); md != j.end() && !md->is_null()) {
    if (!md->is_object()) {
      throw Error(ErrorCode::parse_error, at_line(line_no, "\"metadata\" must be an object"));
    }
    r.metadata = *md;
  }
  return r;
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

const DocumentRecord* Pool::find(const DocKey& key) const {
  for (const auto& r : records) {
    if (r.doc_id == key.doc_id && r.pool_name == key.pool) return &r;
  }
  return nullptr;
}

ScoringMode parse_scoring_mode(const std::string& s) {
  if (s == "cosine") return ScoringMode::cosine;
  if (s == "masked") return ScoringMode::masked;
  throw Error(ErrorCode::invalid_argument, "unknown scoring mode \"" + s + "\"");
}

std::string to_string(ScoringMode mode) {
  return mode == ScoringMode::masked ? "masked" : "cosine";
}

DocumentRecord parse_record(const std::string& line, std::size_t line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse_error, at_line(line_no, e.what()));
  }
  return record_from_json(j, line_no);
}

void add_record(Pool& pool, DocumentRecord record) {
  if (pool.records.empty() && pool.dimension == 0) {
    pool.dimension = record.embedding.dim();
  }
  if (record.embedding.dim() != pool.dimension) {
    throw Error(ErrorCode::dimension_mismatch,
                "record \"" + record.doc_id + "\" has dimension " +
                    std::to_string(record.embedding.dim()) + ", pool has " +
                    std::to_string(pool.dimension));
  }
  if (pool.find(record.key()) != nullptr) {
    throw Error(ErrorCode::duplicate_id,
                "(" + record.pool_name + ", " + record.doc_id + ") already present");
  }
  pool.records.push_back(std::move(record));
}

Pool ingest_corpus(const std::filesystem::path& path,
                   std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());

  Pool pool;
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    DocumentRecord r = parse_record(line, line_no);
    if (pool.records.empty()) {
      pool.name = r.pool_name;
    } else if (r.pool_name != pool.name) {
      throw Error(ErrorCode::parse_error,
                  at_line(line_no, "record belongs to pool \"" + r.pool_name +
                                       "\" but the corpus is \"" + pool.name + "\""));
    }
    if (!seen.insert(r.doc_id).second) {
      throw Error(ErrorCode::duplicate_id, at_line(line_no, "duplicate doc_id \"" + r.doc_id + "\""));
    }
    if (!pool.records.empty() && r.embedding.dim() != pool.dimension) {
      throw Error(ErrorCode::dimension_mismatch,
                  at_line(line_no, "embedding has " + std::to_string(r.embedding.dim()) +
                                       " entries, expected " + std::to_string(pool.dimension)));
    }
    if (pool.records.empty()) pool.dimension = r.embedding.dim();
    pool.records.push_back(std::move(r));
  }
  if (pool.records.empty()) {
    pool.name = path.stem().string();
    if (warnings != nullptr) warnings->push_back(path.string() + ": corpus is empty");
  }
  return pool;
}

RankedResult top_k(const Pool& pool, const Embedding& query, std::size_t k,
                   const ScoringOptions& options) {
  if (k < 1) throw Error(ErrorCode::invalid_argument, "k must be at least 1");
  RankedResult out;
  out.k = k;
  if (pool.empty()) return out;
  if (query.dim() != pool.dimension) {
    throw Error(ErrorCode::dimension_mismatch,
                "query has dimension " + std::to_string(query.dim()) + ", pool \"" +
                    pool.name + "\" has " + std::to_string(pool.dimension));
  }
  const double qn = l2_norm(query.values);
  if (qn == 0.0) throw Error(ErrorCode::zero_vector, "query embedding is all zeros");

  std::vector<RankedEntry> all;
  all.reserve(pool.size());
  for (const auto& rec : pool.records) {
    all.push_back({rec.doc_id, rec.pool_name, score_record(query, qn, rec, options)});
  }
  const std::size_t n = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(),
                    ranks_before);
  all.resize(n);
  out.entries = std::move(all);
  return out;
}

Pool merge_pools(const std::vector<Pool>& pools) {
  Pool merged;
  merged.name = kAllPoolName;
  std::set<DocKey> keys;
  for (const auto& p : pools) {
    if (p.empty()) continue;
    if (merged.records.empty() && merged.dimension == 0) merged.dimension = p.dimension;
    if (p.dimension != merged.dimension) {
      throw Error(ErrorCode::dimension_mismatch,
                  "pool \"" + p.name + "\" has dimension " + std::to_string(p.dimension) +
                      ", expected " + std::to_string(merged.dimension));
    }
    for (const auto& r : p.records) {
      if (!keys.insert(r.key()).second) {
        throw Error(ErrorCode::duplicate_id,
                    "(" + r.pool_name + ", " + r.doc_id + ") appears twice");
      }
      merged.records.push_back(r);
    }
  }
  return merged;
}

std::string serialize_snapshot(const Pool& pool) {
  json header;
  header["count"] = pool.size();
  header["dimension"] = pool.dimension;
  header["format_version"] = kSnapshotFormatVersion;
  header["name"] = pool.name;
  std::string out = header.dump();
  out.push_back('\n');
  for (const auto& r : pool.records) {
    out += record_to_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

void save_snapshot(const Pool& pool, const std::filesystem::path& path) {
  const std::string data = serialize_snapshot(pool);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + path.string());
}

Pool parse_snapshot(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorCode::format_version_mismatch, "snapshot has no header");
  }
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error&) {
    throw Error(ErrorCode::format_version_mismatch, "snapshot header is not JSON");
  }
  if (!header.is_object() || !header.contains("format_version") ||
      header["format_version"] != kSnapshotFormatVersion) {
    throw Error(ErrorCode::format_version_mismatch,
                "expected format_version " + std::to_string(kSnapshotFormatVersion));
  }
  Pool pool;
  std::size_t count = 0;
  try {
    pool.name = header.at("name").get<std::string>();
    pool.dimension = header.at("dimension").get<std::size_t>();
    count = header.at("count").get<std::size_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("snapshot header: ") + e.what());
  }

  std::set<DocKey> keys;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    DocumentRecord r = parse_record(line, line_no);
    if (r.embedding.dim() != pool.dimension) {
      throw Error(ErrorCode::dimension_mismatch,
                  at_line(line_no, "record dimension differs from header"));
    }
    if (!keys.insert(r.key()).second) {
      throw Error(ErrorCode::duplicate_id, at_line(line_no, "duplicate doc_id \"" + r.doc_id + "\""));
    }
    pool.records.push_back(std::move(r));
  }
  if (pool.records.size() != count) {
    throw Error(ErrorCode::parse_error,
                "snapshot header declares " + std::to_string(count) + " records, found " +
                    std::to_string(pool.records.size()));
  }
  return pool;
}

Pool load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_snapshot(ss.str());
}

nlohmann::ordered_json to_json(const RankedResult& result) {
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < result.entries.size(); ++i) {
    const auto& e = result.entries[i];
    nlohmann::ordered_json row;
    row["rank"] = i + 1;
    row["pool"] = e.pool_name;
    row["doc_id"] = e.doc_id;
    row["score"] = e.score;
    entries.push_back(std::move(row));
  }
  nlohmann::ordered_json out;
  out["k"] = result.k;
  out["entries"] = std::move(entries);
  return out;
}

}  // namespace fineprint
