#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fineprint/agentic_generator.hpp"
#include "fineprint/mock_backend.hpp"
#include "fineprint/model_backend.hpp"
#include "fineprint/vector_index.hpp"

namespace fineprint::testing {

inline std::filesystem::path data_path(const std::string& rel) {
  return std::filesystem::path(FINEPRINT_TEST_DATA) / rel;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("fineprint-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::vector<double> gaussian_vector(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(d);
  for (auto& x : v) x = n(rng);
  return v;
}

inline double naive_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

struct OracleEntry {
  std::string doc_id;
  std::string pool;
  double score;
};

// Full scan and full sort: score desc, doc_id asc, pool asc.
inline std::vector<OracleEntry> sort_oracle(const Pool& pool, const Embedding& q, std::size_t k) {
  std::vector<OracleEntry> all;
  for (const auto& r : pool.records) {
    all.push_back({r.doc_id, r.pool_name, naive_cosine(q.values, r.embedding.values)});
  }
  std::sort(all.begin(), all.end(), [](const OracleEntry& a, const OracleEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.doc_id != b.doc_id) return a.doc_id < b.doc_id;
    return a.pool < b.pool;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

// Forwards to another backend and keeps every request with its reply.
class RecordingBackend : public ModelBackend {
 public:
  explicit RecordingBackend(ModelBackend& inner) : inner_(inner) {}

  Embedding embed_query(const std::string& q) override { return inner_.embed_query(q); }
  Embedding embed_document(const DocRef& d) override { return inner_.embed_document(d); }
  GenerationResult generate(const GenerationRequest& req) override {
    {
      std::lock_guard lock(mu_);
      requests.push_back(req);
    }
    return inner_.generate(req);
  }

  std::vector<GenerationRequest> requests;

 private:
  ModelBackend& inner_;
  std::mutex mu_;
};

// Describes the first place where the measured initial answer reappears in a
// later request, or nullopt when it never does.
inline std::optional<std::string> reflection_violation(
    const AnswerTrace& trace, const std::vector<GenerationRequest>& requests) {
  if (!trace.initial_answer || trace.initial_answer->empty()) return std::nullopt;
  const std::string& a = *trace.initial_answer;
  auto has = [&](const std::optional<std::string>& s) {
    return s && s->find(a) != std::string::npos;
  };
  bool after = false;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& r = requests[i];
    if (!after) {
      after = r.role == PromptRole::answer;
      continue;
    }
    if (has(r.prior) || has(r.salient) || has(r.prediction) || has(r.gold) ||
        r.query.find(a) != std::string::npos) {
      return "request " + std::to_string(i) + " (" + std::string(to_string(r.role)) + ")";
    }
    for (const auto& d : r.context_docs) {
      if (d.text.find(a) != std::string::npos) {
        return "request " + std::to_string(i) + " document " + d.doc_id;
      }
    }
  }
  // The serialized log must not carry it in any later request either.
  bool replied = false;
  for (const auto& e : trace.agent_log.events()) {
    if (e.kind == "reply" && e.detail.value("role", "") == "answer") {
      replied = true;
      continue;
    }
    if (replied && e.kind == "request" && e.detail.dump().find(a) != std::string::npos) {
      return "log event " + std::to_string(e.seq);
    }
  }
  return std::nullopt;
}

struct Scenario {
  std::string query;
  std::optional<RouteKind> route;
  std::size_t iterations;
  bool fails;
};

// The scripted scenarios in data/scenarios.jsonl over data/corpus_docs.jsonl.
inline const std::vector<Scenario>& scenarios() {
  static const std::vector<Scenario> kAll = {
      {"lqp-first", RouteKind::lqp, 0, false}, {"lqp-topk", RouteKind::lqp, 0, false},
      {"hqp-one", RouteKind::hqp, 1, false},   {"hqp-two", RouteKind::hqp, 2, false},
      {"hqp-max", RouteKind::hqp, 3, false},   {"outage", RouteKind::hqp, 1, true},
  };
  return kAll;
}

inline Pool docs_pool() { return ingest_corpus(data_path("corpus_docs.jsonl")); }

inline MockBackend scenario_backend() {
  return MockBackend::from_file(data_path("scenarios.jsonl"));
}

}  // namespace fineprint::testing
