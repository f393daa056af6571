/**
 * @file mock_backend.hpp
 * @brief Scripted fixture backend keyed by (role, query, doc-id set, iteration).
 *
 * Fixture files are JSON lines. Generation entries:
 *
 *   {"role": "answer", "query": "q1", "docs": ["d1"], "iteration": 0,
 *    "text": "42", "token_probs": [0.9, 0.95]}
 *
 * "docs" may be omitted to match any document set for that role, query and
 * iteration; an exact doc-set match wins over such a wildcard. An entry with
 * "error": "<message>" makes the matching call fail with BackendUnavailable.
 * Embedding entries use role "embed_query" (keyed by query) or
 * "embed_document" (keyed by the single id in "docs") with an "embedding"
 * array.
 */
#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fineprint/model_backend.hpp"

namespace fineprint {

struct FixtureKey {
  PromptRole role = PromptRole::answer;
  std::string query;
  // Sorted doc ids; nullopt matches any set.
  std::optional<std::vector<std::string>> doc_ids;
  int iteration = 0;

  friend auto operator<=>(const FixtureKey&, const FixtureKey&) = default;
};

struct Fixture {
  GenerationResult result;
  // When set, the call fails with BackendUnavailable carrying this message.
  std::optional<std::string> error;
};

class MockBackend : public ModelBackend {
 public:
  // Strict mode fails on fixture misses; lenient mode answers with a canned
  // low-confidence reply.
  explicit MockBackend(bool strict = true) : strict_(strict) {}

  static MockBackend from_file(const std::filesystem::path& path, bool strict = true);
  void load(std::istream& in, const std::string& source = "<stream>");

  void add_fixture(FixtureKey key, Fixture fixture);
  void add_query_embedding(const std::string& query, Embedding e);
  void add_document_embedding(const std::string& doc_id, Embedding e);

  Embedding embed_query(const std::string& query) override;
  Embedding embed_document(const DocRef& doc) override;
  GenerationResult generate(const GenerationRequest& req) override;

  std::size_t call_count() const;
  bool strict() const noexcept { return strict_; }

  MockBackend(MockBackend&& other) noexcept;
  MockBackend& operator=(MockBackend&&) = delete;

 private:
  GenerationResult lenient_reply(const GenerationRequest& req) const;

  bool strict_;
  mutable std::mutex mu_;
  std::map<FixtureKey, Fixture> fixtures_;
  std::map<std::string, Embedding> query_embeddings_;
  std::map<std::string, Embedding> document_embeddings_;
  std::size_t calls_ = 0;
};

}  // namespace fineprint
