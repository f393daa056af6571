#include "fineprint/mock_backend.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "fineprint/error.hpp"

namespace fineprint {
namespace {

using nlohmann::json;

std::string normalized_answer(const std::string& s) {
  std::string out;
  for (unsigned char c : s) {
    if (std::isspace(c)) {
      if (!out.empty() && out.back() != ' ') out.push_back(' ');
    } else {
      out.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::vector<std::string> sorted_ids(const std::vector<DocRef>& docs) {
  std::vector<std::string> ids;
  ids.reserve(docs.size());
  for (const auto& d : docs) ids.push_back(d.doc_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::string describe(const FixtureKey& k) {
  std::string out = std::string(to_string(k.role)) + " query=\"" + k.query + "\" docs=[";
  if (k.doc_ids) {
    for (std::size_t i = 0; i < k.doc_ids->size(); ++i) {
      if (i) out += ",";
      out += (*k.doc_ids)[i];
    }
  } else {
    out += "*";
  }
  return out + "] iteration=" + std::to_string(k.iteration);
}

Embedding embedding_from(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) {
    throw Error(ErrorCode::parse_error, where + ": \"embedding\" must be a nonempty array");
  }
  std::vector<double> v;
  for (const auto& x : j) {
    if (!x.is_number()) throw Error(ErrorCode::parse_error, where + ": non-numeric embedding");
    v.push_back(x.get<double>());
  }
  return Embedding(std::move(v));
}

}  // namespace

MockBackend::MockBackend(MockBackend&& other) noexcept
    : strict_(other.strict_),
      fixtures_(std::move(other.fixtures_)),
      query_embeddings_(std::move(other.query_embeddings_)),
      document_embeddings_(std::move(other.document_embeddings_)),
      calls_(other.calls_) {}

MockBackend MockBackend::from_file(const std::filesystem::path& path, bool strict) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open fixture file " + path.string());
  MockBackend m(strict);
  m.load(in, path.string());
  return m;
}

void MockBackend::load(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
      const std::string role = j.at("role").get<std::string>();
      if (role == "embed_query") {
        add_query_embedding(j.at("query").get<std::string>(),
                            embedding_from(j.at("embedding"), where));
        continue;
      }
      if (role == "embed_document") {
        const auto docs = j.at("docs").get<std::vector<std::string>>();
        if (docs.size() != 1) {
          throw Error(ErrorCode::parse_error, where + ": embed_document needs one doc id");
        }
        add_document_embedding(docs.front(), embedding_from(j.at("embedding"), where));
        continue;
      }

      FixtureKey key;
      key.role = parse_prompt_role(role);
      key.query = j.at("query").get<std::string>();
      if (auto it = j.find("docs"); it != j.end()) {
        auto ids = it->get<std::vector<std::string>>();
        std::sort(ids.begin(), ids.end());
        key.doc_ids = std::move(ids);
      }
      key.iteration = j.value("iteration", 0);

      Fixture f;
      if (auto it = j.find("error"); it != j.end()) {
        f.error = it->get<std::string>();
      } else {
        f.result.text = j.at("text").get<std::string>();
        f.result.token_probs = j.value("token_probs", std::vector<double>{});
        f.result.finish_reason = parse_finish_reason(j.value("finish_reason", "stop"));
      }
      add_fixture(std::move(key), std::move(f));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::parse_error, where + ": " + e.what());
    }
  }
}

void MockBackend::add_fixture(FixtureKey key, Fixture fixture) {
  std::lock_guard lock(mu_);
  if (key.doc_ids) std::sort(key.doc_ids->begin(), key.doc_ids->end());
  fixtures_[std::move(key)] = std::move(fixture);
}

void MockBackend::add_query_embedding(const std::string& query, Embedding e) {
  std::lock_guard lock(mu_);
  query_embeddings_[query] = std::move(e);
}

void MockBackend::add_document_embedding(const std::string& doc_id, Embedding e) {
  std::lock_guard lock(mu_);
  document_embeddings_[doc_id] = std::move(e);
}

Embedding MockBackend::embed_query(const std::string& query) {
  std::lock_guard lock(mu_);
  ++calls_;
  auto it = query_embeddings_.find(query);
  if (it == query_embeddings_.end()) {
    throw Error(ErrorCode::backend_unavailable,
                "mock fixture miss: embed_query \"" + query + "\"");
  }
  return it->second;
}

Embedding MockBackend::embed_document(const DocRef& doc) {
  std::lock_guard lock(mu_);
  ++calls_;
  auto it = document_embeddings_.find(doc.doc_id);
  if (it == document_embeddings_.end()) {
    throw Error(ErrorCode::backend_unavailable,
                "mock fixture miss: embed_document \"" + doc.doc_id + "\"");
  }
  return it->second;
}

GenerationResult MockBackend::generate(const GenerationRequest& req) {
  validate_request(req);
  FixtureKey key{req.role, req.query, sorted_ids(req.context_docs), req.iteration};

  std::optional<Fixture> hit;
  {
    std::lock_guard lock(mu_);
    ++calls_;
    auto it = fixtures_.find(key);
    if (it == fixtures_.end()) {
      FixtureKey any = key;
      any.doc_ids.reset();
      it = fixtures_.find(any);
    }
    if (it != fixtures_.end()) hit = it->second;
  }

  if (hit) {
    if (hit->error) {
      throw Error(ErrorCode::backend_unavailable, "scripted failure: " + *hit->error);
    }
    return hit->result;
  }
  if (req.role == PromptRole::judge_score &&
      normalized_answer(*req.prediction) == normalized_answer(*req.gold)) {
    return GenerationResult{"5", {1.0}, FinishReason::stop};
  }
  if (strict_) {
    throw Error(ErrorCode::backend_unavailable, "mock fixture miss: " + describe(key));
  }
  return lenient_reply(req);
}

GenerationResult MockBackend::lenient_reply(const GenerationRequest& req) const {
  switch (req.role) {
    case PromptRole::sufficiency_probe:
      return {"NO", {0.5}, FinishReason::stop};
    case PromptRole::judge_score:
      return {"1", {0.5}, FinishReason::stop};
    default:
      return {"I am not sure.", {0.3, 0.3, 0.3, 0.3}, FinishReason::stop};
  }
}

std::size_t MockBackend::call_count() const {
  std::lock_guard lock(mu_);
  return calls_;
}

}  // namespace fineprint
