/**
 * @file http_backend.hpp
 * @brief Client for OpenAI-compatible chat-completions and embeddings
 *        endpoints, over a pluggable transport so wire transcripts can be
 *        recorded and replayed.
 *
 * Transcript files are JSON lines, one exchange per line:
 *
 *   {"request": {"path": "/chat/completions", "body": {...}},
 *    "response": {"status": 200, "body": {...}}}
 *
 * A response body that is not valid JSON is stored as a string.
 */
#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fineprint/model_backend.hpp"

namespace fineprint {

using HeaderList = std::vector<std::pair<std::string, std::string>>;

struct HttpResponse {
  // 0 when no response arrived (connection failure, timeout).
  int status = 0;
  std::string body;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& path, const std::string& body,
                            const HeaderList& headers) = 0;
};

// Real network transport. `base_url` is scheme://host[:port][/prefix]; request
// paths are appended to the prefix.
class HttplibTransport : public HttpTransport {
 public:
  HttplibTransport(std::string base_url, std::chrono::milliseconds timeout);
  HttpResponse post(const std::string& path, const std::string& body,
                    const HeaderList& headers) override;

 private:
  std::string origin_;
  std::string prefix_;
  std::chrono::milliseconds timeout_;
};

// Serves recorded responses in order, checking each request path.
class ReplayTransport : public HttpTransport {
 public:
  explicit ReplayTransport(std::vector<nlohmann::json> exchanges);
  static std::unique_ptr<ReplayTransport> from_file(const std::filesystem::path& path);

  HttpResponse post(const std::string& path, const std::string& body,
                    const HeaderList& headers) override;

  std::size_t remaining() const;

 private:
  mutable std::mutex mu_;
  std::vector<nlohmann::json> exchanges_;
  std::size_t next_ = 0;
};

// Forwards to another transport and appends every exchange to a transcript.
class RecordingTransport : public HttpTransport {
 public:
  RecordingTransport(std::unique_ptr<HttpTransport> inner, std::filesystem::path out);
  HttpResponse post(const std::string& path, const std::string& body,
                    const HeaderList& headers) override;

 private:
  std::unique_ptr<HttpTransport> inner_;
  std::filesystem::path out_;
  std::mutex mu_;
};

struct HttpBackendConfig {
  std::string base_url = "http://localhost:8000/v1";
  std::string model;
  std::string embedding_model;
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_s = 60.0;
  int retries = 2;
  std::chrono::milliseconds retry_backoff{500};
};

// Reads the API key from the configured environment variable. Throws
// InvalidArgument naming the variable when it is unset or empty.
std::string api_key_from_env(const std::string& variable);

nlohmann::json build_chat_request(const GenerationRequest& req, const std::string& model);

// Parses a chat-completions response. Token probabilities are exp(logprob).
// Throws MissingLogprobs when `require_logprobs` and the response has none,
// BackendUnavailable on a malformed body.
GenerationResult parse_chat_response(const nlohmann::json& body, bool require_logprobs);

Embedding parse_embedding_response(const nlohmann::json& body);

class HttpBackend : public ModelBackend {
 public:
  HttpBackend(HttpBackendConfig config, std::unique_ptr<HttpTransport> transport,
              std::string api_key);

  Embedding embed_query(const std::string& query) override;
  Embedding embed_document(const DocRef& doc) override;
  // Only the answer role (whose token probabilities drive routing) requires
  // logprobs in the response.
  GenerationResult generate(const GenerationRequest& req) override;

 private:
  nlohmann::json post_json(const std::string& path, const nlohmann::json& body);
  Embedding embed_input(const std::string& input);

  HttpBackendConfig config_;
  std::unique_ptr<HttpTransport> transport_;
  std::string api_key_;
};

}  // namespace fineprint
