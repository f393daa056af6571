#include "fineprint/http_backend.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "fineprint/error.hpp"

namespace fineprint {
namespace {

using nlohmann::json;

bool retryable(int status) { return status == 0 || status == 429 || status >= 500; }

std::string snippet(const std::string& s) {
  return s.size() > 200 ? s.substr(0, 200) + "..." : s;
}

json response_body_json(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  return j.is_discarded() ? json(body) : j;
}

}  // namespace

HttplibTransport::HttplibTransport(std::string base_url, std::chrono::milliseconds timeout)
    : timeout_(timeout) {
  const auto scheme = base_url.find("://");
  if (scheme == std::string::npos) {
    throw Error(ErrorCode::invalid_argument, "base URL needs a scheme: " + base_url);
  }
  const auto slash = base_url.find('/', scheme + 3);
  origin_ = base_url.substr(0, slash);
  prefix_ = slash == std::string::npos ? std::string() : base_url.substr(slash);
  while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
}

HttpResponse HttplibTransport::post(const std::string& path, const std::string& body,
                                    const HeaderList& headers) {
  httplib::Client client(origin_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers h;
  for (const auto& [k, v] : headers) h.emplace(k, v);
  auto res = client.Post(prefix_ + path, h, body, "application/json");
  if (!res) return {0, httplib::to_string(res.error())};
  return {res->status, res->body};
}

ReplayTransport::ReplayTransport(std::vector<json> exchanges)
    : exchanges_(std::move(exchanges)) {}

std::unique_ptr<ReplayTransport> ReplayTransport::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open transcript " + path.string());
  std::vector<json> exchanges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("request") || !j.contains("response")) {
      throw Error(ErrorCode::parse_error,
                  path.string() + ":" + std::to_string(line_no) + ": bad transcript entry");
    }
    exchanges.push_back(std::move(j));
  }
  return std::make_unique<ReplayTransport>(std::move(exchanges));
}

HttpResponse ReplayTransport::post(const std::string& path, const std::string&,
                                   const HeaderList&) {
  std::lock_guard lock(mu_);
  if (next_ >= exchanges_.size()) return {0, "transcript exhausted"};
  const json& ex = exchanges_[next_++];
  const std::string recorded = ex["request"].value("path", "");
  if (recorded != path) {
    throw Error(ErrorCode::backend_unavailable,
                "transcript expected a request to " + recorded + ", got " + path);
  }
  const json& resp = ex["response"];
  HttpResponse out;
  out.status = resp.value("status", 0);
  const json& body = resp.contains("body") ? resp["body"] : json();
  out.body = body.is_string() ? body.get<std::string>() : body.dump();
  return out;
}

std::size_t ReplayTransport::remaining() const {
  std::lock_guard lock(mu_);
  return exchanges_.size() - next_;
}

RecordingTransport::RecordingTransport(std::unique_ptr<HttpTransport> inner,
                                       std::filesystem::path out)
    : inner_(std::move(inner)), out_(std::move(out)) {}

HttpResponse RecordingTransport::post(const std::string& path, const std::string& body,
                                      const HeaderList& headers) {
  HttpResponse r = inner_->post(path, body, headers);
  json ex;
  ex["request"] = {{"path", path}, {"body", response_body_json(body)}};
  ex["response"] = {{"status", r.status}, {"body", response_body_json(r.body)}};
  std::lock_guard lock(mu_);
  std::ofstream f(out_, std::ios::app);
  f << ex.dump() << '\n';
  return r;
}

std::string api_key_from_env(const std::string& variable) {
  const char* v = std::getenv(variable.c_str());
  if (v == nullptr || *v == '\0') {
    throw Error(ErrorCode::invalid_argument,
                "environment variable " + variable +
                    " is not set; export it with the API key for the HTTP backend");
  }
  return v;
}

json build_chat_request(const GenerationRequest& req, const std::string& model) {
  const std::string prompt = render_prompt(req);
  json user;
  user["role"] = "user";
  bool has_images = false;
  for (const auto& d : req.context_docs) has_images = has_images || !d.image.empty();
  if (has_images) {
    json parts = json::array();
    parts.push_back({{"type", "text"}, {"text", prompt}});
    for (const auto& d : req.context_docs) {
      if (d.image.empty()) continue;
      parts.push_back({{"type", "image_url"}, {"image_url", {{"url", d.image}}}});
    }
    user["content"] = std::move(parts);
  } else {
    user["content"] = prompt;
  }
  json body;
  body["model"] = model;
  body["messages"] = json::array({{{"role", "system"}, {"content", system_prompt()}}, user});
  body["temperature"] = 0;
  body["max_tokens"] = req.max_tokens;
  body["logprobs"] = true;
  return body;
}

GenerationResult parse_chat_response(const json& body, bool require_logprobs) {
  if (!body.is_object() || !body.contains("choices") || !body["choices"].is_array() ||
      body["choices"].empty()) {
    throw Error(ErrorCode::backend_unavailable,
                "chat response has no choices: " + snippet(body.dump()));
  }
  const json& choice = body["choices"][0];
  GenerationResult r;
  const json* content = nullptr;
  if (choice.contains("message") && choice["message"].is_object()) {
    auto it = choice["message"].find("content");
    if (it != choice["message"].end() && it->is_string()) content = &*it;
  }
  if (content == nullptr) {
    throw Error(ErrorCode::backend_unavailable, "chat response has no message content");
  }
  r.text = content->get<std::string>();
  if (auto fr = choice.find("finish_reason"); fr != choice.end() && fr->is_string()) {
    r.finish_reason = parse_finish_reason(fr->get<std::string>());
  }

  const json* tokens = nullptr;
  if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object()) {
    if (auto c = lp->find("content"); c != lp->end() && c->is_array() && !c->empty()) {
      tokens = &*c;
    }
  }
  if (tokens == nullptr) {
    if (require_logprobs) {
      throw Error(ErrorCode::missing_logprobs,
                  "response carries no token log-probabilities; enable logprobs on the "
                  "serving endpoint");
    }
    return r;
  }
  for (const auto& t : *tokens) {
    if (!t.contains("logprob") || !t["logprob"].is_number()) {
      throw Error(ErrorCode::missing_logprobs, "token entry without a numeric logprob");
    }
    r.token_probs.push_back(std::exp(t["logprob"].get<double>()));
  }
  validate_result(r);
  return r;
}

Embedding parse_embedding_response(const json& body) {
  if (!body.is_object() || !body.contains("data") || !body["data"].is_array() ||
      body["data"].empty() || !body["data"][0].contains("embedding")) {
    throw Error(ErrorCode::backend_unavailable,
                "embedding response has no data: " + snippet(body.dump()));
  }
  const json& arr = body["data"][0]["embedding"];
  if (!arr.is_array() || arr.empty()) {
    throw Error(ErrorCode::backend_unavailable, "embedding is not a nonempty array");
  }
  std::vector<double> v;
  v.reserve(arr.size());
  for (const auto& x : arr) {
    if (!x.is_number()) throw Error(ErrorCode::backend_unavailable, "non-numeric embedding");
    v.push_back(x.get<double>());
  }
  return Embedding(std::move(v));
}

HttpBackend::HttpBackend(HttpBackendConfig config, std::unique_ptr<HttpTransport> transport,
                         std::string api_key)
    : config_(std::move(config)), transport_(std::move(transport)), api_key_(std::move(api_key)) {}

json HttpBackend::post_json(const std::string& path, const json& body) {
  HeaderList headers;
  if (!api_key_.empty()) headers.emplace_back("Authorization", "Bearer " + api_key_);
  const std::string payload = body.dump();
  HttpResponse last;
  for (int attempt = 0; attempt <= config_.retries; ++attempt) {
    if (attempt > 0 && config_.retry_backoff.count() > 0) {
      std::this_thread::sleep_for(config_.retry_backoff * attempt);
    }
    last = transport_->post(path, payload, headers);
    if (last.status == 200) {
      json parsed = json::parse(last.body, nullptr, false);
      if (parsed.is_discarded()) {
        throw Error(ErrorCode::backend_unavailable,
                    path + " returned a body that is not JSON: " + snippet(last.body));
      }
      return parsed;
    }
    if (!retryable(last.status)) break;
  }
  throw Error(ErrorCode::backend_unavailable,
              path + " failed with status " + std::to_string(last.status) + ": " +
                  snippet(last.body));
}

Embedding HttpBackend::embed_input(const std::string& input) {
  json body;
  body["model"] = config_.embedding_model.empty() ? config_.model : config_.embedding_model;
  body["input"] = input;
  return parse_embedding_response(post_json("/embeddings", body));
}

Embedding HttpBackend::embed_query(const std::string& query) { return embed_input(query); }

Embedding HttpBackend::embed_document(const DocRef& doc) {
  return embed_input(doc.image.empty() ? doc.text : doc.image);
}

GenerationResult HttpBackend::generate(const GenerationRequest& req) {
  validate_request(req);
  const json body = build_chat_request(req, config_.model);
  return parse_chat_response(post_json("/chat/completions", body),
                             req.role == PromptRole::answer);
}

}  // namespace fineprint
