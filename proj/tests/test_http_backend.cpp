#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "fineprint/error.hpp"
#include "fineprint/eval_harness.hpp"
#include "fineprint/http_backend.hpp"
#include "support.hpp"

namespace fineprint {
namespace {

using nlohmann::json;
using testing::data_path;

HttpBackendConfig fast_config() {
  HttpBackendConfig c;
  c.model = "vlm-test";
  c.embedding_model = "embed-test";
  c.retry_backoff = std::chrono::milliseconds(0);
  return c;
}

HttpBackend replay(const std::string& transcript) {
  return HttpBackend(fast_config(), ReplayTransport::from_file(data_path("transcripts/" + transcript)),
                     "");
}

GenerationRequest answer_request() {
  GenerationRequest r;
  r.role = PromptRole::answer;
  r.query = "What is the total?";
  r.context_docs = {{"p", "d1", "Total: 42", ""}};
  return r;
}

json chat_body(const std::string& content, const json& logprobs) {
  json choice = {{"index", 0},
                 {"message", {{"role", "assistant"}, {"content", content}}},
                 {"finish_reason", "stop"}};
  if (!logprobs.is_null()) choice["logprobs"] = logprobs;
  return {{"choices", json::array({choice})}};
}

TEST(ChatRequest, Shape) {
  const json body = build_chat_request(answer_request(), "vlm-test");
  EXPECT_EQ(body["model"], "vlm-test");
  EXPECT_EQ(body["temperature"], 0);
  EXPECT_EQ(body["logprobs"], true);
  ASSERT_EQ(body["messages"].size(), 2u);
  EXPECT_EQ(body["messages"][0]["role"], "system");
  EXPECT_EQ(body["messages"][0]["content"], std::string(system_prompt()));
  EXPECT_EQ(body["messages"][1]["role"], "user");
  const std::string user = body["messages"][1]["content"];
  EXPECT_NE(user.find("What is the total?"), std::string::npos);
  EXPECT_NE(user.find("Total: 42"), std::string::npos);
}

TEST(ChatRequest, ImagesBecomeContentParts) {
  GenerationRequest r = answer_request();
  r.context_docs.push_back({"p", "d2", "", "data:image/png;base64,AAAA"});
  const json parts = build_chat_request(r, "m")["messages"][1]["content"];
  ASSERT_TRUE(parts.is_array());
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0]["type"], "text");
  EXPECT_EQ(parts[1]["type"], "image_url");
  EXPECT_EQ(parts[1]["image_url"]["url"], "data:image/png;base64,AAAA");
}

TEST(ChatResponse, ProbabilitiesAreExpOfLogprobs) {
  const json lp = {{"content", json::array({{{"token", "4"}, {"logprob", std::log(0.9)}},
                                            {{"token", "2"}, {"logprob", 0.0}}})}};
  const GenerationResult r = parse_chat_response(chat_body("42", lp), true);
  EXPECT_EQ(r.text, "42");
  ASSERT_EQ(r.token_probs.size(), 2u);
  EXPECT_NEAR(r.token_probs[0], 0.9, 1e-12);
  EXPECT_EQ(r.token_probs[1], 1.0);
  EXPECT_EQ(r.finish_reason, FinishReason::stop);
}

TEST(ChatResponse, MissingLogprobsOnlyWhenRequired) {
  try {
    parse_chat_response(chat_body("42", nullptr), true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::missing_logprobs);
    EXPECT_NE(std::string(e.what()).find("logprobs"), std::string::npos);
  }
  EXPECT_TRUE(parse_chat_response(chat_body("YES", nullptr), false).token_probs.empty());
}

TEST(ChatResponse, MalformedBodies) {
  EXPECT_THROW(parse_chat_response(json::object(), false), Error);
  EXPECT_THROW(parse_chat_response({{"choices", json::array()}}, false), Error);
  EXPECT_THROW(parse_chat_response({{"choices", {{{"message", {{"content", nullptr}}}}}}}, false),
               Error);
  const json positive = {{"content", json::array({{{"token", "x"}, {"logprob", 0.5}}})}};
  EXPECT_EQ(ErrorCode::probability_out_of_range, [&] {
    try {
      parse_chat_response(chat_body("x", positive), true);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::invalid_argument;
  }());
}

TEST(EmbeddingResponse, Parses) {
  const json ok = {{"data", {{{"embedding", {1, 2.5}}}}}};
  EXPECT_EQ(parse_embedding_response(ok).values, (std::vector<double>{1, 2.5}));
  EXPECT_THROW(parse_embedding_response({{"data", json::array()}}), Error);
  EXPECT_THROW(parse_embedding_response({{"data", {{{"embedding", {"x"}}}}}}), Error);
}

TEST(Replay, HappyPathRetriesAfterOverload) {
  HttpBackend b = replay("happy_path.jsonl");
  EXPECT_EQ(b.embed_query("q").values, (std::vector<double>{0.25, -0.5, 1.0}));

  const GenerationResult a = b.generate(answer_request());
  EXPECT_EQ(a.text, "42");
  ASSERT_EQ(a.token_probs.size(), 2u);
  EXPECT_NEAR(a.token_probs[0], 0.9, 1e-12);
  EXPECT_NEAR(a.token_probs[1], 0.95, 1e-12);

  GenerationRequest probe;
  probe.role = PromptRole::sufficiency_probe;
  probe.query = "What is the total?";
  probe.context_docs = answer_request().context_docs;
  const SufficiencyVerdict v = parse_verdict(b.generate(probe).text);
  EXPECT_TRUE(v.sufficient);
  EXPECT_EQ(v.rationale, "The table lists it.");

  const JudgeOutcome j = judge_accuracy("What is the total?", "42", "42", b);
  EXPECT_EQ(j.score, 5);
  EXPECT_TRUE(j.correct);
}

TEST(Replay, MissingLogprobsSurfaces) {
  HttpBackend b = replay("missing_logprobs.jsonl");
  try {
    b.generate(answer_request());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::missing_logprobs);
    EXPECT_TRUE(e.is_backend_error());
  }
}

TEST(Replay, MalformedJudgeScoreAfterRetry) {
  HttpBackend b = replay("malformed_score.jsonl");
  try {
    judge_accuracy("q", "a", "b", b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::unparseable_score);
  }
}

TEST(Replay, PathMismatchAndExhaustion) {
  auto t = ReplayTransport::from_file(data_path("transcripts/missing_logprobs.jsonl"));
  EXPECT_THROW(t->post("/embeddings", "{}", {}), Error);
  EXPECT_EQ(t->remaining(), 0u);
  EXPECT_EQ(t->post("/chat/completions", "{}", {}).status, 0);
}

class FakeTransport : public HttpTransport {
 public:
  explicit FakeTransport(std::vector<HttpResponse> replies) : replies_(std::move(replies)) {}
  HttpResponse post(const std::string& path, const std::string& body,
                    const HeaderList& headers) override {
    paths.push_back(path);
    bodies.push_back(body);
    last_headers = headers;
    if (next_ >= replies_.size()) return {0, "none"};
    return replies_[next_++];
  }
  std::vector<std::string> paths;
  std::vector<std::string> bodies;
  HeaderList last_headers;

 private:
  std::vector<HttpResponse> replies_;
  std::size_t next_ = 0;
};

TEST(HttpBackend, RetriesTransientFailuresThenGivesUp) {
  auto t = std::make_unique<FakeTransport>(
      std::vector<HttpResponse>{{429, "slow down"}, {0, "reset"}, {502, "bad gateway"}});
  FakeTransport* raw = t.get();
  HttpBackend b(fast_config(), std::move(t), "sk-test");
  try {
    b.embed_query("q");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::backend_unavailable);
    EXPECT_NE(std::string(e.what()).find("502"), std::string::npos);
  }
  EXPECT_EQ(raw->paths.size(), 3u);
  ASSERT_EQ(raw->last_headers.size(), 1u);
  EXPECT_EQ(raw->last_headers[0].second, "Bearer sk-test");
  EXPECT_EQ(json::parse(raw->bodies[0])["model"], "embed-test");
}

TEST(HttpBackend, ClientErrorsAreNotRetried) {
  auto t = std::make_unique<FakeTransport>(std::vector<HttpResponse>{{400, "bad"}, {200, "{}"}});
  FakeTransport* raw = t.get();
  HttpBackend b(fast_config(), std::move(t), "");
  EXPECT_THROW(b.embed_query("q"), Error);
  EXPECT_EQ(raw->paths.size(), 1u);
  EXPECT_TRUE(raw->last_headers.empty());
}

TEST(HttpBackend, ValidatesBeforeSending) {
  auto t = std::make_unique<FakeTransport>(std::vector<HttpResponse>{});
  FakeTransport* raw = t.get();
  HttpBackend b(fast_config(), std::move(t), "");
  GenerationRequest r = answer_request();
  r.context_docs.clear();
  EXPECT_THROW(b.generate(r), Error);
  EXPECT_TRUE(raw->paths.empty());
}

TEST(RecordingTransport, WritesReplayableTranscript) {
  testing::TempDir dir;
  const auto path = dir / "rec.jsonl";
  {
    auto inner = ReplayTransport::from_file(data_path("transcripts/happy_path.jsonl"));
    HttpBackend b(fast_config(), std::make_unique<RecordingTransport>(std::move(inner), path), "");
    b.embed_query("hello");
    b.generate(answer_request());
  }
  std::ifstream in(path);
  std::vector<json> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(json::parse(line));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0]["request"]["body"]["input"], "hello");
  EXPECT_EQ(lines[1]["response"]["status"], 503);

  HttpBackend again(fast_config(), ReplayTransport::from_file(path), "");
  EXPECT_EQ(again.embed_query("hello").values, (std::vector<double>{0.25, -0.5, 1.0}));
  EXPECT_EQ(again.generate(answer_request()).text, "42");
}

TEST(HttplibTransport, TalksToALocalServer) {
  httplib::Server server;
  std::string seen_auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    const json body = json::parse(req.body);
    const std::string reply = body["messages"][1]["content"].get<std::string>().find("total") !=
                                      std::string::npos
                                  ? "42"
                                  : "?";
    const json lp = {{"content", json::array({{{"token", reply}, {"logprob", -0.01}}})}};
    res.set_content(chat_body(reply, lp).dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpBackendConfig c = fast_config();
  c.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/";
  HttpBackend b(c, std::make_unique<HttplibTransport>(c.base_url, std::chrono::seconds(5)), "k");
  const GenerationResult r = b.generate(answer_request());
  EXPECT_EQ(r.text, "42");
  EXPECT_NEAR(r.token_probs.at(0), std::exp(-0.01), 1e-12);
  EXPECT_EQ(seen_auth, "Bearer k");

  server.stop();
  th.join();
  EXPECT_THROW(b.generate(answer_request()), Error);
}

TEST(HttplibTransport, RejectsUrlWithoutScheme) {
  EXPECT_THROW(HttplibTransport("localhost:8000", std::chrono::seconds(1)), Error);
}

TEST(ApiKey, NamesTheMissingVariable) {
  ::unsetenv("FINEPRINT_TEST_NO_SUCH_KEY");
  try {
    api_key_from_env("FINEPRINT_TEST_NO_SUCH_KEY");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
    EXPECT_NE(std::string(e.what()).find("FINEPRINT_TEST_NO_SUCH_KEY"), std::string::npos);
  }
  ::setenv("FINEPRINT_TEST_KEY", "abc", 1);
  EXPECT_EQ(api_key_from_env("FINEPRINT_TEST_KEY"), "abc");
}

}  // namespace
}  // namespace fineprint
