#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli_app.hpp"
#include "support.hpp"

namespace fineprint {
namespace {

using nlohmann::json;
using testing::data_path;

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    docs = (dir / "docs.snap").string();
    ASSERT_EQ(run({"ingest", data_path("corpus_docs.jsonl").string(), "-o", docs}).code, 0);
  }
  testing::TempDir dir;
  std::string docs;
  std::string scen = data_path("scenarios.jsonl").string();
};

TEST_F(Cli, IngestReportsCountAndDimension) {
  const CliRun r = run({"ingest", data_path("corpus_docs.jsonl").string(), "-o", (dir / "x").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "5 records, dim=4\n");
  EXPECT_EQ(load_snapshot(dir / "x").size(), 5u);
}

TEST_F(Cli, IngestRefusesToOverwriteWithoutForce) {
  const CliRun r = run({"ingest", data_path("corpus_charts.jsonl").string(), "-o", docs});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--force"), std::string::npos);
  EXPECT_EQ(run({"ingest", data_path("corpus_charts.jsonl").string(), "-o", docs, "--force"}).code, 0);
  EXPECT_EQ(load_snapshot(docs).name, "charts");
}

TEST_F(Cli, IngestSmallAndBrokenCorpora) {
  const auto three = dir / "three.jsonl";
  std::ofstream(three) << R"({"doc_id":"a","pool":"p","embedding":[1,0]})" "\n"
                       << R"({"doc_id":"b","pool":"p","embedding":[0,1]})" "\n"
                       << R"({"doc_id":"c","pool":"p","embedding":[1,1]})" "\n";
  EXPECT_EQ(run({"ingest", three.string(), "-o", (dir / "3.snap").string()}).out, "3 records, dim=2\n");

  const auto broken = dir / "broken.jsonl";
  std::ofstream(broken) << R"({"doc_id":"a","pool":"p","embedding":[1,0]})" "\n"
                        << R"({"doc_id":"b","pool":"p"})" "\n";
  const CliRun r = run({"ingest", broken.string(), "-o", (dir / "b.snap").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("line 2"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir / "b.snap"));

  const auto empty = dir / "empty.jsonl";
  std::ofstream(empty) << "";
  const CliRun e = run({"ingest", empty.string(), "-o", (dir / "e.snap").string()});
  EXPECT_EQ(e.code, 0);
  EXPECT_EQ(e.out, "0 records, dim=0\n");
  EXPECT_NE(e.err.find("warning"), std::string::npos);
}

TEST_F(Cli, RetrieveTableAndDepth) {
  const CliRun r = run({"retrieve", "--snapshot", docs, "--query", "lqp-first", "--fixtures", scen,
                     "--k", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("d1"), std::string::npos);
  EXPECT_EQ(r.out.find("d2"), std::string::npos);
  const CliRun three = run({"retrieve", "--snapshot", docs, "--query", "lqp-first", "--fixtures", scen});
  EXPECT_NE(three.out.find("d3"), std::string::npos);
  EXPECT_EQ(three.out.find("d4"), std::string::npos);
}

TEST_F(Cli, RetrieveJsonAcrossPools) {
  const std::string charts = (dir / "charts.snap").string();
  ASSERT_EQ(run({"ingest", data_path("corpus_charts.jsonl").string(), "-o", charts}).code, 0);
  const CliRun single = run({"retrieve", "--snapshot", docs, "--snapshot", charts, "--query", "lqp-first",
                          "--fixtures", scen});
  EXPECT_EQ(single.code, 1);
  EXPECT_NE(single.err.find("--pool"), std::string::npos);

  const CliRun r = run({"retrieve", "--snapshot", docs, "--snapshot", charts, "--query", "lqp-first",
                     "--fixtures", scen, "--pool-mode", "all", "--k", "8", "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["pool"], "all");
  EXPECT_EQ(j["result"]["entries"].size(), 8u);
  std::set<std::string> pools;
  double last = 2;
  for (const auto& e : j["result"]["entries"]) {
    pools.insert(e["pool"]);
    EXPECT_LE(e["score"].get<double>(), last);
    last = e["score"];
  }
  EXPECT_EQ(pools, (std::set<std::string>{"docs", "charts"}));
  EXPECT_EQ(j["config"]["k"], 8);
}

TEST_F(Cli, AnswerLqpAndHqpTrace) {
  const CliRun r = run({"answer", "--snapshot", docs, "--query", "lqp-first", "--fixtures", scen});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "1200\n");

  const auto trace = dir / "trace.json";
  const CliRun h = run({"answer", "--snapshot", docs, "--query", "hqp-two", "--fixtures", scen,
                     "--trace", trace.string()});
  ASSERT_EQ(h.code, 0) << h.err;
  EXPECT_EQ(h.out, "fiscal 2019\n");
  const json t = json::parse(read(trace));
  EXPECT_EQ(t["route"]["kind"], "HQP");
  EXPECT_EQ(t["fineprint_iterations"].size(), 2u);
}

TEST_F(Cli, AnswerBackendFailureKeepsTrace) {
  const auto trace = dir / "trace.json";
  const CliRun r = run({"answer", "--snapshot", docs, "--query", "outage", "--fixtures", scen, "--trace",
                     trace.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("connection reset"), std::string::npos);
  const json t = json::parse(read(trace));
  EXPECT_EQ(t["status"], "error");
  EXPECT_EQ(t["fineprint_iterations"].size(), 1u);
}

TEST_F(Cli, HttpBackendWithoutKeyIsAUserError) {
  ::unsetenv("FINEPRINT_CLI_NO_KEY");
  const CliRun r = run({"answer", "--snapshot", docs, "--query", "q", "--backend", "http",
                     "--api-key-env", "FINEPRINT_CLI_NO_KEY"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("FINEPRINT_CLI_NO_KEY"), std::string::npos);
}

TEST_F(Cli, EvalRetrievalOptimum) {
  const std::string opt = (dir / "opt.snap").string();
  ASSERT_EQ(run({"ingest", data_path("corpus_opt.jsonl").string(), "-o", opt}).code, 0);
  const auto report = dir / "report.json";
  const CliRun r = run({"eval", "--dataset", data_path("retrieval_opt.jsonl").string(), "--snapshot", opt,
                     "--mode", "retrieval", "--fixtures",
                     data_path("retrieval_opt_fixtures.jsonl").string(), "--report", report.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("mean nDCG@5 = 1.0000"), std::string::npos);
  EXPECT_EQ(json::parse(read(report))["mean_ndcg5"], 1.0);
}

TEST_F(Cli, EvalMissingGoldDocument) {
  const std::string opt = (dir / "opt.snap").string();
  ASSERT_EQ(run({"ingest", data_path("corpus_opt.jsonl").string(), "-o", opt}).code, 0);
  const auto ds = dir / "ds.jsonl";
  std::ofstream(ds) << R"({"query_id":"lost-7","query":"optimum query 1","gold_doc_ids":[{"pool":"opt","doc_id":"nope"}],"gold_answer":""})"
                    << "\n";
  const CliRun r = run({"eval", "--dataset", ds.string(), "--snapshot", opt, "--mode", "retrieval",
                     "--fixtures", data_path("retrieval_opt_fixtures.jsonl").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("lost-7"), std::string::npos);
}

TEST_F(Cli, EvalEndToEnd) {
  const auto traces = dir / "traces.jsonl";
  const CliRun r = run({"eval", "--dataset", data_path("e2e_dataset.jsonl").string(), "--snapshot", docs,
                     "--mode", "e2e", "--fixtures", data_path("e2e_fixtures.jsonl").string(),
                     "--traces", traces.string(), "--json", "--parallelism", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["accuracy"], 0.75);
  EXPECT_EQ(j["routing"]["lqp"], 12);
  EXPECT_EQ(j["routing"]["hqp"], 8);
  std::istringstream lines(read(traces));
  std::size_t n = 0;
  for (std::string line; std::getline(lines, line);) ++n;
  EXPECT_EQ(n, 20u);
}

TEST_F(Cli, LossCheck) {
  const CliRun ok = run({"loss-check", "--batches", "3", "--oracle-batches", "20"});
  EXPECT_EQ(ok.code, 0) << ok.out << ok.err;
  EXPECT_NE(ok.out.find("ok"), std::string::npos);
  const CliRun bug = run({"loss-check", "--batches", "3", "--oracle-batches", "5", "--inject-gradient-bug"});
  EXPECT_EQ(bug.code, 1);
  EXPECT_NE(bug.out.find("FAIL"), std::string::npos);
  const CliRun one = run({"loss-check", "--sizes", "B=1", "--batches", "3", "--json"});
  ASSERT_EQ(one.code, 0);
  const json j = json::parse(one.out);
  EXPECT_EQ(j["gradient"]["max_abs_error"], 0.0);
  EXPECT_EQ(j["oracle"]["max_abs_error"], 0.0);
}

TEST_F(Cli, ConfigPrecedence) {
  const auto cfg = dir / "cfg.json";
  std::ofstream(cfg) << R"({"k": 2, "tau": 0.5})";
  const CliRun file = run({"retrieve", "--snapshot", docs, "--query", "lqp-first", "--fixtures", scen,
                        "--config", cfg.string(), "--json"});
  ASSERT_EQ(file.code, 0) << file.err;
  const json jf = json::parse(file.out);
  EXPECT_EQ(jf["config"]["k"], 2);
  EXPECT_EQ(jf["config"]["tau"], 0.5);
  EXPECT_EQ(jf["config"]["h"], 0.8);
  const CliRun flag = run({"retrieve", "--snapshot", docs, "--query", "lqp-first", "--fixtures", scen,
                        "--config", cfg.string(), "--k", "4", "--json"});
  EXPECT_EQ(json::parse(flag.out)["config"]["k"], 4);
  EXPECT_EQ(json::parse(flag.out)["result"]["entries"].size(), 4u);

  const auto bad = dir / "bad.json";
  std::ofstream(bad) << R"({"kk": 2})";
  EXPECT_EQ(run({"retrieve", "--snapshot", docs, "--query", "x", "--config", bad.string()}).code, 1);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"retrieve", "--query", "x"}).code, 1);
  EXPECT_EQ(run({"retrieve", "--snapshot", docs, "--fixtures", scen}).code, 1);
  EXPECT_EQ(run({"eval", "--dataset", "x", "--snapshot", docs, "--mode", "bogus"}).code, 1);
  EXPECT_EQ(run({"answer", "--snapshot", docs, "--query", "x", "--threshold", "1.5"}).code, 1);
}

}  // namespace
}  // namespace fineprint
