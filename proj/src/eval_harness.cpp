#include "fineprint/eval_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "fineprint/error.hpp"

namespace fineprint {
namespace {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string at_line(std::size_t line_no, const std::string& what) {
  return "dataset line " + std::to_string(line_no) + ": " + what;
}

// Runs fn(i) for i in [0, n) on up to `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
}

std::vector<std::size_t> by_query_id(std::span<const QaExample> dataset) {
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dataset[a].query_id < dataset[b].query_id;
  });
  return order;
}

}  // namespace

std::string QaExample::search_pool() const {
  if (pool) return *pool;
  return gold_doc_ids.empty() ? std::string() : gold_doc_ids.front().pool;
}

QaExample parse_example(const std::string& line, std::size_t line_no) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(ErrorCode::parse_error, at_line(line_no, "not a JSON object"));
  }
  QaExample ex;
  try {
    ex.query_id = j.at("query_id").get<std::string>();
    ex.query = j.at("query").get<std::string>();
    for (const auto& g : j.at("gold_doc_ids")) {
      ex.gold_doc_ids.push_back({g.at("pool").get<std::string>(), g.at("doc_id").get<std::string>()});
    }
    ex.gold_answer = j.value("gold_answer", "");
    ex.requires_multihop = j.value("requires_multihop", false);
    if (j.contains("pool")) ex.pool = j["pool"].get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, at_line(line_no, e.what()));
  }
  if (ex.query_id.empty()) throw Error(ErrorCode::parse_error, at_line(line_no, "empty query_id"));
  if (ex.gold_doc_ids.empty()) {
    throw Error(ErrorCode::parse_error, at_line(line_no, "gold_doc_ids must be nonempty"));
  }
  return ex;
}

std::vector<QaExample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open dataset " + path.string());
  std::vector<QaExample> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_example(line, line_no));
    if (!ids.insert(out.back().query_id).second) {
      throw Error(ErrorCode::duplicate_id,
                  at_line(line_no, "duplicate query_id " + out.back().query_id));
    }
  }
  return out;
}

double ndcg_at_k(std::span<const DocKey> ranked, const std::set<DocKey>& relevant,
                 std::size_t k) {
  if (k < 1) throw Error(ErrorCode::invalid_argument, "k must be at least 1");
  if (relevant.empty()) return 0.0;
  double dcg = 0.0;
  const std::size_t n = std::min(k, ranked.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (relevant.count(ranked[i]) != 0) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  double ideal = 0.0;
  const std::size_t m = std::min(k, relevant.size());
  for (std::size_t i = 0; i < m; ++i) ideal += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return dcg / ideal;
}

int parse_judge_score(std::string_view reply) {
  std::string_view last;
  std::size_t start = 0;
  while (start <= reply.size()) {
    std::size_t end = reply.find('\n', start);
    if (end == std::string_view::npos) end = reply.size();
    std::string_view ln = reply.substr(start, end - start);
    while (!ln.empty() && std::isspace(static_cast<unsigned char>(ln.front()))) ln.remove_prefix(1);
    while (!ln.empty() && std::isspace(static_cast<unsigned char>(ln.back()))) ln.remove_suffix(1);
    if (!ln.empty()) last = ln;
    start = end + 1;
  }
  if (last.size() == 1 && last[0] >= '1' && last[0] <= '5') return last[0] - '0';
  throw Error(ErrorCode::unparseable_score,
              "final line must be a bare integer 1-5, got \"" + std::string(last) + "\"");
}

JudgeOutcome judge_accuracy(const std::string& query, const std::string& prediction,
                            const std::string& gold, ModelBackend& judge) {
  GenerationRequest req;
  req.role = PromptRole::judge_score;
  req.query = query;
  req.prediction = prediction;
  req.gold = gold;
  req.max_tokens = 128;
  for (int attempt = 0;; ++attempt) {
    req.iteration = attempt;
    const GenerationResult r = judge.generate(req);
    try {
      const int score = parse_judge_score(r.text);
      return {score, score >= 4};
    } catch (const Error&) {
      if (attempt >= 1) throw;
    }
  }
}

void check_gold_coverage(std::span<const QaExample> dataset, std::span<const Pool> pools) {
  for (const auto& ex : dataset) {
    for (const auto& g : ex.gold_doc_ids) {
      const bool found = std::any_of(pools.begin(), pools.end(),
                                     [&](const Pool& p) { return p.find(g) != nullptr; });
      if (!found) {
        throw Error(ErrorCode::missing_gold_document,
                    ex.query_id + ": gold document " + g.pool + "/" + g.doc_id +
                        " is not in any loaded pool");
      }
    }
  }
}

const Pool& pool_for(const QaExample& example, PoolMode mode, std::span<const Pool> pools,
                     const Pool& merged) {
  if (mode == PoolMode::all) return merged;
  const std::string name = example.search_pool();
  for (const auto& p : pools) {
    if (p.name == name) return p;
  }
  throw Error(ErrorCode::missing_gold_document,
              example.query_id + ": no loaded pool named \"" + name + "\"");
}

EvalReport evaluate_retrieval(std::span<const QaExample> dataset, PoolMode mode,
                              std::span<const Pool> pools, ModelBackend& embedder,
                              const RunConfig& config) {
  check_gold_coverage(dataset, pools);
  const Pool merged = mode == PoolMode::all ? merge_pools({pools.begin(), pools.end()}) : Pool{};
  ScoringOptions scoring;
  scoring.mode = config.scoring_mode;
  scoring.alpha = config.alpha;

  EvalReport report;
  report.mode = "retrieval";
  report.pool_mode = mode;
  report.config = to_json(config);
  report.config["pool_mode"] = to_string(mode);
  double total = 0.0;
  for (std::size_t idx : by_query_id(dataset)) {
    const QaExample& ex = dataset[idx];
    const Pool& pool = pool_for(ex, mode, pools, merged);
    const RankedResult ranked = top_k(pool, embedder.embed_query(ex.query), kNdcgCutoff, scoring);
    std::vector<DocKey> keys;
    for (const auto& e : ranked.entries) keys.push_back(e.key());
    const std::set<DocKey> gold(ex.gold_doc_ids.begin(), ex.gold_doc_ids.end());
    ExampleResult r;
    r.query_id = ex.query_id;
    r.ndcg5 = ndcg_at_k(keys, gold, kNdcgCutoff);
    total += *r.ndcg5;
    report.per_example.push_back(std::move(r));
  }
  if (!dataset.empty()) report.mean_ndcg5 = total / static_cast<double>(dataset.size());
  return report;
}

EvalReport evaluate_e2e(std::span<const QaExample> dataset, std::span<const Pool> pools,
                        const RunConfig& config, ModelBackend& answerer, ModelBackend& judge,
                        std::vector<AnswerTrace>* traces) {
  config.validate();
  check_gold_coverage(dataset, pools);
  const Pool merged =
      config.pool_mode == PoolMode::all ? merge_pools({pools.begin(), pools.end()}) : Pool{};

  struct Slot {
    AnswerTrace trace;
    ExampleResult result;
    std::optional<ErrorCode> code;
  };
  std::vector<Slot> slots(dataset.size());

  parallel_for(dataset.size(), config.parallelism, [&](std::size_t i) {
    const QaExample& ex = dataset[i];
    Slot& s = slots[i];
    s.result.query_id = ex.query_id;
    try {
      const Pool& pool = pool_for(ex, config.pool_mode, pools, merged);
      s.trace = run_pipeline(ex.query, pool, config, answerer);
      if (s.trace.route) s.result.route = s.trace.route->kind;
      s.result.decoupler_iterations = s.trace.fineprint_iterations.size();
      if (!s.trace.ok()) {
        s.code = s.trace.error_code;
        s.result.error = s.trace.error_message;
        return;
      }
      s.result.prediction = *s.trace.final_answer;
      const JudgeOutcome j = judge_accuracy(ex.query, *s.trace.final_answer, ex.gold_answer, judge);
      s.result.judge_score = j.score;
      s.result.correct = j.correct;
    } catch (const Error& e) {
      s.code = e.code();
      s.result.error = e.what();
    }
  });

  EvalReport report;
  report.mode = "e2e";
  report.pool_mode = config.pool_mode;
  report.config = to_json(config);
  RoutingStats stats;
  std::size_t correct = 0;
  std::size_t iterations = 0;
  std::size_t routed = 0;
  for (std::size_t idx : by_query_id(dataset)) {
    Slot& s = slots[idx];
    if (s.result.error && !config.skip_on_error) {
      throw Error(s.code.value_or(ErrorCode::backend_unavailable),
                  s.result.query_id + ": " + *s.result.error);
    }
    if (s.result.route) {
      ++routed;
      (*s.result.route == RouteKind::lqp ? stats.lqp : stats.hqp) += 1;
      iterations += s.result.decoupler_iterations.value_or(0);
    }
    if (s.result.error) {
      ++stats.failed;
    } else {
      ++report.judged;
      if (s.result.correct.value_or(false)) ++correct;
    }
    report.per_example.push_back(s.result);
    if (traces != nullptr) traces->push_back(std::move(s.trace));
  }
  if (report.judged > 0) {
    report.accuracy = static_cast<double>(correct) / static_cast<double>(report.judged);
  }
  if (routed > 0) {
    stats.mean_decoupler_iterations = static_cast<double>(iterations) / static_cast<double>(routed);
  }
  report.routing = stats;
  return report;
}

ojson to_json(const EvalReport& report) {
  ojson j;
  j["mode"] = report.mode;
  j["pool_mode"] = to_string(report.pool_mode);
  j["examples"] = report.per_example.size();
  j["mean_ndcg5"] = report.mean_ndcg5 ? ojson(*report.mean_ndcg5) : ojson();
  j["accuracy"] = report.accuracy ? ojson(*report.accuracy) : ojson();
  j["judged"] = report.judged;
  if (report.routing) {
    ojson r;
    r["lqp"] = report.routing->lqp;
    r["hqp"] = report.routing->hqp;
    r["failed"] = report.routing->failed;
    r["mean_decoupler_iterations"] = report.routing->mean_decoupler_iterations;
    j["routing"] = std::move(r);
  } else {
    j["routing"] = ojson();
  }
  ojson rows = ojson::array();
  for (const auto& e : report.per_example) {
    ojson row;
    row["query_id"] = e.query_id;
    if (e.ndcg5) row["ndcg5"] = *e.ndcg5;
    if (e.route) row["route"] = to_string(*e.route);
    if (e.decoupler_iterations) row["decoupler_iterations"] = *e.decoupler_iterations;
    if (e.prediction) row["prediction"] = *e.prediction;
    if (e.judge_score) row["judge_score"] = *e.judge_score;
    if (e.correct) row["correct"] = *e.correct;
    if (e.error) row["error"] = *e.error;
    rows.push_back(std::move(row));
  }
  j["per_example"] = std::move(rows);
  j["config"] = report.config;
  return j;
}

std::string format_table(const EvalReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  if (report.mode == "retrieval") {
    out << std::left << std::setw(24) << "query_id" << "nDCG@5\n";
    for (const auto& e : report.per_example) {
      out << std::left << std::setw(24) << e.query_id << e.ndcg5.value_or(0.0) << "\n";
    }
    out << "mean nDCG@5 = " << report.mean_ndcg5.value_or(0.0) << " over "
        << report.per_example.size() << " examples (" << to_string(report.pool_mode) << "-pool)\n";
    return out.str();
  }
  out << std::left << std::setw(24) << "query_id" << std::setw(7) << "route" << std::setw(7)
      << "iters" << std::setw(7) << "score" << "result\n";
  for (const auto& e : report.per_example) {
    out << std::left << std::setw(24) << e.query_id << std::setw(7)
        << (e.route ? std::string(to_string(*e.route)) : "-") << std::setw(7)
        << (e.decoupler_iterations ? std::to_string(*e.decoupler_iterations) : "-") << std::setw(7)
        << (e.judge_score ? std::to_string(*e.judge_score) : "-")
        << (e.error ? "error" : (e.correct.value_or(false) ? "correct" : "incorrect")) << "\n";
  }
  out << "accuracy = " << report.accuracy.value_or(0.0) << " (" << report.judged << " judged";
  if (report.routing) {
    out << ", LQP " << report.routing->lqp << ", HQP " << report.routing->hqp << ", failed "
        << report.routing->failed << ", mean decoupler iterations "
        << report.routing->mean_decoupler_iterations;
  }
  out << ")\n";
  return out.str();
}

}  // namespace fineprint
