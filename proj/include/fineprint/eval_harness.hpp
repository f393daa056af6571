/**
 * @file eval_harness.hpp
 * @brief nDCG@5 retrieval evaluation, judge-scored answer accuracy, and the
 *        single-pool / all-pool experiment runners.
 *
 * Dataset files are JSON lines:
 *
 *   {"query_id": "q1", "query": "...", "gold_doc_ids": [{"pool": "p", "doc_id": "d"}],
 *    "gold_answer": "...", "requires_multihop": false}
 *
 * An optional "pool" names the pool searched in single-pool mode; it defaults
 * to the pool of the first gold document.
 */
#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fineprint/agentic_generator.hpp"
#include "fineprint/config.hpp"
#include "fineprint/model_backend.hpp"
#include "fineprint/vector_index.hpp"

namespace fineprint {

inline constexpr std::size_t kNdcgCutoff = 5;

struct QaExample {
  std::string query_id;
  std::string query;
  std::vector<DocKey> gold_doc_ids;
  std::string gold_answer;
  bool requires_multihop = false;
  std::optional<std::string> pool;

  std::string search_pool() const;
};

std::vector<QaExample> load_dataset(const std::filesystem::path& path);
QaExample parse_example(const std::string& line, std::size_t line_no);

// Binary-gain nDCG over the top k of `ranked`; 0 when `relevant` is empty.
double ndcg_at_k(std::span<const DocKey> ranked, const std::set<DocKey>& relevant,
                 std::size_t k = kNdcgCutoff);

// Score on the final non-empty line; accepts only a bare integer 1-5.
int parse_judge_score(std::string_view reply);

struct JudgeOutcome {
  int score = 0;
  bool correct = false;
};

// Asks the judge backend once and, on an unparseable reply, once more.
JudgeOutcome judge_accuracy(const std::string& query, const std::string& prediction,
                            const std::string& gold, ModelBackend& judge);

struct ExampleResult {
  std::string query_id;
  std::optional<double> ndcg5;
  std::optional<int> judge_score;
  std::optional<bool> correct;
  std::optional<RouteKind> route;
  std::optional<std::size_t> decoupler_iterations;
  std::optional<std::string> prediction;
  std::optional<std::string> error;
};

struct RoutingStats {
  std::size_t lqp = 0;
  std::size_t hqp = 0;
  std::size_t failed = 0;
  double mean_decoupler_iterations = 0.0;
};

struct EvalReport {
  std::string mode;
  PoolMode pool_mode = PoolMode::single;
  std::vector<ExampleResult> per_example;
  std::optional<double> mean_ndcg5;
  // Fraction of judged examples scoring 4 or 5.
  std::optional<double> accuracy;
  std::size_t judged = 0;
  std::optional<RoutingStats> routing;
  nlohmann::ordered_json config;
};

// Every gold document must exist in one of `pools`; throws MissingGoldDocument
// naming the query otherwise.
void check_gold_coverage(std::span<const QaExample> dataset, std::span<const Pool> pools);

// Selects the searched pool for an example: the merged pool in all-pool mode,
// the example's own pool otherwise.
const Pool& pool_for(const QaExample& example, PoolMode mode, std::span<const Pool> pools,
                     const Pool& merged);

EvalReport evaluate_retrieval(std::span<const QaExample> dataset, PoolMode mode,
                              std::span<const Pool> pools, ModelBackend& embedder,
                              const RunConfig& config = {});

// Runs the pipeline per example (up to config.parallelism concurrently),
// judges each answer, and aggregates accuracy and routing statistics. Failed
// examples abort the run unless config.skip_on_error, in which case they are
// reported and left out of the accuracy. `traces`, when given, receives the
// pipeline traces in query_id order.
EvalReport evaluate_e2e(std::span<const QaExample> dataset, std::span<const Pool> pools,
                        const RunConfig& config, ModelBackend& answerer, ModelBackend& judge,
                        std::vector<AnswerTrace>* traces = nullptr);

nlohmann::ordered_json to_json(const EvalReport& report);
std::string format_table(const EvalReport& report);

}  // namespace fineprint
