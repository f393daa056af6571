/**
 * @file agentic_generator.hpp
 * @brief Uncertainty-routed answer generation: Pruner, Judger, Decoupler and
 *        Summarizer over a ModelBackend.
 *
 * run_pipeline executes
 *
 *   retrieve top-k -> prune -> initial answer -> classify
 *     LQP: summarize(pruned documents)
 *     HQP: extract salient -> decouple (<= max_iters) -> summarize(salient, details)
 *
 * and records every backend request and reply in the trace's agent log. The
 * initial answer is measured for uncertainty only; it is never passed to a
 * later request.
 */
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fineprint/config.hpp"
#include "fineprint/error.hpp"
#include "fineprint/model_backend.hpp"
#include "fineprint/vector_index.hpp"

namespace fineprint {

inline constexpr double kDefaultThreshold = 0.8;
inline constexpr int kDefaultPrunerCapacity = 3;
inline constexpr int kDefaultMaxIters = 3;

struct UncertaintyScore {
  double raw_entropy = 0.0;
  // e * raw_entropy, clamped to [0, 1].
  double normalized = 0.0;
  std::size_t token_count = 0;
};

enum class RouteKind { lqp, hqp };

std::string_view to_string(RouteKind kind);

struct RouteDecision {
  RouteKind kind = RouteKind::lqp;
  double threshold = kDefaultThreshold;
  UncertaintyScore score;
};

struct PrunedSet {
  std::vector<DocRef> selected;
  std::size_t n_used = 0;
  std::size_t capacity = 0;
  bool terminated_early = false;
};

struct FineprintIteration {
  int t = 0;
  std::string mined;
  std::string decoupled;
  bool answerable = false;
};

struct AgentEvent {
  std::size_t seq = 0;
  std::string agent;
  std::string kind;
  nlohmann::ordered_json detail;
};

// Ordered event record. Events carry a sequence number rather than wall-clock
// time so that identical runs produce identical logs.
class AgentLog {
 public:
  void add(std::string agent, std::string kind, nlohmann::ordered_json detail = {});
  // Logs the request, calls the backend, logs the reply.
  GenerationResult call(ModelBackend& backend, const std::string& agent,
                        const GenerationRequest& req);

  const std::vector<AgentEvent>& events() const noexcept { return events_; }
  nlohmann::ordered_json to_json() const;

 private:
  std::vector<AgentEvent> events_;
};

struct AnswerTrace {
  std::string query;
  RankedResult ranked;
  PrunedSet pruned;
  std::optional<std::string> initial_answer;
  std::optional<RouteDecision> route;
  std::optional<std::string> salient;
  std::vector<FineprintIteration> fineprint_iterations;
  std::optional<std::string> final_answer;
  // Set when a stage failed; the trace then has no final answer.
  std::optional<ErrorCode> error_code;
  std::string error_message;
  AgentLog agent_log;
  nlohmann::ordered_json config;

  bool ok() const noexcept { return final_answer.has_value(); }
};

// Average of -p ln p over the token probabilities. Throws EmptySequence or
// ProbabilityOutOfRange.
UncertaintyScore answer_entropy(std::span<const double> token_probs);

// LQP iff normalized < h. Throws InvalidArgument unless 0 < h < 1.
RouteDecision classify(const UncertaintyScore& score, double h);
RouteDecision classify_pair(const GenerationResult& result, double h);

struct PruneOptions {
  // Keep the top-k when a probe fails instead of propagating the error.
  bool fallback_on_probe_failure = false;
};

// Admits ranked documents one at a time (up to k), probing sufficiency after
// each admission and stopping at the first sufficient prefix.
PrunedSet prune(const std::string& query, std::span<const DocRef> ranked, std::size_t k,
                ModelBackend& backend, AgentLog* log = nullptr, PruneOptions options = {});

std::string extract_salient(const std::string& query, const PrunedSet& pruned,
                            ModelBackend& backend, AgentLog* log = nullptr);

// Iteration t mines details from (salient, decoupled_{t-1}) and then decouples
// them from the salient knowledge; stops once the decoupled details can
// answer the query or after max_iters. Completed iterations are appended to
// `out` as they finish, so a failure leaves the partial history in place.
// `docs` (the pruned documents) are given to the mining step when nonempty.
void decouple(const std::string& query, const std::string& salient, ModelBackend& backend,
              int max_iters, std::vector<FineprintIteration>& out,
              std::span<const DocRef> docs = {}, AgentLog* log = nullptr);

std::vector<FineprintIteration> decouple(const std::string& query, const std::string& salient,
                                         ModelBackend& backend, int max_iters,
                                         std::span<const DocRef> docs = {},
                                         AgentLog* log = nullptr);

struct LqpInputs {
  std::vector<DocRef> docs;
};
struct HqpInputs {
  std::string salient;
  std::string fineprint;
};
using SummarizerInputs = std::variant<LqpInputs, HqpInputs>;

// Throws PreconditionViolation when the inputs do not match the route.
std::string summarize(const std::string& query, RouteKind route,
                      const SummarizerInputs& inputs, ModelBackend& backend,
                      AgentLog* log = nullptr);

// Text after an "ANSWER:" marker when the reply has one; the trimmed reply
// otherwise.
std::string extract_answer(const std::string& reply);

// Never throws for stage failures: they are recorded in the returned trace.
AnswerTrace run_pipeline(const std::string& query, const Pool& pool, const RunConfig& config,
                         ModelBackend& backend);

nlohmann::ordered_json to_json(const AnswerTrace& trace);

}  // namespace fineprint
