#include "fineprint/agentic_generator.hpp"

#include <cctype>
#include <cmath>
#include <numbers>

namespace fineprint {
namespace {

using ojson = nlohmann::ordered_json;

ojson doc_ids_json(std::span<const DocRef> docs) {
  ojson arr = ojson::array();
  for (const auto& d : docs) arr.push_back(d.pool + "/" + d.doc_id);
  return arr;
}

ojson request_json(const GenerationRequest& req) {
  ojson j;
  j["role"] = to_string(req.role);
  j["iteration"] = req.iteration;
  j["docs"] = doc_ids_json(req.context_docs);
  if (req.salient) j["salient"] = *req.salient;
  if (req.prior) j["prior"] = *req.prior;
  if (req.prediction) j["prediction"] = *req.prediction;
  if (req.gold) j["gold"] = *req.gold;
  return j;
}

SufficiencyVerdict logged_probe(AgentLog& log, ModelBackend& backend, const std::string& agent,
                                const GenerationRequest& req) {
  const GenerationResult r = log.call(backend, agent, req);
  try {
    SufficiencyVerdict v = parse_verdict(r.text);
    log.add(agent, "verdict", ojson{{"sufficient", v.sufficient}, {"rationale", v.rationale}});
    return v;
  } catch (const Error& e) {
    log.add(agent, "error", ojson{{"code", to_string(e.code())}, {"message", e.what()}});
    throw;
  }
}

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

ojson route_json(const RouteDecision& r) {
  ojson j;
  j["kind"] = to_string(r.kind);
  j["threshold"] = r.threshold;
  j["raw_entropy"] = r.score.raw_entropy;
  j["normalized"] = r.score.normalized;
  j["token_count"] = r.score.token_count;
  return j;
}

}  // namespace

std::string_view to_string(RouteKind kind) { return kind == RouteKind::lqp ? "LQP" : "HQP"; }

void AgentLog::add(std::string agent, std::string kind, ojson detail) {
  events_.push_back({events_.size(), std::move(agent), std::move(kind), std::move(detail)});
}

GenerationResult AgentLog::call(ModelBackend& backend, const std::string& agent,
                                const GenerationRequest& req) {
  add(agent, "request", request_json(req));
  try {
    GenerationResult r = backend.generate(req);
    validate_result(r);
    ojson reply;
    reply["role"] = to_string(req.role);
    reply["text"] = r.text;
    reply["token_probs"] = r.token_probs;
    reply["finish_reason"] = to_string(r.finish_reason);
    add(agent, "reply", std::move(reply));
    return r;
  } catch (const Error& e) {
    add(agent, "error",
        ojson{{"role", to_string(req.role)}, {"code", to_string(e.code())}, {"message", e.what()}});
    throw;
  }
}

ojson AgentLog::to_json() const {
  ojson arr = ojson::array();
  for (const auto& e : events_) {
    ojson j;
    j["seq"] = e.seq;
    j["agent"] = e.agent;
    j["kind"] = e.kind;
    j["detail"] = e.detail.is_null() ? ojson::object() : e.detail;
    arr.push_back(std::move(j));
  }
  return arr;
}

UncertaintyScore answer_entropy(std::span<const double> token_probs) {
  if (token_probs.empty()) {
    throw Error(ErrorCode::empty_sequence, "answer has no token probabilities");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < token_probs.size(); ++i) {
    const double p = token_probs[i];
    if (!(p > 0.0 && p <= 1.0)) {
      throw Error(ErrorCode::probability_out_of_range,
                  "token " + std::to_string(i) + " has probability " + std::to_string(p));
    }
    acc -= p * std::log(p);
  }
  UncertaintyScore s;
  s.token_count = token_probs.size();
  s.raw_entropy = acc / static_cast<double>(token_probs.size());
  s.normalized = std::clamp(std::numbers::e * s.raw_entropy, 0.0, 1.0);
  return s;
}

RouteDecision classify(const UncertaintyScore& score, double h) {
  if (!(h > 0.0 && h < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "threshold h must lie in (0, 1)");
  }
  return {score.normalized < h ? RouteKind::lqp : RouteKind::hqp, h, score};
}

RouteDecision classify_pair(const GenerationResult& result, double h) {
  return classify(answer_entropy(result.token_probs), h);
}

PrunedSet prune(const std::string& query, std::span<const DocRef> ranked, std::size_t k,
                ModelBackend& backend, AgentLog* log, PruneOptions options) {
  if (ranked.empty()) throw Error(ErrorCode::precondition_violation, "nothing to prune");
  if (k < 1) throw Error(ErrorCode::invalid_argument, "pruner capacity must be at least 1");
  AgentLog scratch;
  AgentLog& L = log != nullptr ? *log : scratch;

  PrunedSet out;
  out.capacity = k;
  const std::size_t limit = std::min(k, ranked.size());
  for (std::size_t n = 1; n <= limit; ++n) {
    out.selected.push_back(ranked[n - 1]);
    GenerationRequest req;
    req.role = PromptRole::sufficiency_probe;
    req.query = query;
    req.context_docs = out.selected;
    req.max_tokens = 64;
    try {
      if (logged_probe(L, backend, "pruner", req).sufficient) {
        out.n_used = n;
        out.terminated_early = true;
        return out;
      }
    } catch (const Error&) {
      if (!options.fallback_on_probe_failure) throw;
      out.selected.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(limit));
      L.add("pruner", "fallback", ojson{{"n_used", limit}});
      break;
    }
  }
  out.n_used = out.selected.size();
  out.terminated_early = false;
  return out;
}

std::string extract_salient(const std::string& query, const PrunedSet& pruned,
                            ModelBackend& backend, AgentLog* log) {
  if (pruned.selected.empty()) {
    throw Error(ErrorCode::precondition_violation, "salient extraction needs documents");
  }
  AgentLog scratch;
  GenerationRequest req;
  req.role = PromptRole::salient_extract;
  req.query = query;
  req.context_docs = pruned.selected;
  return (log != nullptr ? *log : scratch).call(backend, "decoupler", req).text;
}

void decouple(const std::string& query, const std::string& salient, ModelBackend& backend,
              int max_iters, std::vector<FineprintIteration>& out, std::span<const DocRef> docs,
              AgentLog* log) {
  if (max_iters < 1) throw Error(ErrorCode::precondition_violation, "max_iters must be >= 1");
  if (salient.empty()) throw Error(ErrorCode::precondition_violation, "salient knowledge is empty");
  AgentLog scratch;
  AgentLog& L = log != nullptr ? *log : scratch;

  std::optional<std::string> previous;
  for (int t = 1; t <= max_iters; ++t) {
    GenerationRequest mine;
    mine.role = PromptRole::fineprint_mine;
    mine.query = query;
    mine.context_docs.assign(docs.begin(), docs.end());
    mine.salient = salient;
    mine.prior = previous;
    mine.iteration = t;
    FineprintIteration it;
    it.t = t;
    it.mined = L.call(backend, "decoupler", mine).text;

    GenerationRequest split;
    split.role = PromptRole::decouple;
    split.query = query;
    split.salient = salient;
    split.prior = it.mined;
    split.iteration = t;
    it.decoupled = L.call(backend, "decoupler", split).text;

    GenerationRequest probe;
    probe.role = PromptRole::sufficiency_probe;
    probe.query = query;
    probe.prior = it.decoupled;
    probe.iteration = t;
    probe.max_tokens = 64;
    // Record the finished mining step before the probe can fail.
    out.push_back(it);
    out.back().answerable = logged_probe(L, backend, "decoupler", probe).sufficient;
    if (out.back().answerable) return;
    previous = out.back().decoupled;
  }
}

std::vector<FineprintIteration> decouple(const std::string& query, const std::string& salient,
                                         ModelBackend& backend, int max_iters,
                                         std::span<const DocRef> docs, AgentLog* log) {
  std::vector<FineprintIteration> out;
  decouple(query, salient, backend, max_iters, out, docs, log);
  return out;
}

std::string summarize(const std::string& query, RouteKind route, const SummarizerInputs& inputs,
                      ModelBackend& backend, AgentLog* log) {
  GenerationRequest req;
  req.role = PromptRole::summarize;
  req.query = query;
  if (route == RouteKind::lqp) {
    const auto* lqp = std::get_if<LqpInputs>(&inputs);
    if (lqp == nullptr) {
      throw Error(ErrorCode::precondition_violation, "LQP summary needs the pruned documents");
    }
    if (lqp->docs.empty()) throw Error(ErrorCode::precondition_violation, "no documents");
    req.context_docs = lqp->docs;
  } else {
    const auto* hqp = std::get_if<HqpInputs>(&inputs);
    if (hqp == nullptr) {
      throw Error(ErrorCode::precondition_violation,
                  "HQP summary needs salient and fine-print knowledge");
    }
    req.salient = hqp->salient;
    req.prior = hqp->fineprint;
  }
  AgentLog scratch;
  return (log != nullptr ? *log : scratch).call(backend, "summarizer", req).text;
}

std::string extract_answer(const std::string& reply) {
  std::string upper(reply);
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  constexpr std::string_view kMarker = "ANSWER:";
  std::size_t pos = 0;
  while ((pos = upper.find(kMarker, pos)) != std::string::npos) {
    if (pos == 0 || upper[pos - 1] == '\n') return trim(reply.substr(pos + kMarker.size()));
    pos += kMarker.size();
  }
  return trim(reply);
}

AnswerTrace run_pipeline(const std::string& query, const Pool& pool, const RunConfig& config,
                         ModelBackend& backend) {
  AnswerTrace trace;
  trace.query = query;
  trace.config = to_json(config);
  AgentLog& log = trace.agent_log;
  try {
    config.validate();
    if (pool.empty()) throw Error(ErrorCode::precondition_violation, "pool is empty");

    const Embedding q = backend.embed_query(query);
    ScoringOptions scoring;
    scoring.mode = config.scoring_mode;
    scoring.alpha = config.alpha;
    trace.ranked = top_k(pool, q, static_cast<std::size_t>(config.k), scoring);
    log.add("retriever", "ranked", to_json(trace.ranked));

    std::vector<DocRef> docs;
    for (const auto& e : trace.ranked.entries) {
      docs.push_back(doc_ref_from(*pool.find(e.key())));
    }
    trace.pruned = prune(query, docs, static_cast<std::size_t>(config.k), backend, &log,
                         {config.fallback_on_probe_failure});
    log.add("pruner", "selected",
            ojson{{"docs", doc_ids_json(trace.pruned.selected)},
                  {"n_used", trace.pruned.n_used},
                  {"terminated_early", trace.pruned.terminated_early}});

    GenerationRequest initial;
    initial.role = PromptRole::answer;
    initial.query = query;
    initial.context_docs = trace.pruned.selected;
    const GenerationResult first = log.call(backend, "judger", initial);
    trace.initial_answer = first.text;
    trace.route = classify_pair(first, config.h);
    log.add("judger", "route", route_json(*trace.route));

    std::string reply;
    if (trace.route->kind == RouteKind::lqp) {
      reply = summarize(query, RouteKind::lqp, LqpInputs{trace.pruned.selected}, backend, &log);
    } else {
      trace.salient = extract_salient(query, trace.pruned, backend, &log);
      decouple(query, *trace.salient, backend, config.max_iters, trace.fineprint_iterations,
               trace.pruned.selected, &log);
      reply = summarize(query, RouteKind::hqp,
                        HqpInputs{*trace.salient, trace.fineprint_iterations.back().decoupled},
                        backend, &log);
    }
    trace.final_answer = extract_answer(reply);
    log.add("summarizer", "final", ojson{{"answer", *trace.final_answer}});
  } catch (const Error& e) {
    trace.final_answer.reset();
    trace.error_code = e.code();
    trace.error_message = e.what();
    log.add("pipeline", "failed", ojson{{"code", to_string(e.code())}, {"message", e.what()}});
  }
  return trace;
}

ojson to_json(const AnswerTrace& t) {
  ojson j;
  j["query"] = t.query;
  j["status"] = t.ok() ? "ok" : "error";
  j["config"] = t.config;
  j["ranked"] = to_json(t.ranked);
  ojson pruned;
  pruned["selected"] = doc_ids_json(t.pruned.selected);
  pruned["n_used"] = t.pruned.n_used;
  pruned["capacity"] = t.pruned.capacity;
  pruned["terminated_early"] = t.pruned.terminated_early;
  j["pruned"] = std::move(pruned);
  j["initial_answer"] = t.initial_answer ? ojson(*t.initial_answer) : ojson();
  j["route"] = t.route ? route_json(*t.route) : ojson();
  j["salient"] = t.salient ? ojson(*t.salient) : ojson();
  ojson iters = ojson::array();
  for (const auto& it : t.fineprint_iterations) {
    ojson x;
    x["t"] = it.t;
    x["mined"] = it.mined;
    x["decoupled"] = it.decoupled;
    x["answerable"] = it.answerable;
    iters.push_back(std::move(x));
  }
  j["fineprint_iterations"] = std::move(iters);
  j["final_answer"] = t.final_answer ? ojson(*t.final_answer) : ojson();
  if (t.error_code) {
    j["error"] = ojson{{"code", to_string(*t.error_code)}, {"message", t.error_message}};
  } else {
    j["error"] = ojson();
  }
  j["agent_log"] = t.agent_log.to_json();
  return j;
}

}  // namespace fineprint
