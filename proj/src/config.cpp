#include "fineprint/config.hpp"

#include <fstream>
#include <set>

#include "fineprint/error.hpp"

namespace fineprint {
namespace {

using nlohmann::json;

void check(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::invalid_argument, "config: " + what);
}

BackendSettings apply_backend(BackendSettings b, const json& j, const std::string& where) {
  static const std::set<std::string> kKeys = {"kind",  "fixtures", "strict",      "base_url",
                                              "model", "embedding_model", "api_key_env",
                                              "timeout_s", "retries", "replay"};
  check(j.is_object(), where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    check(kKeys.count(k) == 1, "unknown key " + where + "." + k);
  }
  b.kind = j.value("kind", b.kind);
  b.fixtures = j.value("fixtures", b.fixtures);
  b.strict = j.value("strict", b.strict);
  b.base_url = j.value("base_url", b.base_url);
  b.model = j.value("model", b.model);
  b.embedding_model = j.value("embedding_model", b.embedding_model);
  b.api_key_env = j.value("api_key_env", b.api_key_env);
  b.timeout_s = j.value("timeout_s", b.timeout_s);
  b.retries = j.value("retries", b.retries);
  b.replay = j.value("replay", b.replay);
  return b;
}

nlohmann::ordered_json backend_json(const BackendSettings& b) {
  nlohmann::ordered_json j;
  j["kind"] = b.kind;
  if (b.kind == "mock") {
    j["fixtures"] = b.fixtures;
    j["strict"] = b.strict;
  } else if (b.kind == "http") {
    j["base_url"] = b.base_url;
    j["model"] = b.model;
    j["embedding_model"] = b.embedding_model;
    j["api_key_env"] = b.api_key_env;
    j["timeout_s"] = b.timeout_s;
    j["retries"] = b.retries;
    if (!b.replay.empty()) j["replay"] = b.replay;
  }
  return j;
}

}  // namespace

PoolMode parse_pool_mode(const std::string& s) {
  if (s == "single") return PoolMode::single;
  if (s == "all") return PoolMode::all;
  throw Error(ErrorCode::invalid_argument, "unknown pool mode \"" + s + "\"");
}

std::string to_string(PoolMode mode) { return mode == PoolMode::all ? "all" : "single"; }

void RunConfig::validate() const {
  check(tau > 0.0, "tau must be positive");
  check(alpha > 0.0, "alpha must be positive");
  check(beta >= 0.0, "beta must be non-negative");
  check(n_submasks >= 1, "n_submasks must be at least 1");
  check(h > 0.0 && h < 1.0, "h must lie in (0, 1)");
  check(k >= 1, "k must be at least 1");
  check(max_iters >= 1, "max_iters must be at least 1");
  check(parallelism >= 1, "parallelism must be at least 1");
  for (const auto* b : {&backend, &judge}) {
    check(b->kind.empty() || b->kind == "mock" || b->kind == "http",
          "backend kind must be mock or http, got \"" + b->kind + "\"");
    check(b->retries >= 0, "retries must be non-negative");
    check(b->timeout_s > 0.0, "timeout_s must be positive");
  }
  check(!backend.kind.empty(), "answer backend kind is required");
}

RunConfig apply_config_json(RunConfig c, const json& j) {
  static const std::set<std::string> kKeys = {
      "tau",         "alpha",       "beta",    "n_submasks",    "h",
      "k",           "max_iters",   "parallelism", "scoring_mode", "pool_mode",
      "seed",        "skip_on_error", "fallback_on_probe_failure", "backend", "judge"};
  check(j.is_object(), "top level must be an object");
  for (const auto& [k, v] : j.items()) check(kKeys.count(k) == 1, "unknown key " + k);
  try {
    c.tau = j.value("tau", c.tau);
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.n_submasks = j.value("n_submasks", c.n_submasks);
    c.h = j.value("h", c.h);
    c.k = j.value("k", c.k);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.parallelism = j.value("parallelism", c.parallelism);
    if (j.contains("scoring_mode")) c.scoring_mode = parse_scoring_mode(j["scoring_mode"]);
    if (j.contains("pool_mode")) c.pool_mode = parse_pool_mode(j["pool_mode"]);
    c.seed = j.value("seed", c.seed);
    c.skip_on_error = j.value("skip_on_error", c.skip_on_error);
    c.fallback_on_probe_failure =
        j.value("fallback_on_probe_failure", c.fallback_on_probe_failure);
    if (j.contains("backend")) c.backend = apply_backend(c.backend, j["backend"], "backend");
    if (j.contains("judge")) {
      c.judge = apply_backend(c.judge, j["judge"], "judge");
      if (c.judge.kind.empty()) c.judge.kind = c.backend.kind;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_argument, std::string("config: ") + e.what());
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open config " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    throw Error(ErrorCode::parse_error, path.string() + " is not valid JSON");
  }
  return apply_config_json(std::move(base), j);
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["tau"] = c.tau;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["n_submasks"] = c.n_submasks;
  j["h"] = c.h;
  j["k"] = c.k;
  j["max_iters"] = c.max_iters;
  j["parallelism"] = c.parallelism;
  j["scoring_mode"] = to_string(c.scoring_mode);
  j["pool_mode"] = to_string(c.pool_mode);
  j["seed"] = c.seed;
  j["skip_on_error"] = c.skip_on_error;
  j["fallback_on_probe_failure"] = c.fallback_on_probe_failure;
  j["backend"] = backend_json(c.backend);
  j["judge"] = c.judge.kind.empty() ? nlohmann::ordered_json("same as backend")
                                    : backend_json(c.judge);
  return j;
}

}  // namespace fineprint
