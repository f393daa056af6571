#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "fineprint/vector_index.hpp"

namespace fineprint {

enum class PoolMode { single, all };

PoolMode parse_pool_mode(const std::string& s);
std::string to_string(PoolMode mode);

struct BackendSettings {
  // "mock" or "http".
  std::string kind = "mock";
  std::string fixtures;
  bool strict = true;
  std::string base_url = "http://localhost:8000/v1";
  std::string model;
  std::string embedding_model;
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_s = 60.0;
  int retries = 2;
  // Optional transcript to replay instead of the network.
  std::string replay;
};

inline BackendSettings inherit_backend() {
  BackendSettings b;
  b.kind.clear();
  return b;
}

struct RunConfig {
  double tau = 0.01;
  double alpha = 0.5;
  double beta = 1.0;
  int n_submasks = 2;
  double h = 0.8;
  int k = 3;
  int max_iters = 3;
  int parallelism = 1;
  ScoringMode scoring_mode = ScoringMode::cosine;
  PoolMode pool_mode = PoolMode::single;
  std::uint64_t seed = 0;
  bool skip_on_error = false;
  // Pruner keeps the top-k when a sufficiency probe fails instead of failing.
  bool fallback_on_probe_failure = false;
  BackendSettings backend;
  // Judge backend; kind "" means reuse `backend`.
  BackendSettings judge = inherit_backend();

  // Throws InvalidArgument on out-of-range values.
  void validate() const;
};

// Overlays keys present in `j` onto `base`; unknown keys are rejected.
RunConfig apply_config_json(RunConfig base, const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
nlohmann::ordered_json to_json(const RunConfig& config);

}  // namespace fineprint
