// Randomized self-checks for the contrastive losses: agreement with a naive
// direct-formula evaluation and with central differences.
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fineprint/retrieval_losses.hpp"

namespace fineprint::check {

struct NaiveLosses {
  double l_in = 0.0;
  double l_din = 0.0;
  double l_sin = 0.0;
  double total = 0.0;
};

// Straight transcription of the loss definitions with no max subtraction and
// no shared code with the library.
NaiveLosses naive_losses(const Batch& batch, double tau, double beta);

// Gaussian queries with positives = query + 0.5 * noise. Coordinates closer
// to zero than 0.05 are redrawn so that no masked vector sits near the
// sign-flip discontinuity of a one-coordinate cosine.
Batch random_batch(std::mt19937_64& rng, std::size_t b, std::size_t d, int n_submasks = 2,
                   double alpha = kDefaultAlpha);

struct LossCheckOptions {
  std::uint64_t seed = 0;
  std::vector<std::size_t> oracle_sizes = {1, 2, 3};
  std::vector<std::size_t> oracle_dims = {3, 4, 5, 6, 7, 8};
  std::vector<std::size_t> gradient_sizes = {2, 4, 8};
  std::vector<std::size_t> gradient_dims = {4, 16, 64};
  std::vector<double> taus = {0.01, 0.1, 1.0};
  int oracle_batches = 200;
  int gradient_batches = 50;
  double beta = kDefaultBeta;
  double step = 1e-4;
  double oracle_tolerance = 1e-9;
  double gradient_tolerance = 1e-4;
  // Checks a deliberately wrong gradient to prove the checker can fail.
  bool inject_gradient_bug = false;
};

// "B=2,4,8" sets both size lists, "d=4,16" both dimension lists and
// "tau=0.1" the temperatures; clauses are separated by ';' or spaces.
void apply_sizes(LossCheckOptions& options, const std::string& text);

struct LossCheckResult {
  double oracle_max_abs_error = 0.0;
  double gradient_max_rel_error = 0.0;
  double gradient_max_abs_error = 0.0;
  int oracle_batches = 0;
  int gradient_batches = 0;
  bool oracle_ok = false;
  bool gradient_ok = false;

  bool ok() const noexcept { return oracle_ok && gradient_ok; }
};

LossCheckResult run_loss_check(const LossCheckOptions& options);

// Correct gradients with the positive-side terms scaled by 1.01.
BatchGradients buggy_gradients(const Batch& batch, double tau, double beta);

nlohmann::ordered_json to_json(const LossCheckResult& result, const LossCheckOptions& options);

}  // namespace fineprint::check
