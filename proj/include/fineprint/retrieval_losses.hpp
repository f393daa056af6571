/**
 * @file retrieval_losses.hpp
 * @brief In-batch contrastive objectives for masked query/document alignment,
 *        their analytic gradients, and a central-difference gradient check.
 *
 * For a batch of B aligned (query, positive) pairs, with pair j carrying a
 * hybrid mask M_j and submasks M_j^1..M_j^N:
 *
 *   dense  = 1/B sum_j 1/2 [ CE_j(q_j -> {d_i * M_j}) + CE_j(d_j * M_j -> {q_i}) ]
 *   sparse = 1/B sum_j 1/N sum_p CE_j(q_j -> {d_i * M_j^p})
 *   total  = dense + beta * sparse
 *
 * where CE_j is the softmax cross entropy of cosine similarities scaled by
 * 1/tau with target index j. The anchor pair's mask is applied to every
 * candidate document. A masked vector that is entirely zero has similarity 0
 * (and zero gradient) and is counted in LossReport::zero_similarity_count.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fineprint/embedding_math.hpp"

namespace fineprint {

inline constexpr double kDefaultTau = 0.01;
inline constexpr double kDefaultBeta = 1.0;
inline constexpr int kDefaultSubmasks = 2;

struct Batch {
  std::vector<Embedding> queries;
  std::vector<Embedding> positives;
  std::vector<HybridMask> masks;
  std::vector<SubmaskSet> submask_sets;

  std::size_t size() const noexcept { return queries.size(); }
  std::size_t dim() const noexcept {
    return queries.empty() ? 0 : queries.front().dim();
  }
  // Throws on ragged lists, mixed dimensions or unequal submask counts.
  void validate() const;
};

// Derives each pair's hybrid mask from its own correlation and partitions it
// with a per-pair seed derived from `seed`.
Batch make_batch(std::vector<Embedding> queries, std::vector<Embedding> positives,
                 double alpha = kDefaultAlpha, int n_submasks = kDefaultSubmasks,
                 std::uint64_t seed = 0, double eps = kDefaultEps);

struct LossReport {
  double l_in = 0.0;
  double l_din = 0.0;
  double l_sin = 0.0;
  double total = 0.0;
  double beta = kDefaultBeta;
  double tau = kDefaultTau;
  std::size_t zero_similarity_count = 0;
};

struct BatchGradients {
  std::vector<std::vector<double>> queries;
  std::vector<std::vector<double>> positives;
};

// Throws ZeroVector / DimensionMismatch.
double cosine_sim(const Embedding& a, const Embedding& b);

// -log softmax over cos(anchor, candidate_i)/tau at the aligned index.
double info_nce(std::size_t anchor_index, std::span<const Embedding> anchors,
                std::span<const Embedding> candidates, double tau);

double dense_loss(const Batch& batch, double tau);
double sparse_loss(const Batch& batch, double tau);
LossReport total_loss(const Batch& batch, double tau, double beta);

// Gradient of total_loss with respect to every query and positive embedding.
// Masks are constants.
BatchGradients loss_gradients(const Batch& batch, double tau, double beta);

using GradientFn =
    std::function<BatchGradients(const Batch&, double tau, double beta)>;

struct GradientCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t coordinates = 0;
  // Location of the worst coordinate.
  bool worst_is_query = true;
  std::size_t worst_pair = 0;
  std::size_t worst_coord = 0;
};

// Relative error per coordinate is |g - n| / max(|g|, |n|, floor) with
// floor = kGradientCheckFloor * max(1, max_i |n_i|), so coordinates whose
// gradient is negligible against the batch's gradient scale are compared on
// that scale rather than against their own magnitude.
inline constexpr double kGradientCheckFloor = 1e-6;

GradientCheckReport finite_difference_report(const Batch& batch, double tau,
                                             double beta, double step,
                                             const GradientFn& gradient);

// Worst relative discrepancy between loss_gradients and central differences.
double finite_difference_check(const Batch& batch, double tau, double beta,
                               double step);

}  // namespace fineprint
