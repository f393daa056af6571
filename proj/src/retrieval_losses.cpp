#include "fineprint/retrieval_losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fineprint/error.hpp"

namespace fineprint {
namespace {

void require_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw Error(ErrorCode::temperature_non_positive,
                "tau must be positive, got " + std::to_string(tau));
  }
}

// Which batch vector a masked operand comes from. A null mask means unmasked.
struct Operand {
  bool is_query;
  std::size_t index;
  const std::vector<double>* mask;
};

struct Accumulator {
  BatchGradients* grad = nullptr;
  std::size_t zero_count = 0;
};

std::vector<double> materialize(const Batch& b, const Operand& op) {
  const auto& src = op.is_query ? b.queries[op.index] : b.positives[op.index];
  std::vector<double> v(src.values);
  if (op.mask != nullptr) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] *= (*op.mask)[i];
  }
  return v;
}

// Cosine with the zero-vector convention (similarity 0).
double safe_cosine(std::span<const double> a, double na, std::span<const double> c,
                   double nc) {
  if (na == 0.0 || nc == 0.0) return 0.0;
  return std::clamp(dot(a, c) / (na * nc), -1.0, 1.0);
}

// Returns -log softmax(logits)[target] with max subtraction; when `dlogit` is
// non-null it receives softmax(logits) - onehot(target).
double softmax_cross_entropy(std::span<const double> logits, std::size_t target,
                             std::vector<double>* dlogit) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - mx);
  const double lse = mx + std::log(sum);
  if (dlogit != nullptr) {
    dlogit->resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      (*dlogit)[i] = std::exp(logits[i] - lse) - (i == target ? 1.0 : 0.0);
    }
  }
  // Never negative; the subtraction can produce -0 or -ulp when target dominates.
  return std::max(0.0, lse - logits[target]);
}

void accumulate(const Operand& op, std::span<const double> g, double scale,
                BatchGradients& grad) {
  auto& dst = op.is_query ? grad.queries[op.index] : grad.positives[op.index];
  for (std::size_t k = 0; k < g.size(); ++k) {
    const double w = op.mask != nullptr ? (*op.mask)[k] : 1.0;
    dst[k] += scale * w * g[k];
  }
}

// One contrastive term: anchor against every candidate, target index `target`,
// contributing `weight * loss` to the objective.
double contrastive_term(const Batch& b, const Operand& anchor,
                        std::span<const Operand> candidates, std::size_t target,
                        double tau, double weight, Accumulator& acc) {
  const std::vector<double> a = materialize(b, anchor);
  const double na = l2_norm(a);
  if (na == 0.0) ++acc.zero_count;

  std::vector<std::vector<double>> cs;
  std::vector<double> norms;
  std::vector<double> logits;
  cs.reserve(candidates.size());
  for (const auto& op : candidates) {
    cs.push_back(materialize(b, op));
    norms.push_back(l2_norm(cs.back()));
    if (norms.back() == 0.0) ++acc.zero_count;
    logits.push_back(safe_cosine(a, na, cs.back(), norms.back()) / tau);
  }

  std::vector<double> dlogit;
  const double loss =
      softmax_cross_entropy(logits, target, acc.grad != nullptr ? &dlogit : nullptr);

  if (acc.grad != nullptr && na != 0.0) {
    const std::size_t d = a.size();
    std::vector<double> ga(d, 0.0);
    std::vector<double> gc(d);
    for (std::size_t i = 0; i < cs.size(); ++i) {
      if (norms[i] == 0.0) continue;
      const double dcos = weight * dlogit[i] / tau;
      if (dcos == 0.0) continue;
      const double cos = logits[i] * tau;
      const double inv = 1.0 / (na * norms[i]);
      for (std::size_t k = 0; k < d; ++k) {
        ga[k] += dcos * (cs[i][k] * inv - cos * a[k] / (na * na));
        gc[k] = a[k] * inv - cos * cs[i][k] / (norms[i] * norms[i]);
      }
      accumulate(candidates[i], gc, dcos, *acc.grad);
    }
    accumulate(anchor, ga, 1.0, *acc.grad);
  }
  return loss;
}

std::vector<Operand> documents(const Batch& b, const std::vector<double>* mask) {
  std::vector<Operand> out;
  out.reserve(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) out.push_back({false, i, mask});
  return out;
}

std::vector<Operand> queries(const Batch& b) {
  std::vector<Operand> out;
  out.reserve(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) out.push_back({true, i, nullptr});
  return out;
}

struct Terms {
  double l_in = 0.0;
  double l_din = 0.0;
  double l_sin = 0.0;
};

// Evaluates every term; gradients (if requested) are of l_din + beta * l_sin.
Terms evaluate(const Batch& b, double tau, double beta, bool with_plain,
               Accumulator& acc) {
  require_tau(tau);
  b.validate();
  const std::size_t n = b.size();
  const double inv_b = 1.0 / static_cast<double>(n);
  const auto qs = queries(b);
  Terms t;

  if (with_plain) {
    Accumulator silent;
    const auto ds = documents(b, nullptr);
    for (std::size_t j = 0; j < n; ++j) {
      t.l_in += inv_b * contrastive_term(b, qs[j], ds, j, tau, 0.0, silent);
    }
  }

  for (std::size_t j = 0; j < n; ++j) {
    const auto* mask = &b.masks[j].weights;
    const auto masked = documents(b, mask);
    const double fwd =
        contrastive_term(b, qs[j], masked, j, tau, 0.5 * inv_b, acc);
    const double rev = contrastive_term(b, Operand{false, j, mask}, qs, j, tau,
                                        0.5 * inv_b, acc);
    t.l_din += inv_b * 0.5 * (fwd + rev);

    const auto& parts = b.submask_sets[j].parts;
    const double inv_n = 1.0 / static_cast<double>(parts.size());
    for (const auto& part : parts) {
      const auto sub = documents(b, &part);
      t.l_sin += inv_b * inv_n *
                 contrastive_term(b, qs[j], sub, j, tau, beta * inv_b * inv_n, acc);
    }
  }
  return t;
}

}  // namespace

void Batch::validate() const {
  const std::size_t n = queries.size();
  if (n == 0) {
    throw Error(ErrorCode::precondition_violation, "batch is empty");
  }
  if (positives.size() != n || masks.size() != n || submask_sets.size() != n) {
    throw Error(ErrorCode::precondition_violation,
                "batch lists differ in length");
  }
  const std::size_t d = dim();
  if (d == 0) throw Error(ErrorCode::precondition_violation, "zero dimension");
  const std::size_t parts = submask_sets.front().size();
  if (parts == 0) {
    throw Error(ErrorCode::precondition_violation, "empty submask set");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (queries[i].dim() != d || positives[i].dim() != d || masks[i].dim() != d) {
      throw Error(ErrorCode::dimension_mismatch,
                  "pair " + std::to_string(i) + " does not match dimension " +
                      std::to_string(d));
    }
    if (submask_sets[i].size() != parts) {
      throw Error(ErrorCode::precondition_violation,
                  "submask sets must share one part count");
    }
    for (const auto& p : submask_sets[i].parts) {
      if (p.size() != d) {
        throw Error(ErrorCode::dimension_mismatch, "submask dimension");
      }
    }
  }
}

Batch make_batch(std::vector<Embedding> queries, std::vector<Embedding> positives,
                 double alpha, int n_submasks, std::uint64_t seed, double eps) {
  if (queries.size() != positives.size()) {
    throw Error(ErrorCode::precondition_violation,
                "queries and positives differ in length");
  }
  Batch b;
  b.queries = std::move(queries);
  b.positives = std::move(positives);
  for (std::size_t i = 0; i < b.queries.size(); ++i) {
    b.masks.push_back(mask_for_pair(b.queries[i], b.positives[i], alpha, eps));
    b.submask_sets.push_back(
        partition_mask(b.masks.back(), n_submasks, derive_seed(seed, i)));
  }
  return b;
}

double cosine_sim(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) {
    throw Error(ErrorCode::dimension_mismatch,
                std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  }
  const double na = l2_norm(a.values);
  const double nb = l2_norm(b.values);
  if (na == 0.0 || nb == 0.0) {
    throw Error(ErrorCode::zero_vector, "cosine of an all-zero vector");
  }
  return std::clamp(dot(a.values, b.values) / (na * nb), -1.0, 1.0);
}

double info_nce(std::size_t anchor_index, std::span<const Embedding> anchors,
                std::span<const Embedding> candidates, double tau) {
  require_tau(tau);
  if (anchor_index >= anchors.size() || anchor_index >= candidates.size()) {
    throw Error(ErrorCode::precondition_violation, "anchor index out of range");
  }
  const auto& a = anchors[anchor_index].values;
  const double na = l2_norm(a);
  std::vector<double> logits;
  logits.reserve(candidates.size());
  for (const auto& c : candidates) {
    if (c.dim() != a.size()) {
      throw Error(ErrorCode::dimension_mismatch, "candidate dimension");
    }
    logits.push_back(safe_cosine(a, na, c.values, l2_norm(c.values)) / tau);
  }
  return softmax_cross_entropy(logits, anchor_index, nullptr);
}

double dense_loss(const Batch& batch, double tau) {
  Accumulator acc;
  return evaluate(batch, tau, 0.0, false, acc).l_din;
}

double sparse_loss(const Batch& batch, double tau) {
  Accumulator acc;
  return evaluate(batch, tau, 0.0, false, acc).l_sin;
}

LossReport total_loss(const Batch& batch, double tau, double beta) {
  if (!(beta >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "beta must be non-negative");
  }
  Accumulator acc;
  const Terms t = evaluate(batch, tau, beta, true, acc);
  LossReport r;
  r.l_in = t.l_in;
  r.l_din = t.l_din;
  r.l_sin = t.l_sin;
  r.total = t.l_din + beta * t.l_sin;
  r.beta = beta;
  r.tau = tau;
  r.zero_similarity_count = acc.zero_count;
  return r;
}

BatchGradients loss_gradients(const Batch& batch, double tau, double beta) {
  if (!(beta >= 0.0)) {
    throw Error(ErrorCode::invalid_argument, "beta must be non-negative");
  }
  BatchGradients g;
  const std::size_t d = batch.dim();
  g.queries.assign(batch.size(), std::vector<double>(d, 0.0));
  g.positives.assign(batch.size(), std::vector<double>(d, 0.0));
  Accumulator acc;
  acc.grad = &g;
  evaluate(batch, tau, beta, false, acc);
  return g;
}

GradientCheckReport finite_difference_report(const Batch& batch, double tau,
                                             double beta, double step,
                                             const GradientFn& gradient) {
  if (!(step > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "step must be positive");
  }
  const BatchGradients analytic = gradient(batch, tau, beta);
  Batch probe = batch;

  auto objective = [&](const Batch& b) {
    Accumulator acc;
    const Terms t = evaluate(b, tau, beta, false, acc);
    return t.l_din + beta * t.l_sin;
  };

  struct Sample {
    bool is_query;
    std::size_t pair;
    std::size_t coord;
    double analytic;
    double numeric;
  };
  std::vector<Sample> samples;
  for (int side = 0; side < 2; ++side) {
    const bool is_query = side == 0;
    for (std::size_t j = 0; j < batch.size(); ++j) {
      auto& values = is_query ? probe.queries[j].values : probe.positives[j].values;
      for (std::size_t k = 0; k < values.size(); ++k) {
        const double saved = values[k];
        values[k] = saved + step;
        const double up = objective(probe);
        values[k] = saved - step;
        const double down = objective(probe);
        values[k] = saved;
        const double a = is_query ? analytic.queries[j][k] : analytic.positives[j][k];
        samples.push_back({is_query, j, k, a, (up - down) / (2.0 * step)});
      }
    }
  }

  double scale = 1.0;
  for (const auto& s : samples) scale = std::max(scale, std::abs(s.numeric));
  const double floor = kGradientCheckFloor * scale;

  GradientCheckReport r;
  r.coordinates = samples.size();
  for (const auto& s : samples) {
    const double diff = std::abs(s.analytic - s.numeric);
    const double denom = std::max({std::abs(s.analytic), std::abs(s.numeric), floor});
    const double rel = diff / denom;
    r.max_absolute_error = std::max(r.max_absolute_error, diff);
    if (rel > r.max_relative_error || std::isnan(rel)) {
      r.max_relative_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
      r.worst_is_query = s.is_query;
      r.worst_pair = s.pair;
      r.worst_coord = s.coord;
    }
  }
  return r;
}

double finite_difference_check(const Batch& batch, double tau, double beta,
                               double step) {
  return finite_difference_report(batch, tau, beta, step, loss_gradients)
      .max_relative_error;
}

}  // namespace fineprint
