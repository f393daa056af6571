#include "fineprint/embedding_math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fineprint/error.hpp"

namespace fineprint {
namespace {

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::dimension_mismatch,
                std::string(what) + ": " + std::to_string(a) + " vs " +
                    std::to_string(b));
  }
}

// Logistic kept strictly inside (0, 1) even where the double result would
// round to an endpoint.
double open_sigmoid(double z) {
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  double s;
  if (z >= 0) {
    s = 1.0 / (1.0 + std::exp(-z));
  } else {
    const double e = std::exp(z);
    s = e / (1.0 + e);
  }
  return std::clamp(s, lo, hi);
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Unbiased draw in [0, bound) by rejection; the generator's output sequence is
// fixed by seed, so the permutation is identical on every platform.
std::uint64_t bounded(std::uint64_t& state, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = splitmix64(state);
  } while (x >= limit);
  return x % bound;
}

}  // namespace

std::size_t HybridMask::support_size() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(weights.begin(), weights.end(), [](double w) { return w != 0.0; }));
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "dot");
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_std(std::span<const double> v, double mean) {
  if (v.empty()) return 0.0;
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / static_cast<double>(v.size()));
}

Embedding l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (v.empty() || n == 0.0) {
    throw Error(ErrorCode::zero_vector, "cannot normalize an all-zero vector");
  }
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return Embedding(std::move(out), true);
}

CorrelationVector correlation(const Embedding& query_normalized,
                              const Embedding& doc_normalized) {
  require_same_dim(query_normalized.dim(), doc_normalized.dim(), "correlation");
  CorrelationVector c;
  c.raw.resize(query_normalized.dim());
  for (std::size_t i = 0; i < c.raw.size(); ++i) {
    c.raw[i] = std::abs(query_normalized.values[i] * doc_normalized.values[i]);
  }
  c.mean = mean_of(c.raw);
  c.std = population_std(c.raw, c.mean);
  return c;
}

CorrelationVector standardize_sigmoid(CorrelationVector c, double eps) {
  if (!(eps > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "eps must be positive");
  }
  c.mean = mean_of(c.raw);
  c.std = population_std(c.raw, c.mean);
  c.standardized.resize(c.raw.size());
  const double scale = c.std + eps;
  for (std::size_t i = 0; i < c.raw.size(); ++i) {
    c.standardized[i] = open_sigmoid((c.raw[i] - c.mean) / scale);
  }
  return c;
}

HybridMask hybrid_mask(const CorrelationVector& c, double alpha, double eps) {
  if (!(alpha > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "alpha must be positive");
  }
  if (c.standardized.size() != c.raw.size() || c.standardized.empty()) {
    throw Error(ErrorCode::precondition_violation,
                "hybrid_mask needs a standardized correlation vector");
  }
  HybridMask m;
  m.alpha = alpha;
  const auto& s = c.standardized;
  const double mu = mean_of(s);
  const double sigma = population_std(s, mu);
  if (sigma < eps) {
    m.weights.assign(s.size(), 1.0);
    m.degenerate = true;
    return m;
  }
  const double lower = mu - alpha * sigma;
  const double upper = mu + alpha * sigma;
  m.weights.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const int hits = (s[i] > lower ? 1 : 0) + (s[i] > upper ? 1 : 0);
    m.weights[i] = 0.5 * hits;
  }
  return m;
}

HybridMask mask_for_pair(const Embedding& query, const Embedding& doc,
                         double alpha, double eps) {
  const Embedding qn = query.is_normalized ? query : l2_normalize(query.values);
  const Embedding dn = doc.is_normalized ? doc : l2_normalize(doc.values);
  return hybrid_mask(standardize_sigmoid(correlation(qn, dn), eps), alpha, eps);
}

SubmaskSet partition_mask(const HybridMask& mask, int n_parts,
                          std::uint64_t seed) {
  if (n_parts < 1) {
    throw Error(ErrorCode::invalid_argument, "n_parts must be at least 1");
  }
  std::vector<std::size_t> support;
  for (std::size_t i = 0; i < mask.weights.size(); ++i) {
    if (mask.weights[i] != 0.0) support.push_back(i);
  }
  const auto parts = static_cast<std::size_t>(n_parts);
  if (parts > support.size()) {
    throw Error(ErrorCode::partition_too_fine,
                std::to_string(n_parts) + " parts over a support of " +
                    std::to_string(support.size()));
  }

  std::uint64_t state = seed;
  for (std::size_t i = support.size(); i > 1; --i) {
    std::swap(support[i - 1], support[bounded(state, i)]);
  }

  SubmaskSet out;
  out.seed = seed;
  out.parts.assign(parts, std::vector<double>(mask.weights.size(), 0.0));
  const std::size_t base = support.size() / parts;
  const std::size_t extra = support.size() % parts;
  std::size_t cursor = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t len = base + (p < extra ? 1 : 0);
    for (std::size_t j = 0; j < len; ++j, ++cursor) {
      const std::size_t idx = support[cursor];
      out.parts[p][idx] = mask.weights[idx];
    }
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t state = seed ^ (index * 0xD1B54A32D192ED03ULL);
  return splitmix64(state);
}

Embedding apply_mask(const Embedding& v, std::span<const double> weights) {
  require_same_dim(v.dim(), weights.size(), "apply_mask");
  std::vector<double> out(v.values);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= weights[i];
  return Embedding(std::move(out), false);
}

}  // namespace fineprint
