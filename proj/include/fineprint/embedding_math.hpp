/**
 * @file embedding_math.hpp
 * @brief Correlation, sigmoid standardization, hybrid masks and submask
 *        partitioning over fixed-dimension embeddings.
 *
 * Everything here is a pure function of its arguments.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fineprint {

inline constexpr double kDefaultEps = 1e-8;
inline constexpr double kDefaultAlpha = 0.5;

struct Embedding {
  std::vector<double> values;
  bool is_normalized = false;

  Embedding() = default;
  explicit Embedding(std::vector<double> v, bool normalized = false)
      : values(std::move(v)), is_normalized(normalized) {}

  std::size_t dim() const noexcept { return values.size(); }
  std::span<const double> view() const noexcept { return values; }

  friend bool operator==(const Embedding&, const Embedding&) = default;
};

struct CorrelationVector {
  std::vector<double> raw;
  std::vector<double> standardized;
  double mean = 0.0;
  double std = 0.0;
};

// Mask weights take exactly the values 0, 0.5 and 1.
struct HybridMask {
  std::vector<double> weights;
  double alpha = kDefaultAlpha;
  // Set when the constant-correlation fallback (all ones) was used.
  bool degenerate = false;

  std::size_t dim() const noexcept { return weights.size(); }
  std::size_t support_size() const noexcept;
};

struct SubmaskSet {
  std::vector<std::vector<double>> parts;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return parts.size(); }
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

// Population mean and standard deviation.
double mean_of(std::span<const double> v);
double population_std(std::span<const double> v, double mean);

// Throws ZeroVector on an all-zero input.
Embedding l2_normalize(std::span<const double> v);

// raw[i] = |a[i] * b[i]|. Inputs are expected to be normalized.
CorrelationVector correlation(const Embedding& query_normalized,
                              const Embedding& doc_normalized);

// Logistic of the z-scored raw correlation; outputs lie strictly in (0, 1).
CorrelationVector standardize_sigmoid(CorrelationVector c,
                                      double eps = kDefaultEps);

// Two-threshold mask over the standardized correlation. A standardized
// vector with spread below eps yields the all-ones mask.
HybridMask hybrid_mask(const CorrelationVector& c, double alpha = kDefaultAlpha,
                       double eps = kDefaultEps);

// normalize -> correlate -> standardize -> mask, for one query/document pair.
HybridMask mask_for_pair(const Embedding& query, const Embedding& doc,
                         double alpha = kDefaultAlpha, double eps = kDefaultEps);

// Splits the nonzero support of the mask into n_parts disjoint submasks using
// a seeded shuffle followed by near-equal contiguous chunks.
SubmaskSet partition_mask(const HybridMask& mask, int n_parts,
                          std::uint64_t seed);

// Mixes a base seed with an index (splitmix64), for per-pair partition seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// Elementwise product.
Embedding apply_mask(const Embedding& v, std::span<const double> weights);

}  // namespace fineprint
