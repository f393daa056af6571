#include "loss_check.hpp"

#include <cmath>
#include <algorithm>
#include <stdexcept>

#include "fineprint/error.hpp"

namespace fineprint::check {
namespace {

using Vec = std::vector<double>;

Vec times(const Vec& v, const Vec* mask) {
  Vec out = v;
  if (mask != nullptr) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
  }
  return out;
}

double naive_cos(const Vec& a, const Vec& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

// -log( exp(s_t / tau) / sum_i exp(s_i / tau) )
double naive_ce(const Vec& anchor, const std::vector<Vec>& cands, std::size_t t, double tau) {
  double denom = 0.0;
  for (const auto& c : cands) denom += std::exp(naive_cos(anchor, c) / tau);
  return -std::log(std::exp(naive_cos(anchor, cands[t]) / tau) / denom);
}

double draw(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const double x = n(rng);
    if (std::fabs(x) >= 0.05) return x;
  }
}

std::vector<std::string> split(const std::string& s, const std::string& seps) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (seps.find(c) != std::string::npos) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

NaiveLosses naive_losses(const Batch& batch, double tau, double beta) {
  const std::size_t n = batch.size();
  std::vector<Vec> q, d;
  for (std::size_t i = 0; i < n; ++i) {
    q.push_back(batch.queries[i].values);
    d.push_back(batch.positives[i].values);
  }
  NaiveLosses r;
  for (std::size_t j = 0; j < n; ++j) {
    r.l_in += naive_ce(q[j], d, j, tau) / n;

    const Vec* m = &batch.masks[j].weights;
    std::vector<Vec> dm;
    for (std::size_t i = 0; i < n; ++i) dm.push_back(times(d[i], m));
    r.l_din += 0.5 * (naive_ce(q[j], dm, j, tau) + naive_ce(dm[j], q, j, tau)) / n;

    const auto& parts = batch.submask_sets[j].parts;
    for (const auto& part : parts) {
      std::vector<Vec> dp;
      for (std::size_t i = 0; i < n; ++i) dp.push_back(times(d[i], &part));
      r.l_sin += naive_ce(q[j], dp, j, tau) / n / parts.size();
    }
  }
  r.total = r.l_din + beta * r.l_sin;
  return r;
}

Batch random_batch(std::mt19937_64& rng, std::size_t b, std::size_t d, int n_submasks,
                   double alpha) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    std::vector<Embedding> qs, ps;
    for (std::size_t i = 0; i < b; ++i) {
      Embedding q, p;
      for (std::size_t k = 0; k < d; ++k) {
        const double x = draw(rng);
        double y = x + 0.5 * draw(rng);
        while (std::fabs(y) < 0.05) y = x + 0.5 * draw(rng);
        q.values.push_back(x);
        p.values.push_back(y);
      }
      qs.push_back(std::move(q));
      ps.push_back(std::move(p));
    }
    try {
      return make_batch(std::move(qs), std::move(ps), alpha, n_submasks, rng());
    } catch (const Error& e) {
      if (e.code() != ErrorCode::partition_too_fine) throw;
    }
  }
  throw Error(ErrorCode::invalid_argument, "could not draw a batch that admits the partition");
}

void apply_sizes(LossCheckOptions& options, const std::string& text) {
  for (const auto& clause : split(text, "; ")) {
    const auto eq = clause.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::invalid_argument, "size clause \"" + clause + "\" lacks '='");
    }
    const std::string key = clause.substr(0, eq);
    const auto values = split(clause.substr(eq + 1), ",");
    if (values.empty()) throw Error(ErrorCode::invalid_argument, "empty list for " + key);
    try {
      if (key == "B" || key == "d") {
        std::vector<std::size_t> xs;
        for (const auto& v : values) {
          const long x = std::stol(v);
          if (x < 1) throw Error(ErrorCode::invalid_argument, key + " must be positive");
          xs.push_back(static_cast<std::size_t>(x));
        }
        if (key == "d" && *std::min_element(xs.begin(), xs.end()) < 3) {
          throw Error(ErrorCode::invalid_argument, "d must be at least 3");
        }
        (key == "B" ? options.oracle_sizes : options.oracle_dims) = xs;
        (key == "B" ? options.gradient_sizes : options.gradient_dims) = xs;
      } else if (key == "tau") {
        options.taus.clear();
        for (const auto& v : values) options.taus.push_back(std::stod(v));
      } else {
        throw Error(ErrorCode::invalid_argument, "unknown size key \"" + key + "\"");
      }
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::invalid_argument, "bad number in \"" + clause + "\"");
    }
  }
}

BatchGradients buggy_gradients(const Batch& batch, double tau, double beta) {
  BatchGradients g = loss_gradients(batch, tau, beta);
  for (auto& row : g.positives) {
    for (double& x : row) x *= 1.01;
  }
  return g;
}

LossCheckResult run_loss_check(const LossCheckOptions& o) {
  std::mt19937_64 rng(o.seed);
  LossCheckResult r;
  for (int i = 0; i < o.oracle_batches; ++i) {
    const std::size_t b = o.oracle_sizes[i % o.oracle_sizes.size()];
    const std::size_t d = o.oracle_dims[(i / o.oracle_sizes.size()) % o.oracle_dims.size()];
    const double tau = o.taus[i % o.taus.size()];
    const Batch batch = random_batch(rng, b, d);
    const LossReport lib = total_loss(batch, tau, o.beta);
    const NaiveLosses ref = naive_losses(batch, tau, o.beta);
    for (double e : {lib.l_in - ref.l_in, lib.l_din - ref.l_din, lib.l_sin - ref.l_sin,
                     lib.total - ref.total}) {
      r.oracle_max_abs_error = std::max(r.oracle_max_abs_error, std::fabs(e));
    }
    ++r.oracle_batches;
  }
  const GradientFn grad = o.inject_gradient_bug ? GradientFn(buggy_gradients)
                                                : GradientFn(loss_gradients);
  for (int i = 0; i < o.gradient_batches; ++i) {
    const std::size_t nb = o.gradient_sizes.size();
    const std::size_t nd = o.gradient_dims.size();
    const std::size_t b = o.gradient_sizes[i % nb];
    const std::size_t d = o.gradient_dims[(i / nb) % nd];
    const double tau = o.taus[(i / (nb * nd)) % o.taus.size()];
    const Batch batch = random_batch(rng, b, d);
    const GradientCheckReport g = finite_difference_report(batch, tau, o.beta, o.step, grad);
    r.gradient_max_rel_error = std::max(r.gradient_max_rel_error, g.max_relative_error);
    r.gradient_max_abs_error = std::max(r.gradient_max_abs_error, g.max_absolute_error);
    ++r.gradient_batches;
  }
  r.oracle_ok = r.oracle_max_abs_error <= o.oracle_tolerance;
  r.gradient_ok = r.gradient_max_rel_error < o.gradient_tolerance;
  return r;
}

nlohmann::ordered_json to_json(const LossCheckResult& r, const LossCheckOptions& o) {
  nlohmann::ordered_json j;
  j["seed"] = o.seed;
  j["oracle"] = {{"batches", r.oracle_batches},
                 {"max_abs_error", r.oracle_max_abs_error},
                 {"tolerance", o.oracle_tolerance},
                 {"ok", r.oracle_ok}};
  j["gradient"] = {{"batches", r.gradient_batches},
                   {"max_rel_error", r.gradient_max_rel_error},
                   {"max_abs_error", r.gradient_max_abs_error},
                   {"tolerance", o.gradient_tolerance},
                   {"step", o.step},
                   {"injected_bug", o.inject_gradient_bug},
                   {"ok", r.gradient_ok}};
  j["ok"] = r.ok();
  return j;
}

}  // namespace fineprint::check
