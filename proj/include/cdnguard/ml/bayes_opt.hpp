#pragma once

#include "cdnguard/core.hpp"
#include "cdnguard/ml/gmm.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <set>
#include <vector>

namespace cdnguard::ml {

struct GpPosterior {
  double mean = 0.0;
  double variance = 0.0;
};

/// Squared-exponential kernel k(x, x') = sf^2 exp(-(x - x')^2 / (2 l^2)).
struct SeKernel {
  double signal_sd = 1.0;
  double length_scale = 1.0;

  double operator()(double a, double b) const {
    const double r = (a - b) / length_scale;
    return signal_sd * signal_sd * std::exp(-0.5 * r * r);
  }
};

/// Zero-mean GP regression on one input dimension. The Gram matrix gets a
/// diagonal jitter starting at 1e-8 and escalated x10 up to 1e-4.
class GaussianProcess {
public:
  GaussianProcess(std::vector<double> xs, std::vector<double> ys, SeKernel kernel)
      : xs_(std::move(xs)), kernel_(kernel) {
    if (xs_.empty() || xs_.size() != ys.size())
      throw Error("ml-core", ErrorKind::ConfigInvalid, "GP needs >= 1 observation with matching y");
    const std::size_t n = xs_.size();
    std::vector<double> gram(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        gram[i * n + j] = kernel_(xs_[i], xs_[j]);
    for (double jitter = 1e-8; jitter <= 1e-4 * 1.0000001; jitter *= 10.0) {
      auto g = gram;
      for (std::size_t i = 0; i < n; ++i)
        g[i * n + i] += jitter;
      if (auto l = cholesky(g, n)) {
        chol_ = std::move(*l);
        jitter_ = jitter;
        break;
      }
    }
    if (chol_.empty())
      throw Error("ml-core", ErrorKind::IllConditioned,
                  "GP Gram matrix is not positive definite even with jitter 1e-4");
    // alpha = K^-1 y via two triangular solves.
    alpha_ = ys;
    forward_substitute(chol_, n, alpha_);
    for (std::size_t ii = n; ii-- > 0;) {
      double s = alpha_[ii];
      for (std::size_t k = ii + 1; k < n; ++k)
        s -= chol_[k * n + ii] * alpha_[k];
      alpha_[ii] = s / chol_[ii * n + ii];
    }
  }

  GpPosterior predict(double x) const {
    const std::size_t n = xs_.size();
    std::vector<double> ks(n);
    for (std::size_t i = 0; i < n; ++i)
      ks[i] = kernel_(x, xs_[i]);
    GpPosterior out;
    for (std::size_t i = 0; i < n; ++i)
      out.mean += ks[i] * alpha_[i];
    forward_substitute(chol_, n, ks);
    double vv = 0.0;
    for (double v : ks)
      vv += v * v;
    out.variance = std::max(0.0, kernel_(x, x) - vv);
    return out;
  }

  double jitter() const { return jitter_; }

private:
  std::vector<double> xs_;
  SeKernel kernel_;
  std::vector<double> chol_;
  std::vector<double> alpha_;
  double jitter_ = 0.0;
};

inline GpPosterior gp_fit_posterior(const std::vector<std::pair<double, double>> &observations,
                                    double query, SeKernel kernel) {
  std::vector<double> xs, ys;
  for (const auto &[x, y] : observations) {
    xs.push_back(x);
    ys.push_back(y);
  }
  return GaussianProcess(std::move(xs), std::move(ys), kernel).predict(query);
}

/// EI for maximization with exploration margin xi.
inline double expected_improvement(const GpPosterior &post, double best, double xi = 0.01) {
  const double sd = std::sqrt(post.variance);
  const double gain = post.mean - best - xi;
  if (sd <= 0.0)
    return std::max(gain, 0.0);
  const double z = gain / sd;
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return gain * cdf + sd * pdf;
}

struct SearchSpace {
  double lo = 0.0;
  double hi = 1.0;
  bool integer = false;

  double width() const { return hi - lo; }
  std::size_t cardinality() const {
    return integer ? static_cast<std::size_t>(std::floor(hi) - std::ceil(lo) + 1) : 0;
  }
};

struct BoConfig {
  SearchSpace space;
  std::size_t budget = 25;
  std::size_t n_init = 5;
  std::size_t n_candidates = 1024;
  double xi = 0.01;
  std::uint64_t rng_seed = 0;
};

struct BoResult {
  double best_x = 0.0;
  double best_y = -std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, double>> history;
};

/// Maximizes `objective` over a bounded interval or integer range: n_init
/// seeded random points, then expected-improvement picks over a dense grid.
/// On integer spaces points are rounded and never evaluated twice, so the
/// run ends early once the whole space has been visited.
inline BoResult bo_gp_optimize(const std::function<double(double)> &objective, const BoConfig &cfg) {
  if (cfg.budget <= cfg.n_init)
    throw Error("ml-core", ErrorKind::ConfigInvalid, "BO budget must exceed n_init");
  if (!(cfg.space.hi >= cfg.space.lo))
    throw Error("ml-core", ErrorKind::ConfigInvalid, "BO search space is empty");
  const auto &space = cfg.space;
  if (space.integer && space.cardinality() == 0)
    throw Error("ml-core", ErrorKind::ConfigInvalid, "integer search space holds no integers");

  Rng rng(cfg.rng_seed);
  BoResult result;
  std::set<double> seen;

  auto evaluate = [&](double x) {
    const double y = objective(x);
    seen.insert(x);
    result.history.emplace_back(x, y);
    if (y > result.best_y) {
      result.best_y = y;
      result.best_x = x;
    }
  };

  const std::size_t limit = space.integer ? std::min(cfg.budget, space.cardinality()) : cfg.budget;

  // Random initial design.
  const std::size_t n_init = std::min(cfg.n_init, limit);
  for (std::size_t tries = 0; result.history.size() < n_init && tries < 100 * cfg.n_init; ++tries) {
    double x;
    if (space.integer) {
      const auto first = static_cast<std::int64_t>(std::ceil(space.lo));
      x = static_cast<double>(first + static_cast<std::int64_t>(uniform_index(rng, space.cardinality())));
    } else {
      x = uniform(rng, space.lo, space.hi);
    }
    if (!seen.contains(x))
      evaluate(x);
  }

  // Candidate grid.
  std::vector<double> grid;
  if (space.integer) {
    const auto first = std::ceil(space.lo);
    const auto count = space.cardinality();
    if (count <= cfg.n_candidates) {
      for (std::size_t i = 0; i < count; ++i)
        grid.push_back(first + static_cast<double>(i));
    } else {
      for (std::size_t i = 0; i < cfg.n_candidates; ++i) {
        const double v = std::round(space.lo + space.width() * static_cast<double>(i) /
                                                   static_cast<double>(cfg.n_candidates - 1));
        if (grid.empty() || grid.back() != v)
          grid.push_back(v);
      }
    }
  } else {
    for (std::size_t i = 0; i < cfg.n_candidates; ++i)
      grid.push_back(space.lo + space.width() * static_cast<double>(i) /
                                    static_cast<double>(cfg.n_candidates - 1));
  }

  while (result.history.size() < limit) {
    std::vector<double> xs, ys;
    for (const auto &[x, y] : result.history) {
      xs.push_back(x);
      ys.push_back(y);
    }
    const double y_mean = mean(ys);
    double y_sd = stddev(ys);
    if (!(y_sd > 0.0))
      y_sd = 1.0;
    for (auto &y : ys)
      y -= y_mean;
    const double length = space.width() > 0.0 ? 0.1 * space.width() : 1.0;
    const GaussianProcess gp(xs, ys, SeKernel{y_sd, length});
    const double best = result.best_y - y_mean;

    double best_ei = -1.0;
    std::optional<double> next;
    for (double x : grid) {
      if (seen.contains(x))
        continue;
      const double ei = expected_improvement(gp.predict(x), best, cfg.xi);
      if (ei > best_ei) {
        best_ei = ei;
        next = x;
      }
    }
    if (!next)
      break;
    evaluate(*next);
  }
  return result;
}

} // namespace cdnguard::ml
