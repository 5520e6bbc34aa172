#pragma once

#include "cdnguard/core.hpp"
#include "cdnguard/features.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace cdnguard::ml {

/// Lower-triangular Cholesky factor of a dense symmetric D x D matrix
/// (row-major). Returns nullopt if the matrix is not positive definite.
inline std::optional<std::vector<double>> cholesky(std::span<const double> a, std::size_t d) {
  std::vector<double> l(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * d + j];
      for (std::size_t k = 0; k < j; ++k)
        s -= l[i * d + k] * l[j * d + k];
      if (i == j) {
        if (!(s > 0.0) || !std::isfinite(s))
          return std::nullopt;
        l[i * d + i] = std::sqrt(s);
      } else {
        l[i * d + j] = s / l[j * d + j];
      }
    }
  }
  return l;
}

/// Solves L y = b in place (forward substitution).
inline void forward_substitute(std::span<const double> l, std::size_t d, std::span<double> b) {
  for (std::size_t i = 0; i < d; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k)
      s -= l[i * d + k] * b[k];
    b[i] = s / l[i * d + i];
  }
}

struct GmmParams {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> weights;     // k
  std::vector<double> means;       // k x dim
  std::vector<double> covariances; // k x dim x dim
  /// Mean per-sample log-likelihood after each EM iteration.
  std::vector<double> log_likelihood_trace;
  double reg_eps = 1e-6;
  std::uint64_t rng_seed = 0;
  std::size_t n_iter = 0;
  bool converged = false;

  std::span<const double> mean(std::size_t i) const { return {means.data() + i * dim, dim}; }
  std::span<const double> covariance(std::size_t i) const {
    return {covariances.data() + i * dim * dim, dim * dim};
  }
};

struct GmmOptions {
  double reg_eps = 1e-6;
  std::size_t max_iter = 200;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

namespace detail {

/// Per-component Cholesky factors and log-normalizers, cached for scoring.
struct ComponentCache {
  std::vector<std::vector<double>> chol;
  std::vector<double> log_norm; // log pi_i - D/2 log 2pi - 1/2 log|Sigma_i|

  ComponentCache(const GmmParams &p) {
    const double log2pi = std::log(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < p.k; ++i) {
      auto l = cholesky(p.covariance(i), p.dim);
      if (!l)
        throw Error("ml-core", ErrorKind::SingularCovariance,
                    "covariance of component " + std::to_string(i) + " is not positive definite");
      double log_det = 0.0;
      for (std::size_t d = 0; d < p.dim; ++d)
        log_det += 2.0 * std::log((*l)[d * p.dim + d]);
      const double lw = p.weights[i] > 0.0 ? std::log(p.weights[i])
                                            : -std::numeric_limits<double>::infinity();
      log_norm.push_back(lw - 0.5 * static_cast<double>(p.dim) * log2pi - 0.5 * log_det);
      chol.push_back(std::move(*l));
    }
  }

  /// log(pi_i G(x | mu_i, Sigma_i)) for every component; returns log p(x).
  double log_joint(const GmmParams &p, std::span<const double> x, std::span<double> out,
                   std::vector<double> &scratch) const {
    scratch.resize(p.dim);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < p.k; ++i) {
      const auto mu = p.mean(i);
      for (std::size_t d = 0; d < p.dim; ++d)
        scratch[d] = x[d] - mu[d];
      forward_substitute(chol[i], p.dim, scratch);
      double maha = 0.0;
      for (double v : scratch)
        maha += v * v;
      out[i] = log_norm[i] - 0.5 * maha;
      best = std::max(best, out[i]);
    }
    if (!std::isfinite(best))
      return best;
    double s = 0.0;
    for (std::size_t i = 0; i < p.k; ++i)
      s += std::exp(out[i] - best);
    return best + std::log(s);
  }
};

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// k-means++ style seeding: returns row indices of the initial means.
inline std::vector<std::size_t> seed_means(const Matrix &X, std::size_t k, Rng &rng) {
  std::vector<std::size_t> chosen{static_cast<std::size_t>(uniform_index(rng, X.rows))};
  std::vector<double> d2(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i)
    d2[i] = sq_dist(X.row(i), X.row(chosen[0]));
  while (chosen.size() < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = static_cast<std::size_t>(uniform_index(rng, X.rows));
    } else {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      pick = X.rows - 1;
      for (std::size_t i = 0; i < X.rows; ++i) {
        acc += d2[i];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    }
    chosen.push_back(pick);
    for (std::size_t i = 0; i < X.rows; ++i)
      d2[i] = std::min(d2[i], sq_dist(X.row(i), X.row(pick)));
  }
  return chosen;
}

} // namespace detail

/// Fits a full-covariance Gaussian mixture with EM. Means are seeded
/// k-means++ style from data rows, every covariance starts at the global
/// covariance and weights start uniform. reg_eps is added to every
/// covariance diagonal in each M-step.
inline GmmParams gmm_fit_em(const Matrix &X, std::size_t k, const GmmOptions &opt = {}) {
  if (k < 1)
    throw Error("ml-core", ErrorKind::ConfigInvalid, "GMM needs at least one component");
  if (X.rows < k)
    throw Error("ml-core", ErrorKind::TooFewSamples,
                "GMM with K=" + std::to_string(k) + " needs at least K rows, got " +
                    std::to_string(X.rows));
  const std::size_t n = X.rows, dim = X.cols;
  const double nd = static_cast<double>(n);

  GmmParams p;
  p.k = k;
  p.dim = dim;
  p.reg_eps = opt.reg_eps;
  p.rng_seed = opt.seed;
  p.weights.assign(k, 1.0 / static_cast<double>(k));

  Rng rng(opt.seed);
  for (auto r : detail::seed_means(X, k, rng))
    p.means.insert(p.means.end(), X.row(r).begin(), X.row(r).end());

  std::vector<double> global_mean(dim, 0.0), global_cov(dim * dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d)
      global_mean[d] += X(i, d) / nd;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = 0; b < dim; ++b)
        global_cov[a * dim + b] += (X(i, a) - global_mean[a]) * (X(i, b) - global_mean[b]) / nd;
  for (std::size_t d = 0; d < dim; ++d)
    global_cov[d * dim + d] += opt.reg_eps;
  for (std::size_t c = 0; c < k; ++c)
    p.covariances.insert(p.covariances.end(), global_cov.begin(), global_cov.end());

  std::vector<double> resp(n * k);
  std::vector<double> scratch;
  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < opt.max_iter; ++iter) {
    // E-step.
    const detail::ComponentCache cache(p);
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::span<double> r(resp.data() + i * k, k);
      const double lp = cache.log_joint(p, X.row(i), r, scratch);
      ll += lp;
      for (auto &v : r)
        v = std::exp(v - lp);
    }
    ll /= nd;
    if (iter > 0) {
      p.log_likelihood_trace.push_back(ll);
      if (std::abs(ll - prev) < opt.tol) {
        p.converged = true;
        p.n_iter = iter;
        break;
      }
    } else {
      p.log_likelihood_trace.push_back(ll);
    }
    prev = ll;

    // M-step.
    for (std::size_t c = 0; c < k; ++c) {
      double nk = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        nk += resp[i * k + c];
      p.weights[c] = nk / nd;
      if (nk <= std::numeric_limits<double>::min() * 1e10)
        continue; // keep the previous mean/covariance of an emptied component
      std::vector<double> mu(dim, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dim; ++d)
          mu[d] += resp[i * k + c] * X(i, d);
      for (auto &v : mu)
        v /= nk;
      std::vector<double> cov(dim * dim, 0.0);
      std::vector<double> diff(dim);
      for (std::size_t i = 0; i < n; ++i) {
        const double w = resp[i * k + c];
        if (w == 0.0)
          continue;
        for (std::size_t d = 0; d < dim; ++d)
          diff[d] = X(i, d) - mu[d];
        for (std::size_t a = 0; a < dim; ++a)
          for (std::size_t b = 0; b <= a; ++b)
            cov[a * dim + b] += w * diff[a] * diff[b];
      }
      for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = 0; b <= a; ++b) {
          cov[a * dim + b] /= nk;
          cov[b * dim + a] = cov[a * dim + b];
        }
      for (std::size_t d = 0; d < dim; ++d)
        cov[d * dim + d] += opt.reg_eps;
      std::copy(mu.begin(), mu.end(), p.means.begin() + static_cast<std::ptrdiff_t>(c * dim));
      std::copy(cov.begin(), cov.end(),
                p.covariances.begin() + static_cast<std::ptrdiff_t>(c * dim * dim));
    }
    p.n_iter = iter + 1;
  }
  return p;
}

struct GmmPrediction {
  std::size_t cluster = 0;
  std::vector<double> responsibilities;
};

inline GmmPrediction gmm_predict(const GmmParams &p, std::span<const double> row) {
  if (row.size() != p.dim)
    throw Error("ml-core", ErrorKind::DimensionMismatch,
                "row has " + std::to_string(row.size()) + " features, model expects " +
                    std::to_string(p.dim));
  const detail::ComponentCache cache(p);
  GmmPrediction out;
  out.responsibilities.resize(p.k);
  std::vector<double> scratch;
  const double lp = cache.log_joint(p, row, out.responsibilities, scratch);
  for (auto &v : out.responsibilities)
    v = std::exp(v - lp);
  out.cluster = argmax(out.responsibilities);
  return out;
}

/// Batch prediction over every row of X.
inline std::vector<GmmPrediction> gmm_predict_all(const GmmParams &p, const Matrix &X) {
  if (X.cols != p.dim)
    throw Error("ml-core", ErrorKind::DimensionMismatch, "matrix width does not match the model");
  const detail::ComponentCache cache(p);
  std::vector<GmmPrediction> out(X.rows);
  std::vector<double> scratch;
  for (std::size_t i = 0; i < X.rows; ++i) {
    out[i].responsibilities.resize(p.k);
    const double lp = cache.log_joint(p, X.row(i), out[i].responsibilities, scratch);
    for (auto &v : out[i].responsibilities)
      v = std::exp(v - lp);
    out[i].cluster = argmax(out[i].responsibilities);
  }
  return out;
}

/// Mixture density p(x | theta).
inline double gmm_density(const GmmParams &p, std::span<const double> row) {
  const detail::ComponentCache cache(p);
  std::vector<double> parts(p.k), scratch;
  return std::exp(cache.log_joint(p, row, parts, scratch));
}

inline std::vector<std::size_t> hard_assignments(const std::vector<GmmPrediction> &preds) {
  std::vector<std::size_t> out(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    out[i] = preds[i].cluster;
  return out;
}

// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const GmmParams &p) {
  return {{"version", 1},
          {"model", "gmm"},
          {"hyper_parameters", {{"k", p.k}, {"reg_eps", p.reg_eps}, {"rng_seed", p.rng_seed}}},
          {"dim", p.dim},
          {"weights", p.weights},
          {"means", p.means},
          {"covariances", p.covariances},
          {"log_likelihood_trace", p.log_likelihood_trace},
          {"n_iter", p.n_iter},
          {"converged", p.converged}};
}

inline GmmParams gmm_from_json(const nlohmann::json &j) {
  if (j.at("model") != "gmm" || j.at("version") != 1)
    throw Error("ml-core", ErrorKind::ConfigInvalid, "not a version-1 gmm document");
  GmmParams p;
  const auto &h = j.at("hyper_parameters");
  p.k = h.at("k");
  p.reg_eps = h.at("reg_eps");
  p.rng_seed = h.at("rng_seed");
  p.dim = j.at("dim");
  p.weights = j.at("weights").get<std::vector<double>>();
  p.means = j.at("means").get<std::vector<double>>();
  p.covariances = j.at("covariances").get<std::vector<double>>();
  p.log_likelihood_trace = j.at("log_likelihood_trace").get<std::vector<double>>();
  p.n_iter = j.at("n_iter");
  p.converged = j.at("converged");
  if (p.weights.size() != p.k || p.means.size() != p.k * p.dim ||
      p.covariances.size() != p.k * p.dim * p.dim)
    throw Error("ml-core", ErrorKind::ConfigInvalid, "gmm document arrays have inconsistent sizes");
  return p;
}

} // namespace cdnguard::ml
