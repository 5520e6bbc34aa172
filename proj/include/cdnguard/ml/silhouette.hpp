#pragma once

#include "cdnguard/core.hpp"
#include "cdnguard/features.hpp"

#include <cmath>
#include <map>
#include <vector>

namespace cdnguard::ml {

/// Mean silhouette coefficient with Euclidean distance. Points in singleton
/// clusters contribute 0. When X has more than `sample_cap` rows a seeded
/// uniform subsample of `sample_cap` rows is scored instead.
template <class Label>
double silhouette(const Matrix &X, const std::vector<Label> &labels, std::size_t sample_cap = 10000,
                  std::uint64_t seed = 0) {
  if (labels.size() != X.rows)
    throw Error("ml-core", ErrorKind::DimensionMismatch, "labels and rows differ in length");

  std::vector<std::size_t> points;
  if (X.rows > sample_cap) {
    Rng rng(seed);
    points = sample_without_replacement(rng, X.rows, sample_cap);
    std::sort(points.begin(), points.end());
  } else {
    points.resize(X.rows);
    std::iota(points.begin(), points.end(), std::size_t{0});
  }

  std::map<Label, std::size_t> dense;
  for (auto p : points)
    dense.try_emplace(labels[p], dense.size());
  if (dense.size() < 2)
    throw Error("ml-core", ErrorKind::SingleCluster, "silhouette needs at least two distinct labels");

  const std::size_t m = points.size(), c = dense.size();
  std::vector<std::size_t> lab(m);
  std::vector<double> sizes(c, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    lab[i] = dense.at(labels[points[i]]);
    sizes[lab[i]] += 1.0;
  }

  // sums[i * c + j] = sum of distances from point i to cluster j.
  std::vector<double> sums(m * c, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const auto xi = X.row(points[i]);
    for (std::size_t j = i + 1; j < m; ++j) {
      const auto xj = X.row(points[j]);
      double s = 0.0;
      for (std::size_t d = 0; d < X.cols; ++d) {
        const double diff = xi[d] - xj[d];
        s += diff * diff;
      }
      const double dist = std::sqrt(s);
      sums[i * c + lab[j]] += dist;
      sums[j * c + lab[i]] += dist;
    }
  }

  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto own = lab[i];
    if (sizes[own] <= 1.0)
      continue;
    const double a = sums[i * c + own] / (sizes[own] - 1.0);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (j != own)
        b = std::min(b, sums[i * c + j] / sizes[j]);
    const double denom = std::max(a, b);
    if (denom > 0.0)
      total += (b - a) / denom;
  }
  return total / static_cast<double>(m);
}

} // namespace cdnguard::ml
