#pragma once

#include "cdnguard/core.hpp"
#include "cdnguard/features.hpp"

#include <cmath>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace cdnguard::ml {

inline constexpr double kEulerGamma = 0.5772156649;

/// Average path length of an unsuccessful BST search over n points:
/// c(n) = 2 H(n-1) - 2 (n-1) / n with H(m) = ln(m) + gamma. c(n <= 1) = 0.
inline double average_path_length(double n) {
  if (n <= 1.0)
    return 0.0;
  return 2.0 * (std::log(n - 1.0) + kEulerGamma) - 2.0 * (n - 1.0) / n;
}

/// Isolation tree stored as a flat node array; node 0 is the root.
struct ITree {
  struct Node {
    int feature = -1; // -1 marks a leaf
    double split = 0.0;
    int left = -1;
    int right = -1;
    std::size_t size = 0;
  };

  std::vector<Node> nodes;
  std::size_t height_limit = 0;

  double path_length(std::span<const double> row) const {
    std::size_t i = 0;
    double depth = 0.0;
    while (nodes[i].feature >= 0) {
      const auto &n = nodes[i];
      i = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] < n.split ? n.left : n.right);
      depth += 1.0;
    }
    return depth + average_path_length(static_cast<double>(nodes[i].size));
  }
};

struct IsolationForest {
  std::vector<ITree> trees;
  std::size_t n_trees = 100;
  std::size_t subsample_size = 256; // effective ψ (clipped to the row count)
  std::size_t n_features = 0;
  double contamination = 0.1;
  double score_threshold = 0.5;
  std::uint64_t rng_seed = 0;
  std::vector<double> training_scores;

  /// 2^(-E[h(x)] / c(ψ)); higher is more anomalous.
  double score(std::span<const double> row) const {
    if (row.size() != n_features)
      throw Error("ml-core", ErrorKind::DimensionMismatch,
                  "row has " + std::to_string(row.size()) + " features, model expects " +
                      std::to_string(n_features));
    const double c = average_path_length(static_cast<double>(subsample_size));
    if (c <= 0.0)
      return 1.0;
    double total = 0.0;
    for (const auto &t : trees)
      total += t.path_length(row);
    const double mean_path = total / static_cast<double>(trees.size());
    return std::exp2(-mean_path / c);
  }

  bool is_outlier(std::span<const double> row) const { return score(row) > score_threshold; }
};

namespace detail {

inline int build_itree(ITree &tree, const Matrix &X, std::vector<std::size_t> &idx, std::size_t begin,
                       std::size_t end, std::size_t depth, Rng &rng) {
  const int self = static_cast<int>(tree.nodes.size());
  tree.nodes.push_back({});
  tree.nodes[static_cast<std::size_t>(self)].size = end - begin;
  if (depth >= tree.height_limit || end - begin <= 1)
    return self;

  // Pick uniformly among features that still vary in this partition.
  std::vector<std::size_t> candidates;
  std::vector<std::pair<double, double>> ranges(X.cols);
  for (std::size_t j = 0; j < X.cols; ++j) {
    double lo = X(idx[begin], j), hi = lo;
    for (std::size_t k = begin + 1; k < end; ++k) {
      lo = std::min(lo, X(idx[k], j));
      hi = std::max(hi, X(idx[k], j));
    }
    ranges[j] = {lo, hi};
    if (hi > lo)
      candidates.push_back(j);
  }
  if (candidates.empty())
    return self;

  const auto feature = candidates[uniform_index(rng, candidates.size())];
  const auto [lo, hi] = ranges[feature];
  double split = uniform(rng, lo, hi);
  if (split <= lo)
    split = std::nextafter(lo, hi);

  const auto mid = static_cast<std::size_t>(
      std::partition(idx.begin() + static_cast<std::ptrdiff_t>(begin),
                     idx.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t r) { return X(r, feature) < split; }) -
      idx.begin());

  const int left = build_itree(tree, X, idx, begin, mid, depth + 1, rng);
  const int right = build_itree(tree, X, idx, mid, end, depth + 1, rng);
  auto &node = tree.nodes[static_cast<std::size_t>(self)];
  node.feature = static_cast<int>(feature);
  node.split = split;
  node.left = left;
  node.right = right;
  return self;
}

} // namespace detail

/// Rows with score strictly above the (1 - contamination) quantile of the
/// training scores are outliers.
inline double contamination_threshold(const std::vector<double> &scores, double contamination) {
  return quantile(scores, 1.0 - contamination);
}

inline IsolationForest iforest_fit(const Matrix &X, double contamination, std::size_t n_trees = 100,
                                   std::size_t subsample_size = 256, std::uint64_t seed = 0) {
  if (X.rows < 2)
    throw Error("ml-core", ErrorKind::TooFewSamples,
                "isolation forest needs at least 2 rows, got " + std::to_string(X.rows));
  if (!(contamination > 0.0 && contamination <= 0.5))
    throw Error("ml-core", ErrorKind::ConfigInvalid, "contamination must be in (0, 0.5]");
  if (n_trees == 0 || subsample_size == 0)
    throw Error("ml-core", ErrorKind::ConfigInvalid, "n_trees and subsample_size must be positive");

  IsolationForest model;
  model.n_trees = n_trees;
  model.subsample_size = std::min(subsample_size, X.rows);
  model.n_features = X.cols;
  model.contamination = contamination;
  model.rng_seed = seed;
  const auto height =
      static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(model.subsample_size))));

  model.trees.reserve(n_trees);
  for (std::size_t t = 0; t < n_trees; ++t) {
    Rng rng(splitmix64(seed ^ splitmix64(t + 1)));
    auto idx = sample_without_replacement(rng, X.rows, model.subsample_size);
    ITree tree;
    tree.height_limit = height;
    detail::build_itree(tree, X, idx, 0, idx.size(), 0, rng);
    model.trees.push_back(std::move(tree));
  }

  model.training_scores.resize(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i)
    model.training_scores[i] = model.score(X.row(i));
  model.score_threshold = contamination_threshold(model.training_scores, contamination);
  return model;
}

inline double iforest_score(const IsolationForest &model, std::span<const double> row) {
  return model.score(row);
}

/// Training-time outlier flags.
inline std::vector<bool> training_flags(const IsolationForest &model) {
  std::vector<bool> out(model.training_scores.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = model.training_scores[i] > model.score_threshold;
  return out;
}

// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const IsolationForest &m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto &t : m.trees) {
    std::vector<int> feature, left, right;
    std::vector<double> split, size;
    for (const auto &n : t.nodes) {
      feature.push_back(n.feature);
      split.push_back(n.split);
      left.push_back(n.left);
      right.push_back(n.right);
      size.push_back(static_cast<double>(n.size));
    }
    trees.push_back({{"height_limit", t.height_limit},
                     {"feature", feature},
                     {"split", split},
                     {"left", left},
                     {"right", right},
                     {"size", size}});
  }
  return {{"version", 1},
          {"model", "isolation_forest"},
          {"hyper_parameters",
           {{"n_trees", m.n_trees},
            {"subsample_size", m.subsample_size},
            {"contamination", m.contamination},
            {"rng_seed", m.rng_seed}}},
          {"n_features", m.n_features},
          {"score_threshold", m.score_threshold},
          {"training_scores", m.training_scores},
          {"trees", trees}};
}

inline IsolationForest isolation_forest_from_json(const nlohmann::json &j) {
  if (j.at("model") != "isolation_forest" || j.at("version") != 1)
    throw Error("ml-core", ErrorKind::ConfigInvalid, "not a version-1 isolation_forest document");
  IsolationForest m;
  const auto &h = j.at("hyper_parameters");
  m.n_trees = h.at("n_trees");
  m.subsample_size = h.at("subsample_size");
  m.contamination = h.at("contamination");
  m.rng_seed = h.at("rng_seed");
  m.n_features = j.at("n_features");
  m.score_threshold = j.at("score_threshold");
  m.training_scores = j.at("training_scores").get<std::vector<double>>();
  for (const auto &tj : j.at("trees")) {
    ITree t;
    t.height_limit = tj.at("height_limit");
    const auto feature = tj.at("feature").get<std::vector<int>>();
    const auto split = tj.at("split").get<std::vector<double>>();
    const auto left = tj.at("left").get<std::vector<int>>();
    const auto right = tj.at("right").get<std::vector<int>>();
    const auto size = tj.at("size").get<std::vector<double>>();
    for (std::size_t i = 0; i < feature.size(); ++i)
      t.nodes.push_back({feature[i], split[i], left[i], right[i], static_cast<std::size_t>(size[i])});
    m.trees.push_back(std::move(t));
  }
  return m;
}

} // namespace cdnguard::ml
