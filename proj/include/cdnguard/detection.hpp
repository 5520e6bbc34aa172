#pragma once

#include "cdnguard/core.hpp"
#include "cdnguard/features.hpp"
#include "cdnguard/labels.hpp"
#include "cdnguard/ml/bayes_opt.hpp"
#include "cdnguard/ml/gmm.hpp"
#include "cdnguard/ml/isolation_forest.hpp"
#include "cdnguard/ml/silhouette.hpp"

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cdnguard::detection {

// ---------------------------------------------------------------------------
// Pattern profiles.

enum class Comparator { Le, Ge };

struct Threshold {
  enum class Mode { Absolute, Quantile };
  Mode mode = Mode::Absolute;
  double value = 0.0; // absolute value, or q in [0, 1]

  static Threshold absolute(double v) { return {Mode::Absolute, v}; }
  static Threshold quantile(double q) { return {Mode::Quantile, q}; }
};

struct Condition {
  std::string feature;
  Comparator cmp = Comparator::Le;
  Threshold threshold;
};

struct PatternProfile {
  std::string name;
  Label label = Label::Normal;
  std::vector<Condition> conditions;
};

struct Evidence {
  std::string feature;
  double value = 0.0;
  std::string condition;

  bool operator==(const Evidence &) const = default;
};

struct Verdict {
  std::string entity_id;
  Perspective perspective = Perspective::Node;
  Label label = Label::Normal;
  Stage stage = Stage::Pattern;
  std::vector<Evidence> evidence;
  std::optional<std::size_t> cluster_id;
  std::optional<double> score;
};

struct ClusterSummary {
  std::size_t cluster_id = 0;
  std::size_t size = 0;
  std::vector<std::pair<std::string, double>> centroid;

  double at(std::string_view feature) const {
    for (const auto &[k, v] : centroid)
      if (k == feature)
        return v;
    throw Error("detection", ErrorKind::WrongPerspective, "centroid has no feature '" + std::string(feature) + "'");
  }
};

/// Per-feature value distribution of the whole dataset of one perspective,
/// against which quantile thresholds are resolved.
class Reference {
public:
  Reference() = default;

  template <class Row> static Reference of(const std::vector<Row> &rows) {
    Reference ref;
    const auto names = FeatureTraits<Row>::names();
    for (const auto &n : names)
      ref.columns_[n].reserve(rows.size());
    for (const auto &r : rows) {
      const auto vals = FeatureTraits<Row>::values(r);
      for (std::size_t j = 0; j < names.size(); ++j)
        ref.columns_[names[j]].push_back(vals[j]);
    }
    for (auto &[_, col] : ref.columns_)
      std::sort(col.begin(), col.end());
    return ref;
  }

  bool has(std::string_view feature) const { return columns_.contains(std::string(feature)); }

  double quantile(std::string_view feature, double q) const {
    const auto &col = column(feature);
    if (col.empty())
      throw Error("detection", ErrorKind::EmptyInput, "no reference values for '" + std::string(feature) + "'");
    return cdnguard::quantile(col, q);
  }

  double resolve(const Condition &c) const {
    return c.threshold.mode == Threshold::Mode::Absolute ? c.threshold.value : quantile(c.feature, c.threshold.value);
  }

  /// Quantile conditions additionally require the value to lie strictly on
  /// the condition's side of the median, so heavily tied columns do not make
  /// every row "low" or "high".
  std::optional<Evidence> check(const Condition &c, double value) const {
    const double t = resolve(c);
    bool ok = c.cmp == Comparator::Le ? value <= t : value >= t;
    if (ok && c.threshold.mode == Threshold::Mode::Quantile) {
      const double med = quantile(c.feature, 0.5);
      ok = c.cmp == Comparator::Le ? value < med : value > med;
    }
    if (!ok)
      return std::nullopt;
    std::string cond = c.cmp == Comparator::Le ? "<=" : ">=";
    if (c.threshold.mode == Threshold::Mode::Quantile)
      cond += "q" + format_real(c.threshold.value * 100.0) + "(" + format_real(t) + ")";
    else
      cond += format_real(t);
    return Evidence{c.feature, value, cond};
  }

private:
  const std::vector<double> &column(std::string_view feature) const {
    const auto it = columns_.find(std::string(feature));
    if (it == columns_.end())
      throw Error("detection", ErrorKind::WrongPerspective, "unknown feature '" + std::string(feature) + "'");
    return it->second;
  }

  std::map<std::string, std::vector<double>> columns_;
};

/// Evidence for every condition when all of them hold, nullopt otherwise.
template <class Lookup>
std::optional<std::vector<Evidence>> match_profile(const PatternProfile &p, const Lookup &value_of,
                                                   const Reference &ref) {
  std::vector<Evidence> ev;
  for (const auto &c : p.conditions) {
    auto e = ref.check(c, value_of(c.feature));
    if (!e)
      return std::nullopt;
    ev.push_back(std::move(*e));
  }
  return ev;
}

template <class Row> void validate_profile(const PatternProfile &p) {
  for (const auto &c : p.conditions)
    if (!has_feature<Row>(c.feature))
      throw Error("detection", ErrorKind::ConfigInvalid,
                  "profile '" + p.name + "' references feature '" + c.feature + "' missing from the " +
                      FeatureTraits<Row>::perspective + " schema");
}

// ---------------------------------------------------------------------------
// Configuration.

struct Profiles {
  PatternProfile node_dos{"DOS",
                          Label::Dos,
                          {{"request_error_rate", Comparator::Ge, Threshold::quantile(0.9)},
                           {"cache_hit_rate", Comparator::Le, Threshold::absolute(0.5)}}};
  PatternProfile node_cpa{"CPA",
                          Label::CpaUnspecified,
                          {{"cache_hit_rate", Comparator::Le, Threshold::absolute(0.5)},
                           {"legit_ip_cache_hit_rate", Comparator::Le, Threshold::quantile(0.25)},
                           {"data_transfer_rate_mbps", Comparator::Le, Threshold::quantile(0.25)},
                           {"avg_request_popularity", Comparator::Le, Threshold::quantile(0.25)}}};
  PatternProfile content_fla{"CPA_FLA",
                             Label::CpaFla,
                             {{"popularity", Comparator::Le, Threshold::absolute(0.3)},
                              {"req_per_node", Comparator::Ge, Threshold::quantile(0.9)},
                              {"req_per_ip", Comparator::Ge, Threshold::quantile(0.9)}}};
  PatternProfile content_lda{"CPA_LDA",
                             Label::CpaLda,
                             {{"popularity", Comparator::Le, Threshold::absolute(0.3)},
                              {"req_per_node", Comparator::Ge, Threshold::quantile(0.9)},
                              {"req_per_ip", Comparator::Le, Threshold::quantile(0.25)}}};
  PatternProfile ip_dos{"DOS",
                        Label::Dos,
                        {{"n_requests", Comparator::Ge, Threshold::quantile(0.9)},
                         {"avg_request_interval_s", Comparator::Le, Threshold::quantile(0.1)},
                         {"request_error_rate", Comparator::Ge, Threshold::quantile(0.9)}}};
  PatternProfile ip_cpa{"CPA",
                        Label::CpaUnspecified,
                        {{"n_requests", Comparator::Ge, Threshold::quantile(0.9)},
                         {"avg_request_popularity", Comparator::Le, Threshold::quantile(0.25)}}};
  /// FLA/LDA split on an IP's own req_per_content.
  Threshold r_fla = Threshold::quantile(0.95);
};

struct KRange {
  std::size_t lo = 2;
  std::size_t hi = 50;
};

struct DetectionConfig {
  Profiles profiles;
  // iForest
  double contamination_lo = 0.02;
  double contamination_hi = 0.5;
  double contamination_fallback = 0.1;
  std::size_t n_trees = 100;
  std::size_t subsample_size = 256;
  // GMM
  KRange k_content;
  KRange k_dos_ip;
  KRange k_cpa_ip;
  std::size_t gmm_max_iter = 200;
  double gmm_tol = 1e-6;
  double reg_eps = 1e-6;
  double min_responsibility = 0.5;
  // BO
  std::size_t bo_budget = 25;
  std::size_t bo_n_init = 5;
  std::size_t silhouette_cap = 2000;
  std::uint64_t seed = 0;
  /// When set, tuning is skipped and these values are used directly.
  std::optional<double> fixed_contamination;
  std::optional<std::size_t> fixed_k_content;
  std::optional<std::size_t> fixed_k_dos_ip;
  std::optional<std::size_t> fixed_k_cpa_ip;
};

// ---------------------------------------------------------------------------
// Node perspective: isolation forest.

struct ContaminationTuning {
  double contamination = 0.1;
  double silhouette = 0.0;
  bool fallback = false;
  std::vector<std::pair<double, double>> history;
  ml::IsolationForest model;
  std::vector<std::string> warnings;
};

/// BO-GP over the contamination levels m/n in [lo, hi]; the objective is the
/// silhouette of the flagged/unflagged split. When no level produces a
/// defined silhouette the fallback contamination is used.
inline ContaminationTuning tune_contamination(const Matrix &X, const DetectionConfig &cfg = {}) {
  const auto n = static_cast<double>(X.rows);
  if (X.rows < 2)
    throw Error("ml-core", ErrorKind::TooFewSamples, "contamination tuning needs at least 2 rows");
  ContaminationTuning out;
  auto fit = [&](double c) { return ml::iforest_fit(X, c, cfg.n_trees, cfg.subsample_size, cfg.seed); };
  auto objective = [&](double c) {
    const auto flags = ml::training_flags(fit(c));
    try {
      return ml::silhouette(X, std::vector<int>(flags.begin(), flags.end()), cfg.silhouette_cap, cfg.seed);
    } catch (const Error &e) {
      if (e.kind() == ErrorKind::SingleCluster)
        return -1.0;
      throw;
    }
  };

  if (cfg.fixed_contamination) {
    out.contamination = *cfg.fixed_contamination;
    out.model = fit(out.contamination);
    return out;
  }

  const double m_lo = std::max(1.0, std::ceil(cfg.contamination_lo * n - 1e-9));
  const double m_hi = std::floor(cfg.contamination_hi * n + 1e-9);
  double best_c = cfg.contamination_fallback, best_s = -1.0;
  if (m_lo <= m_hi) {
    ml::BoConfig bo;
    bo.space = {m_lo, m_hi, true};
    bo.budget = cfg.bo_budget;
    bo.n_init = std::min(cfg.bo_n_init, cfg.bo_budget - 1);
    bo.rng_seed = cfg.seed;
    const auto res = ml::bo_gp_optimize([&](double m) { return objective(m / n); }, bo);
    for (const auto &[m, s] : res.history)
      out.history.emplace_back(m / n, s);
    best_c = res.best_x / n;
    best_s = res.best_y;
  }
  if (best_s <= -1.0) {
    out.fallback = true;
    out.contamination = cfg.contamination_fallback;
    out.silhouette = 0.0;
    out.warnings.push_back("silhouette undefined for every contamination level; using fallback " +
                           format_real(cfg.contamination_fallback));
  } else {
    out.contamination = best_c;
    out.silhouette = best_s;
  }
  out.model = fit(out.contamination);
  return out;
}

struct NodeDetection {
  ContaminationTuning tuning;
  std::vector<Verdict> model_verdicts;
  std::vector<Verdict> verdicts; // pattern stage
};

/// Labels a node row against the node profiles (DoS first). Returns Normal
/// with empty evidence on mismatch.
inline std::pair<Label, std::vector<Evidence>> match_node(const NodeFeatures &row, const Profiles &p,
                                                         const Reference &ref) {
  auto value_of = [&](const std::string &f) { return feature_value(row, f); };
  if (auto ev = match_profile(p.node_dos, value_of, ref))
    return {p.node_dos.label, std::move(*ev)};
  if (auto ev = match_profile(p.node_cpa, value_of, ref))
    return {p.node_cpa.label, std::move(*ev)};
  return {Label::Normal, {}};
}

inline NodeDetection detect_abnormal_nodes(const std::vector<NodeFeatures> &rows, const DetectionConfig &cfg = {}) {
  validate_profile<NodeFeatures>(cfg.profiles.node_dos);
  validate_profile<NodeFeatures>(cfg.profiles.node_cpa);
  NodeDetection out;
  const auto fm = select_feature_subset(rows, Purpose::Node);
  const auto X = fm.to_matrix();
  out.tuning = tune_contamination(X, cfg);
  const auto flags = ml::training_flags(out.tuning.model);
  const auto ref = Reference::of(rows);
  const double error_median = ref.quantile("request_error_rate", 0.5);

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double score = out.tuning.model.training_scores[i];
    Verdict model{rows[i].node_id, Perspective::Node, Label::Normal, Stage::Model, {}, std::nullopt, score};
    Verdict pattern = model;
    pattern.stage = Stage::Pattern;
    if (flags[i]) {
      const Evidence flag{"anomaly_score", score, ">" + format_real(out.tuning.model.score_threshold)};
      model.label = rows[i].request_error_rate > error_median ? Label::Dos : Label::CpaUnspecified;
      model.evidence.push_back(flag);
      auto [label, ev] = match_node(rows[i], cfg.profiles, ref);
      if (label != Label::Normal) {
        pattern.label = label;
        pattern.evidence.push_back(flag);
        pattern.evidence.insert(pattern.evidence.end(), ev.begin(), ev.end());
      }
    }
    out.model_verdicts.push_back(std::move(model));
    out.verdicts.push_back(std::move(pattern));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clustering perspectives: GMM.

struct ComponentTuning {
  std::size_t k = 2;
  double silhouette = 0.0;
  ml::GmmParams params;
  std::vector<std::pair<double, double>> history;
};

inline ml::GmmOptions gmm_options(const DetectionConfig &cfg) {
  ml::GmmOptions o;
  o.reg_eps = cfg.reg_eps;
  o.max_iter = cfg.gmm_max_iter;
  o.tol = cfg.gmm_tol;
  o.seed = cfg.seed;
  return o;
}

/// BO-GP over the integer component count maximizing the silhouette of the
/// hard assignments. The range is clipped to [2, rows - 1].
inline ComponentTuning tune_components(const Matrix &X, KRange range, const DetectionConfig &cfg = {},
                                       std::optional<std::size_t> fixed_k = std::nullopt) {
  if (X.rows < 3)
    throw Error("ml-core", ErrorKind::TooFewSamples,
                "component tuning needs at least 3 rows, got " + std::to_string(X.rows));
  const auto opts = gmm_options(cfg);
  ComponentTuning out;
  if (fixed_k) {
    out.k = std::clamp<std::size_t>(*fixed_k, 1, X.rows);
    out.params = ml::gmm_fit_em(X, out.k, opts);
    return out;
  }
  const std::size_t lo = std::max<std::size_t>(2, range.lo);
  const std::size_t hi = std::min(range.hi, X.rows - 1);
  if (lo > hi)
    throw Error("detection", ErrorKind::ConfigInvalid,
                "k_range [" + std::to_string(range.lo) + ", " + std::to_string(range.hi) + "] is empty for " +
                    std::to_string(X.rows) + " rows");

  auto score = [&](const ml::GmmParams &p) {
    const auto labels = ml::hard_assignments(ml::gmm_predict_all(p, X));
    try {
      return ml::silhouette(X, labels, cfg.silhouette_cap, cfg.seed);
    } catch (const Error &e) {
      if (e.kind() == ErrorKind::SingleCluster)
        return -1.0;
      throw;
    }
  };

  if (lo == hi) {
    out.k = lo;
    out.params = ml::gmm_fit_em(X, lo, opts);
    out.silhouette = score(out.params);
    out.history.emplace_back(static_cast<double>(lo), out.silhouette);
    return out;
  }

  std::map<std::size_t, ml::GmmParams> fitted;
  ml::BoConfig bo;
  bo.space = {static_cast<double>(lo), static_cast<double>(hi), true};
  bo.budget = cfg.bo_budget;
  bo.n_init = std::min(cfg.bo_n_init, cfg.bo_budget - 1);
  bo.rng_seed = cfg.seed;
  const auto res = ml::bo_gp_optimize(
      [&](double kd) {
        const auto k = static_cast<std::size_t>(kd);
        auto p = ml::gmm_fit_em(X, k, opts);
        const double s = score(p);
        fitted[k] = std::move(p);
        return s;
      },
      bo);
  out.k = static_cast<std::size_t>(res.best_x);
  out.silhouette = res.best_y;
  out.history = res.history;
  out.params = std::move(fitted.at(out.k));
  return out;
}

struct ClusterDetection {
  ComponentTuning tuning;
  std::vector<Verdict> verdicts;
  std::vector<ClusterSummary> clusters;
};

namespace detail {

template <class Row>
std::vector<ClusterSummary> summarize_clusters(const std::vector<Row> &rows, const std::vector<std::size_t> &labels) {
  const auto names = FeatureTraits<Row>::names();
  std::map<std::size_t, std::pair<std::size_t, std::vector<double>>> acc;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto &[n, sums] = acc[labels[i]];
    if (sums.empty())
      sums.assign(names.size(), 0.0);
    const auto vals = FeatureTraits<Row>::values(rows[i]);
    for (std::size_t j = 0; j < names.size(); ++j)
      sums[j] += vals[j];
    ++n;
  }
  std::vector<ClusterSummary> out;
  for (const auto &[id, a] : acc) {
    ClusterSummary s{id, a.first, {}};
    for (std::size_t j = 0; j < names.size(); ++j)
      s.centroid.emplace_back(names[j], a.second[j] / static_cast<double>(a.first));
    out.push_back(std::move(s));
  }
  return out;
}

/// Shared cluster-level labeling: fit, summarize, match each centroid against
/// the profiles in order, and let members inherit the cluster label unless
/// their own responsibility is below the confidence floor.
template <class Row>
ClusterDetection cluster_and_label(const std::vector<Row> &rows, Purpose purpose, Perspective perspective,
                                   const std::vector<const PatternProfile *> &profiles, KRange range,
                                   std::optional<std::size_t> fixed_k, const DetectionConfig &cfg) {
  for (const auto *p : profiles)
    validate_profile<Row>(*p);
  ClusterDetection out;
  const auto fm = select_feature_subset(rows, purpose);
  const auto X = fm.to_matrix();
  out.tuning = tune_components(X, range, cfg, fixed_k);
  const auto preds = ml::gmm_predict_all(out.tuning.params, X);
  const auto labels = ml::hard_assignments(preds);
  out.clusters = summarize_clusters(rows, labels);

  const auto ref = Reference::of(rows);
  std::map<std::size_t, std::pair<Label, std::vector<Evidence>>> cluster_label;
  for (const auto &c : out.clusters) {
    auto value_of = [&](const std::string &f) { return c.at(f); };
    cluster_label[c.cluster_id] = {Label::Normal, {}};
    for (const auto *p : profiles)
      if (auto ev = match_profile(*p, value_of, ref)) {
        cluster_label[c.cluster_id] = {p->label, std::move(*ev)};
        break;
      }
  }

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto cid = labels[i];
    const double resp = preds[i].responsibilities[cid];
    Verdict v{FeatureTraits<Row>::id(rows[i]), perspective, Label::Normal, Stage::Pattern, {}, cid, resp};
    const auto &[label, ev] = cluster_label.at(cid);
    if (label != Label::Normal) {
      if (resp < cfg.min_responsibility) {
        v.evidence.push_back({"responsibility", resp, "<" + format_real(cfg.min_responsibility) + " low-confidence"});
      } else {
        v.label = label;
        v.evidence = ev;
        for (auto &e : v.evidence)
          e.condition = "centroid " + e.condition;
      }
    }
    out.verdicts.push_back(std::move(v));
  }
  return out;
}

} // namespace detail

inline ClusterDetection detect_abnormal_contents(const std::vector<ContentFeatures> &rows,
                                                 const DetectionConfig &cfg = {}) {
  return detail::cluster_and_label(rows, Purpose::Content, Perspective::Content,
                                   {&cfg.profiles.content_fla, &cfg.profiles.content_lda}, cfg.k_content,
                                   cfg.fixed_k_content, cfg);
}

inline ClusterDetection detect_dos_ips(const std::vector<IpFeatures> &rows, const DetectionConfig &cfg = {}) {
  return detail::cluster_and_label(rows, Purpose::DosIp, Perspective::Ip, {&cfg.profiles.ip_dos}, cfg.k_dos_ip,
                                   cfg.fixed_k_dos_ip, cfg);
}

/// CPA clusters come from the centroid match; each member's variant is then
/// decided by its own req_per_content against R_fla.
inline ClusterDetection detect_cpa_ips(const std::vector<IpFeatures> &rows, const DetectionConfig &cfg = {}) {
  auto out = detail::cluster_and_label(rows, Purpose::CpaIp, Perspective::Ip, {&cfg.profiles.ip_cpa}, cfg.k_cpa_ip,
                                       cfg.fixed_k_cpa_ip, cfg);
  const auto ref = Reference::of(rows);
  const Condition fla{"req_per_content", Comparator::Ge, cfg.profiles.r_fla};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto &v = out.verdicts[i];
    if (!is_cpa(v.label))
      continue;
    if (auto ev = ref.check(fla, rows[i].req_per_content)) {
      v.label = Label::CpaFla;
      v.evidence.push_back(*ev);
    } else {
      v.label = Label::CpaLda;
      v.evidence.push_back({"req_per_content", rows[i].req_per_content, "<" + format_real(ref.resolve(fla))});
    }
  }
  return out;
}

/// Merges the two IP detectors into one verdict per IP. An IP flagged by
/// both is dos when its own error rate satisfies the DoS error condition.
inline std::vector<Verdict> combine_ip_verdicts(const std::vector<IpFeatures> &rows, const ClusterDetection &dos,
                                                const ClusterDetection &cpa, const DetectionConfig &cfg = {}) {
  const auto ref = Reference::of(rows);
  std::optional<Condition> err;
  for (const auto &c : cfg.profiles.ip_dos.conditions)
    if (c.feature == "request_error_rate")
      err = c;
  std::vector<Verdict> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto &d = dos.verdicts[i];
    const auto &c = cpa.verdicts[i];
    if (is_attack(d.label) && is_attack(c.label)) {
      const bool dos_wins = !err || ref.check(*err, rows[i].request_error_rate).has_value();
      out.push_back(dos_wins ? d : c);
    } else if (is_attack(c.label)) {
      out.push_back(c);
    } else {
      out.push_back(d);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization.

inline std::string format_evidence(const std::vector<Evidence> &ev) {
  std::string out;
  for (const auto &e : ev) {
    if (!out.empty())
      out += '|';
    out += e.feature + '=' + format_real(e.value) + ' ' + e.condition;
  }
  return out;
}

inline void write_verdict_table(std::ostream &os, const std::vector<Verdict> &verdicts) {
  os << "entity,perspective,label,stage,cluster_id,score,evidence\n";
  for (const auto &v : verdicts) {
    os << v.entity_id << ',' << to_string(v.perspective) << ',' << to_string(v.label) << ',' << to_string(v.stage)
       << ',' << (v.cluster_id ? std::to_string(*v.cluster_id) : "") << ','
       << (v.score ? format_real(*v.score) : "") << ",\"" << format_evidence(v.evidence) << "\"\n";
  }
}

inline void write_cluster_table(std::ostream &os, const std::vector<ClusterSummary> &clusters) {
  if (clusters.empty()) {
    os << "cluster_id,size\n";
    return;
  }
  os << "cluster_id,size";
  for (const auto &[k, _] : clusters.front().centroid)
    os << ',' << k;
  os << '\n';
  for (const auto &c : clusters) {
    os << c.cluster_id << ',' << c.size;
    for (const auto &[_, v] : c.centroid)
      os << ',' << format_real(v);
    os << '\n';
  }
}

inline nlohmann::json to_json(const Evidence &e) {
  return {{"feature", e.feature}, {"value", e.value}, {"condition", e.condition}};
}

inline nlohmann::json to_json(const Verdict &v) {
  nlohmann::json ev = nlohmann::json::array();
  for (const auto &e : v.evidence)
    ev.push_back(to_json(e));
  nlohmann::json j{{"entity", v.entity_id},
                   {"perspective", to_string(v.perspective)},
                   {"label", to_string(v.label)},
                   {"stage", to_string(v.stage)},
                   {"evidence", ev}};
  if (v.cluster_id)
    j["cluster_id"] = *v.cluster_id;
  if (v.score)
    j["score"] = *v.score;
  return j;
}

inline Verdict verdict_from_json(const nlohmann::json &j) {
  Verdict v;
  v.entity_id = j.at("entity").get<std::string>();
  v.perspective = parse_perspective(j.at("perspective").get<std::string>());
  v.label = parse_label(j.at("label").get<std::string>());
  v.stage = parse_stage(j.at("stage").get<std::string>());
  for (const auto &e : j.at("evidence"))
    v.evidence.push_back({e.at("feature").get<std::string>(), e.at("value").get<double>(),
                          e.at("condition").get<std::string>()});
  if (j.contains("cluster_id"))
    v.cluster_id = j["cluster_id"].get<std::size_t>();
  if (j.contains("score"))
    v.score = j["score"].get<double>();
  return v;
}

inline nlohmann::json to_json(const ClusterSummary &c) {
  nlohmann::json centroid = nlohmann::json::object();
  for (const auto &[k, v] : c.centroid)
    centroid[k] = v;
  return {{"cluster_id", c.cluster_id}, {"size", c.size}, {"centroid", centroid}};
}

// Profile documents: {"name", "label", "conditions": [{"feature", "cmp": "le"|"ge",
// "absolute": v | "quantile": q}]}.

inline nlohmann::json to_json(const Threshold &t) {
  return t.mode == Threshold::Mode::Absolute ? nlohmann::json{{"absolute", t.value}}
                                             : nlohmann::json{{"quantile", t.value}};
}

inline Threshold threshold_from_json(const nlohmann::json &j) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "absolute" && it.key() != "quantile")
      throw Error("detection", ErrorKind::ConfigInvalid, "unknown threshold key '" + it.key() + "'");
  if (j.contains("absolute") == j.contains("quantile"))
    throw Error("detection", ErrorKind::ConfigInvalid, "threshold needs exactly one of 'absolute' or 'quantile'");
  if (j.contains("absolute"))
    return Threshold::absolute(j["absolute"].get<double>());
  const double q = j["quantile"].get<double>();
  if (!(q >= 0.0 && q <= 1.0))
    throw Error("detection", ErrorKind::ConfigInvalid, "quantile must lie in [0, 1]");
  return Threshold::quantile(q);
}

inline nlohmann::json to_json(const PatternProfile &p) {
  nlohmann::json conds = nlohmann::json::array();
  for (const auto &c : p.conditions) {
    auto j = to_json(c.threshold);
    j["feature"] = c.feature;
    j["cmp"] = c.cmp == Comparator::Le ? "le" : "ge";
    conds.push_back(j);
  }
  return {{"name", p.name}, {"label", to_string(p.label)}, {"conditions", conds}};
}

inline PatternProfile profile_from_json(const nlohmann::json &j) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "name" && it.key() != "label" && it.key() != "conditions")
      throw Error("detection", ErrorKind::ConfigInvalid, "unknown profile key '" + it.key() + "'");
  PatternProfile p;
  p.name = j.at("name").get<std::string>();
  p.label = parse_label(j.at("label").get<std::string>());
  for (const auto &cj : j.at("conditions")) {
    Condition c;
    nlohmann::json t = nlohmann::json::object();
    for (auto it = cj.begin(); it != cj.end(); ++it) {
      if (it.key() == "feature")
        c.feature = it->get<std::string>();
      else if (it.key() == "cmp") {
        const auto s = it->get<std::string>();
        if (s != "le" && s != "ge")
          throw Error("detection", ErrorKind::ConfigInvalid, "comparator must be 'le' or 'ge'");
        c.cmp = s == "le" ? Comparator::Le : Comparator::Ge;
      } else if (it.key() == "absolute" || it.key() == "quantile")
        t[it.key()] = *it;
      else
        throw Error("detection", ErrorKind::ConfigInvalid, "unknown condition key '" + it.key() + "'");
    }
    c.threshold = threshold_from_json(t);
    p.conditions.push_back(std::move(c));
  }
  return p;
}

} // namespace cdnguard::detection
