#pragma once

#include "cdnguard/core.hpp"
#include "cdnguard/detection.hpp"
#include "cdnguard/features.hpp"
#include "cdnguard/labels.hpp"
#include "cdnguard/log_model.hpp"
#include "cdnguard/validation.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cdnguard::pipeline {

using detection::Threshold;
using detection::Verdict;

// ---------------------------------------------------------------------------
// Configuration document.

struct PipelineConfig {
  std::string input_log;
  std::string output_dir = "out";
  std::string truth;
  std::string calendar;
  std::string ao_expectations;
  std::string scenario;
  std::uint64_t seed = 0;
  LogSchema schema;
  int max_empty_fields = 3;
  /// An IP counts as legitimate for legit_ip_cache_hit_rate when its average
  /// request popularity reaches this threshold.
  Threshold legit_popularity = Threshold::absolute(0.9);
  detection::DetectionConfig detection;
  validation::ValidationConfig validation;
  std::size_t latency_batch = 10000;
  /// Canonical form of the parsed document, hashed into output files.
  nlohmann::json canonical;

  std::string hash() const { return hex64(fnv1a64(canonical.dump())); }
};

namespace detail {

inline void reject_unknown(const nlohmann::json &j, std::initializer_list<std::string_view> keys, const char *what) {
  if (!j.is_object())
    throw Error("cli", ErrorKind::ConfigInvalid, std::string(what) + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
      throw Error("cli", ErrorKind::ConfigInvalid, std::string("unknown ") + what + " key '" + it.key() + "'");
}

inline detection::KRange k_range(const nlohmann::json &j) {
  const auto v = j.get<std::vector<std::size_t>>();
  if (v.size() != 2 || v[0] < 2 || v[0] > v[1])
    throw Error("cli", ErrorKind::ConfigInvalid, "k range must be [lo, hi] with 2 <= lo <= hi");
  return {v[0], v[1]};
}

inline std::string resolve(const std::filesystem::path &base, const std::string &p) {
  if (p.empty())
    return p;
  const std::filesystem::path path(p);
  return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

} // namespace detail

/// Parses a pipeline document; relative paths resolve against `base_dir`.
inline PipelineConfig config_from_json(const nlohmann::json &j, const std::filesystem::path &base_dir = ".") {
  using detail::reject_unknown;
  reject_unknown(j,
                 {"input_log", "output_dir", "truth", "calendar", "ao_expectations", "scenario", "seed", "schema",
                  "max_empty_fields", "legit_popularity", "detection", "validation", "latency"},
                 "config");
  PipelineConfig c;
  c.input_log = detail::resolve(base_dir, j.value("input_log", std::string()));
  c.output_dir = detail::resolve(base_dir, j.value("output_dir", c.output_dir));
  c.truth = detail::resolve(base_dir, j.value("truth", std::string()));
  c.calendar = detail::resolve(base_dir, j.value("calendar", std::string()));
  c.ao_expectations = detail::resolve(base_dir, j.value("ao_expectations", std::string()));
  c.scenario = detail::resolve(base_dir, j.value("scenario", std::string()));
  c.seed = j.value("seed", c.seed);
  if (j.contains("schema"))
    c.schema = LogSchema::from_json(j["schema"]);
  c.max_empty_fields = j.value("max_empty_fields", c.max_empty_fields);
  if (j.contains("legit_popularity"))
    c.legit_popularity = detection::threshold_from_json(j["legit_popularity"]);

  auto &d = c.detection;
  if (j.contains("detection")) {
    const auto &dj = j["detection"];
    reject_unknown(dj,
                   {"contamination_range", "contamination_fallback", "n_trees", "subsample_size", "k_content",
                    "k_dos_ip", "k_cpa_ip", "gmm_max_iter", "gmm_tol", "reg_eps", "min_responsibility", "bo_budget",
                    "bo_n_init", "silhouette_cap", "profiles", "r_fla"},
                   "detection");
    if (dj.contains("contamination_range")) {
      const auto r = dj["contamination_range"].get<std::vector<double>>();
      if (r.size() != 2 || !(r[0] > 0.0 && r[0] <= r[1] && r[1] <= 0.5))
        throw Error("cli", ErrorKind::ConfigInvalid, "contamination_range must be [lo, hi] within (0, 0.5]");
      d.contamination_lo = r[0];
      d.contamination_hi = r[1];
    }
    d.contamination_fallback = dj.value("contamination_fallback", d.contamination_fallback);
    d.n_trees = dj.value("n_trees", d.n_trees);
    d.subsample_size = dj.value("subsample_size", d.subsample_size);
    if (dj.contains("k_content"))
      d.k_content = detail::k_range(dj["k_content"]);
    if (dj.contains("k_dos_ip"))
      d.k_dos_ip = detail::k_range(dj["k_dos_ip"]);
    if (dj.contains("k_cpa_ip"))
      d.k_cpa_ip = detail::k_range(dj["k_cpa_ip"]);
    d.gmm_max_iter = dj.value("gmm_max_iter", d.gmm_max_iter);
    d.gmm_tol = dj.value("gmm_tol", d.gmm_tol);
    d.reg_eps = dj.value("reg_eps", d.reg_eps);
    d.min_responsibility = dj.value("min_responsibility", d.min_responsibility);
    d.bo_budget = dj.value("bo_budget", d.bo_budget);
    d.bo_n_init = dj.value("bo_n_init", d.bo_n_init);
    d.silhouette_cap = dj.value("silhouette_cap", d.silhouette_cap);
    if (d.bo_budget < 2 || d.bo_n_init < 1)
      throw Error("cli", ErrorKind::ConfigInvalid, "bo_budget must be >= 2 and bo_n_init >= 1");
    if (dj.contains("r_fla"))
      d.profiles.r_fla = detection::threshold_from_json(dj["r_fla"]);
    if (dj.contains("profiles")) {
      const auto &pj = dj["profiles"];
      reject_unknown(pj, {"node_dos", "node_cpa", "content_fla", "content_lda", "ip_dos", "ip_cpa"}, "profiles");
      auto set = [&](const char *key, detection::PatternProfile &slot) {
        if (pj.contains(key))
          slot = detection::profile_from_json(pj[key]);
      };
      set("node_dos", d.profiles.node_dos);
      set("node_cpa", d.profiles.node_cpa);
      set("content_fla", d.profiles.content_fla);
      set("content_lda", d.profiles.content_lda);
      set("ip_dos", d.profiles.ip_dos);
      set("ip_cpa", d.profiles.ip_cpa);
      detection::validate_profile<NodeFeatures>(d.profiles.node_dos);
      detection::validate_profile<NodeFeatures>(d.profiles.node_cpa);
      detection::validate_profile<ContentFeatures>(d.profiles.content_fla);
      detection::validate_profile<ContentFeatures>(d.profiles.content_lda);
      detection::validate_profile<IpFeatures>(d.profiles.ip_dos);
      detection::validate_profile<IpFeatures>(d.profiles.ip_cpa);
    }
  }

  auto &v = c.validation;
  if (j.contains("validation")) {
    const auto &vj = j["validation"];
    reject_unknown(vj,
                   {"z_thresh", "hit_drop", "crowd_fraction", "crowd_hit_rate", "period_error_rate", "period_hit_rate",
                    "period_n_requests_q", "period_k", "n_min", "content_attack_share",
                    "content_revert_popularity_q"},
                   "validation");
    v.z_thresh = vj.value("z_thresh", v.z_thresh);
    v.hit_drop = vj.value("hit_drop", v.hit_drop);
    v.crowd_fraction = vj.value("crowd_fraction", v.crowd_fraction);
    v.crowd_hit_rate = vj.value("crowd_hit_rate", v.crowd_hit_rate);
    v.period_error_rate = vj.value("period_error_rate", v.period_error_rate);
    v.period_hit_rate = vj.value("period_hit_rate", v.period_hit_rate);
    v.period_n_requests_q = vj.value("period_n_requests_q", v.period_n_requests_q);
    if (vj.contains("period_k"))
      v.period_k = detail::k_range(vj["period_k"]);
    v.n_min = vj.value("n_min", v.n_min);
    v.content_attack_share = vj.value("content_attack_share", v.content_attack_share);
    v.content_revert_popularity_q = vj.value("content_revert_popularity_q", v.content_revert_popularity_q);
  }
  if (j.contains("latency")) {
    reject_unknown(j["latency"], {"batch_size"}, "latency");
    c.latency_batch = j["latency"].value("batch_size", c.latency_batch);
    if (c.latency_batch == 0)
      throw Error("cli", ErrorKind::ConfigInvalid, "latency batch_size must be positive");
  }
  c.canonical = j;
  return c;
}

/// Applies the seed to every seeded stage and records it in the canonical form.
inline void set_seed(PipelineConfig &c, std::uint64_t seed) {
  c.seed = seed;
  c.canonical["seed"] = seed;
  c.detection.seed = seed;
  c.validation.seed = seed;
}

inline PipelineConfig load_config(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw Error("cli", ErrorKind::Io, "cannot read config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw Error("cli", ErrorKind::ConfigInvalid, "config '" + path + "' is not valid JSON: " + e.what());
  }
  auto c = config_from_json(j, std::filesystem::path(path).parent_path());
  set_seed(c, c.seed);
  return c;
}

// ---------------------------------------------------------------------------
// Detection stage.

struct PhaseTimes {
  double features_s = 0.0;
  double model_s = 0.0;
};

struct Features {
  PopularityMap popularity;
  std::vector<IpFeatures> ips;
  std::vector<NodeFeatures> nodes;
  std::vector<ContentFeatures> contents;
  std::vector<AoFeatures> aos;
  double legit_popularity = 0.9;
};

inline Features compute_features(const std::vector<CleanRecord> &records, const PipelineConfig &cfg) {
  Features f;
  f.popularity = compute_popularity(records);
  f.ips = aggregate_by_ip(records, f.popularity);
  if (cfg.legit_popularity.mode == Threshold::Mode::Absolute) {
    f.legit_popularity = cfg.legit_popularity.value;
  } else {
    std::vector<double> pops;
    for (const auto &r : f.ips)
      pops.push_back(r.avg_request_popularity);
    f.legit_popularity = quantile(pops, cfg.legit_popularity.value);
  }
  f.nodes = aggregate_by_node(records, f.popularity, f.ips, f.legit_popularity);
  f.contents = aggregate_by_content(records, f.popularity);
  f.aos = aggregate_by_ao(records, f.popularity);
  return f;
}

struct DetectOutput {
  Features features;
  std::set<Perspective> perspectives; // those actually detected
  detection::NodeDetection nodes;
  detection::ClusterDetection contents;
  detection::ClusterDetection dos_ips;
  detection::ClusterDetection cpa_ips;
  std::vector<Verdict> ip_verdicts; // combined pattern-stage IP verdicts
  PhaseTimes times;
  std::vector<std::string> warnings;

  const std::vector<Verdict> &verdicts(Perspective p) const {
    switch (p) {
    case Perspective::Node: return nodes.verdicts;
    case Perspective::Ip: return ip_verdicts;
    case Perspective::Content: return contents.verdicts;
    }
    return ip_verdicts;
  }
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

} // namespace detail

/// parse/clean happen upstream; this runs features, tuning and pattern
/// labeling for every perspective, or only `only` when given.
inline DetectOutput run_detect(const std::vector<CleanRecord> &records, const PipelineConfig &cfg,
                               std::optional<Perspective> only = std::nullopt) {
  if (records.empty())
    throw Error("features", ErrorKind::EmptyInput, "no records survived cleaning");
  DetectOutput out;
  auto t0 = std::chrono::steady_clock::now();
  out.features = compute_features(records, cfg);
  out.times.features_s = detail::seconds_since(t0);
  t0 = std::chrono::steady_clock::now();
  const auto &f = out.features;
  auto wanted = [&](Perspective p) { return !only || *only == p; };
  if (wanted(Perspective::Node)) {
    out.nodes = detection::detect_abnormal_nodes(f.nodes, cfg.detection);
    for (const auto &w : out.nodes.tuning.warnings)
      out.warnings.push_back("[detection] " + w);
    out.perspectives.insert(Perspective::Node);
  }
  if (wanted(Perspective::Content)) {
    out.contents = detection::detect_abnormal_contents(f.contents, cfg.detection);
    out.perspectives.insert(Perspective::Content);
  }
  if (wanted(Perspective::Ip)) {
    out.dos_ips = detection::detect_dos_ips(f.ips, cfg.detection);
    out.cpa_ips = detection::detect_cpa_ips(f.ips, cfg.detection);
    out.ip_verdicts = detection::combine_ip_verdicts(f.ips, out.dos_ips, out.cpa_ips, cfg.detection);
    out.perspectives.insert(Perspective::Ip);
  }
  out.times.model_s = detail::seconds_since(t0);
  return out;
}

/// Detection configuration that reuses the hyper-parameters tuned by `run`.
inline detection::DetectionConfig frozen(const detection::DetectionConfig &base, const DetectOutput &run) {
  auto d = base;
  d.fixed_contamination = run.nodes.tuning.contamination;
  d.fixed_k_content = run.contents.tuning.k;
  d.fixed_k_dos_ip = run.dos_ips.tuning.k;
  d.fixed_k_cpa_ip = run.cpa_ips.tuning.k;
  return d;
}

// ---------------------------------------------------------------------------
// Validation stage.

struct RuleTraceEntry {
  Perspective perspective = Perspective::Node;
  std::string entity_id;
  Label from = Label::Normal;
  Label to = Label::Normal;
  std::string rule;
  std::string detail;
};

struct ValidateOutput {
  std::vector<Verdict> nodes;
  std::vector<Verdict> ips;
  std::vector<Verdict> contents;
  std::vector<validation::HourlySeries> series;
  std::vector<validation::AbnormalPeriod> periods;
  std::vector<validation::AttackHypothesis> hypotheses;
  std::vector<RuleTraceEntry> trace;
  std::vector<std::string> warnings;
  double seconds = 0.0;

  const std::vector<Verdict> &verdicts(Perspective p) const {
    switch (p) {
    case Perspective::Node: return nodes;
    case Perspective::Ip: return ips;
    case Perspective::Content: return contents;
    }
    return ips;
  }
};

namespace detail {

inline void trace_changes(const std::vector<Verdict> &before, const std::vector<Verdict> &after,
                          std::vector<RuleTraceEntry> &trace) {
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (before[i].label == after[i].label)
      continue;
    RuleTraceEntry e{after[i].perspective, after[i].entity_id, before[i].label, after[i].label, "", ""};
    for (auto it = after[i].evidence.rbegin(); it != after[i].evidence.rend(); ++it)
      if (it->feature.rfind("rule:", 0) == 0 && it->feature != "rule:ao-confirm") { // ao-confirm never relabels
        e.rule = it->feature.substr(5);
        e.detail = it->condition;
        break;
      }
    trace.push_back(std::move(e));
  }
}

} // namespace detail

/// Validation chain in its fixed order: crowd filter, abnormal-period
/// analysis, cross-perspective validation, AO analysis.
inline ValidateOutput run_validate(const std::vector<CleanRecord> &records, const DetectOutput &det,
                                   const std::optional<EventCalendar> &calendar,
                                   const std::optional<std::vector<validation::AoProfileExpectation>> &expectations,
                                   const PipelineConfig &cfg) {
  using namespace validation;
  const auto t0 = std::chrono::steady_clock::now();
  ValidateOutput out;
  auto nodes = det.nodes.verdicts;
  auto ips = det.ip_verdicts;
  auto contents = det.contents.verdicts;
  const auto &vc = cfg.validation;

  // Time series and abnormal periods.
  const EventCalendar *cal = calendar ? &*calendar : nullptr;
  try {
    out.series.push_back(build_hourly_series(records, Metric::NRequests));
    out.series.push_back(build_hourly_series(records, Metric::CacheHitRate));
    out.series.push_back(build_hourly_series(records, Metric::AvgPopularity, &det.features.popularity));
    std::vector<AbnormalPeriod> all;
    for (std::size_t s = 0; s < 2; ++s)
      for (auto &p : find_abnormal_periods(out.series[s], cal, vc))
        all.push_back(std::move(p));
    out.periods = merge_periods(std::move(all));
  } catch (const Error &e) {
    if (e.kind() != ErrorKind::SpanTooShort)
      throw;
    out.warnings.push_back("[validation] time-series analysis skipped: " + e.detail());
  }

  // 1. crowd filter
  if (calendar)
    ips = crowd_event_filter(std::move(ips), records, *calendar, vc);
  else
    out.warnings.push_back("[validation] no calendar supplied; crowd filter skipped, periods unverified");

  // 2. abnormal-period analysis
  for (const auto &p : out.periods) {
    if (!p.attack_candidate())
      continue;
    std::vector<CleanRecord> in_period;
    for (const auto &r : records)
      if (p.contains(r.timestamp))
        in_period.push_back(r);
    if (in_period.empty())
      continue;
    const auto pa = analyze_abnormal_period(in_period, p.start, p.end, vc, cfg.detection);
    out.hypotheses.push_back(pa.hypothesis);
    std::unordered_map<std::string, const Verdict *> found;
    for (const auto &v : pa.ip_verdicts)
      found[v.entity_id] = &v;
    for (auto &v : ips)
      if (const auto it = found.find(v.entity_id); it != found.end() && !is_attack(v.label)) {
        v.evidence = it->second->evidence;
        validation::detail::relabel(v, Label::Dos, "period-analysis",
                        "dos cluster in period " + format_iso8601(p.start) + " - " + format_iso8601(p.end));
      }
    for (const auto &nv : pa.node_verdicts)
      for (auto &v : nodes)
        if (v.entity_id == nv.entity_id && !is_attack(v.label)) {
          v.evidence = nv.evidence;
          validation::detail::relabel(v, Label::Dos, "period-analysis",
                          "primary target of period " + format_iso8601(p.start) + " - " + format_iso8601(p.end));
        }
  }

  // 3. cross-perspective validation
  auto cross = cross_perspective_validate(std::move(nodes), std::move(ips), std::move(contents), records, out.periods,
                                          det.features.popularity, vc, cfg.detection, &det.features.contents);

  // 4. AO analysis
  std::vector<AoProfileExpectation> none;
  auto ao = ao_validate(std::move(cross.nodes), std::move(cross.ips), std::move(cross.contents), det.features.aos,
                        expectations ? *expectations : none, records);
  for (auto &w : ao.warnings)
    out.warnings.push_back("[validation] " + w);
  out.nodes = std::move(ao.nodes);
  out.ips = std::move(ao.ips);
  out.contents = std::move(ao.contents);

  detail::trace_changes(det.nodes.verdicts, out.nodes, out.trace);
  detail::trace_changes(det.ip_verdicts, out.ips, out.trace);
  detail::trace_changes(det.contents.verdicts, out.contents, out.trace);
  out.seconds = detail::seconds_since(t0);
  return out;
}

// ---------------------------------------------------------------------------
// Inputs.

inline std::vector<CleanRecord> load_records(const PipelineConfig &cfg, std::size_t *dropped = nullptr) {
  if (cfg.input_log.empty())
    throw Error("cli", ErrorKind::ConfigInvalid, "config has no input_log");
  auto res = read_log_file(cfg.input_log, cfg.schema, cfg.max_empty_fields);
  if (dropped)
    *dropped = res.dropped;
  return std::move(res.records);
}

inline std::optional<EventCalendar> load_calendar(const PipelineConfig &cfg) {
  if (cfg.calendar.empty())
    return std::nullopt;
  std::ifstream in(cfg.calendar);
  if (!in)
    throw Error("validation", ErrorKind::Io, "cannot read calendar '" + cfg.calendar + "'");
  return calendar_from_json(nlohmann::json::parse(in));
}

inline std::optional<std::vector<validation::AoProfileExpectation>> load_expectations(const PipelineConfig &cfg) {
  if (cfg.ao_expectations.empty())
    return std::nullopt;
  std::ifstream in(cfg.ao_expectations);
  if (!in)
    throw Error("validation", ErrorKind::Io, "cannot read AO expectations '" + cfg.ao_expectations + "'");
  return validation::ao_expectations_from_json(nlohmann::json::parse(in));
}

// ---------------------------------------------------------------------------
// Report documents.

inline nlohmann::json verdicts_json(const std::vector<Verdict> &vs) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto &v : vs)
    a.push_back(detection::to_json(v));
  return a;
}

inline std::vector<Verdict> verdicts_from_json(const nlohmann::json &a) {
  std::vector<Verdict> out;
  for (const auto &j : a)
    out.push_back(detection::verdict_from_json(j));
  return out;
}

inline nlohmann::json clusters_json(const detection::ClusterDetection &cd) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto &c : cd.clusters)
    clusters.push_back(detection::to_json(c));
  nlohmann::json hist = nlohmann::json::array();
  for (const auto &[x, y] : cd.tuning.history)
    hist.push_back({x, y});
  return {{"k", cd.tuning.k}, {"silhouette", cd.tuning.silhouette}, {"bo_history", hist}, {"clusters", clusters}};
}

inline nlohmann::json detect_report(const DetectOutput &d, const PipelineConfig &cfg) {
  nlohmann::json j{{"config_hash", cfg.hash()}, {"stage", "pattern"}, {"warnings", d.warnings}};
  nlohmann::json verdicts = nlohmann::json::object();
  if (d.perspectives.contains(Perspective::Node)) {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto &[x, y] : d.nodes.tuning.history)
      hist.push_back({x, y});
    j["node_model"] = {{"contamination", d.nodes.tuning.contamination},
                       {"silhouette", d.nodes.tuning.silhouette},
                       {"fallback", d.nodes.tuning.fallback},
                       {"bo_history", hist}};
    j["model_verdicts"] = {{"node", verdicts_json(d.nodes.model_verdicts)}};
    verdicts["node"] = verdicts_json(d.nodes.verdicts);
  }
  if (d.perspectives.contains(Perspective::Content)) {
    j["content_model"] = clusters_json(d.contents);
    verdicts["content"] = verdicts_json(d.contents.verdicts);
  }
  if (d.perspectives.contains(Perspective::Ip)) {
    j["dos_ip_model"] = clusters_json(d.dos_ips);
    j["cpa_ip_model"] = clusters_json(d.cpa_ips);
    verdicts["ip"] = verdicts_json(d.ip_verdicts);
  }
  j["verdicts"] = verdicts;
  return j;
}

/// Rebuilds the detection state needed by validation from a saved report:
/// features are recomputed from the records, verdicts and tuned
/// hyper-parameters come from the report.
inline DetectOutput detect_from_report(const std::vector<CleanRecord> &records, const nlohmann::json &report,
                                       const PipelineConfig &cfg) {
  DetectOutput d;
  d.features = compute_features(records, cfg);
  const auto &v = report.at("verdicts");
  for (auto p : {Perspective::Node, Perspective::Ip, Perspective::Content})
    if (!v.contains(to_string(p)))
      throw Error("cli", ErrorKind::MissingDetectOutput,
                  std::string("detect report has no ") + to_string(p) + " verdicts; rerun detect without --perspective");
  d.nodes.verdicts = verdicts_from_json(v["node"]);
  d.ip_verdicts = verdicts_from_json(v["ip"]);
  d.contents.verdicts = verdicts_from_json(v["content"]);
  d.nodes.tuning.contamination = report.at("node_model").at("contamination").get<double>();
  d.contents.tuning.k = report.at("content_model").at("k").get<std::size_t>();
  d.dos_ips.tuning.k = report.at("dos_ip_model").at("k").get<std::size_t>();
  d.cpa_ips.tuning.k = report.at("cpa_ip_model").at("k").get<std::size_t>();
  d.perspectives = {Perspective::Node, Perspective::Ip, Perspective::Content};
  return d;
}

inline nlohmann::json validate_report(const ValidateOutput &v, const PipelineConfig &cfg) {
  nlohmann::json periods = nlohmann::json::array(), hyps = nlohmann::json::array(), trace = nlohmann::json::array();
  for (const auto &p : v.periods)
    periods.push_back(validation::to_json(p));
  for (const auto &h : v.hypotheses)
    hyps.push_back(validation::to_json(h));
  for (const auto &t : v.trace)
    trace.push_back({{"perspective", to_string(t.perspective)},
                     {"entity", t.entity_id},
                     {"from", to_string(t.from)},
                     {"to", to_string(t.to)},
                     {"rule", t.rule},
                     {"detail", t.detail}});
  return {{"config_hash", cfg.hash()},
          {"stage", "validated"},
          {"abnormal_periods", periods},
          {"hypotheses", hyps},
          {"rule_trace", trace},
          {"warnings", v.warnings},
          {"verdicts", {{"node", verdicts_json(v.nodes)}, {"ip", verdicts_json(v.ips)}, {"content", verdicts_json(v.contents)}}}};
}

} // namespace cdnguard::pipeline
