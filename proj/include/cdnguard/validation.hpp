#pragma once

#include "cdnguard/core.hpp"
#include "cdnguard/detection.hpp"
#include "cdnguard/features.hpp"
#include "cdnguard/labels.hpp"
#include "cdnguard/log_model.hpp"

#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

namespace cdnguard::validation {

using detection::Evidence;
using detection::Verdict;

// ---------------------------------------------------------------------------
// Hourly series.

enum class Metric { NRequests, CacheHitRate, AvgPopularity };

inline const char *to_string(Metric m) {
  switch (m) {
  case Metric::NRequests: return "n_requests";
  case Metric::CacheHitRate: return "cache_hit_rate";
  case Metric::AvgPopularity: return "avg_popularity";
  }
  return "?";
}

struct HourlySeries {
  Metric metric = Metric::NRequests;
  /// Contiguous hour starts; rate metrics leave empty hours absent (nullopt).
  std::vector<std::pair<std::int64_t, std::optional<double>>> buckets;
};

/// Buckets records by UTC hour. `popularity` is required for AvgPopularity.
inline HourlySeries build_hourly_series(const std::vector<CleanRecord> &records, Metric metric,
                                        const PopularityMap *popularity = nullptr) {
  if (records.empty())
    throw Error("validation", ErrorKind::SpanTooShort, "no records to bucket");
  if (metric == Metric::AvgPopularity && popularity == nullptr)
    throw Error("validation", ErrorKind::ConfigInvalid, "avg_popularity series needs a popularity map");
  std::int64_t lo = records.front().timestamp, hi = lo;
  for (const auto &r : records) {
    lo = std::min(lo, r.timestamp);
    hi = std::max(hi, r.timestamp);
  }
  const std::int64_t first = hour_floor(lo), last = hour_floor(hi);
  if (last == first)
    throw Error("validation", ErrorKind::SpanTooShort, "records span a single hour");
  const auto n = static_cast<std::size_t>((last - first) / 3600 + 1);
  std::vector<double> count(n, 0.0), sum(n, 0.0);
  for (const auto &r : records) {
    const auto b = static_cast<std::size_t>((hour_floor(r.timestamp) - first) / 3600);
    count[b] += 1.0;
    if (metric == Metric::CacheHitRate)
      sum[b] += r.cache_hit ? 1.0 : 0.0;
    else if (metric == Metric::AvgPopularity)
      sum[b] += popularity_of(*popularity, r.content_url);
  }
  HourlySeries s{metric, {}};
  for (std::size_t b = 0; b < n; ++b) {
    const auto t = first + static_cast<std::int64_t>(b) * 3600;
    if (metric == Metric::NRequests)
      s.buckets.emplace_back(t, count[b]);
    else if (count[b] > 0.0)
      s.buckets.emplace_back(t, sum[b] / count[b]);
    else
      s.buckets.emplace_back(t, std::nullopt);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Abnormal periods.

struct AbnormalPeriod {
  std::int64_t start = 0; // inclusive
  std::int64_t end = 0;   // exclusive
  std::string trigger;    // metric name(s)
  double deviation = 0.0; // largest |robust z| or hit-rate drop
  bool legitimate = false; // overlaps a known legitimate event
  bool unverified = false; // no calendar supplied
  std::string note;

  bool attack_candidate() const { return !legitimate; }
  bool contains(std::int64_t t) const { return t >= start && t < end; }
};

struct ValidationConfig {
  double z_thresh = 3.0;
  double hit_drop = 0.15;
  // crowd filter
  double crowd_fraction = 1.0;
  double crowd_hit_rate = 0.99;
  // period analysis
  double period_error_rate = 0.5;
  double period_hit_rate = 0.2;
  double period_n_requests_q = 0.9;
  detection::KRange period_k{2, 8};
  // cross-perspective
  double n_min = 100;
  double content_attack_share = 0.5;
  double content_revert_popularity_q = 0.5;
  std::uint64_t seed = 0;
};

namespace detail {

inline double robust_z(double v, double med, double mad) {
  const double scale = 1.4826 * mad;
  if (scale == 0.0)
    return v == med ? 0.0 : (v > med ? std::numeric_limits<double>::infinity()
                                     : -std::numeric_limits<double>::infinity());
  return (v - med) / scale;
}

} // namespace detail

/// Hours whose value deviates by more than z_thresh robust z-scores from the
/// series median (request counts: upward; hit rate: downward, or an absolute
/// drop > hit_drop; popularity: either way), merged into contiguous periods.
inline std::vector<AbnormalPeriod> find_abnormal_periods(const HourlySeries &series,
                                                         const EventCalendar *calendar,
                                                         const ValidationConfig &cfg = {}) {
  std::vector<double> vals;
  for (const auto &[_, v] : series.buckets)
    if (v)
      vals.push_back(*v);
  std::vector<AbnormalPeriod> out;
  if (vals.empty())
    return out;
  const double med = median(vals);
  std::vector<double> dev;
  for (double v : vals)
    dev.push_back(std::abs(v - med));
  const double mad = median(dev);

  for (const auto &[t, v] : series.buckets) {
    if (!v)
      continue;
    const double z = detail::robust_z(*v, med, mad);
    double score = 0.0;
    switch (series.metric) {
    case Metric::NRequests:
      if (z > cfg.z_thresh)
        score = z;
      break;
    case Metric::CacheHitRate:
      if (z < -cfg.z_thresh || med - *v > cfg.hit_drop)
        score = std::max(-z, med - *v);
      break;
    case Metric::AvgPopularity:
      if (std::abs(z) > cfg.z_thresh)
        score = std::abs(z);
      break;
    }
    if (score == 0.0)
      continue;
    if (!out.empty() && out.back().end == t) {
      out.back().end = t + 3600;
      out.back().deviation = std::max(out.back().deviation, score);
    } else {
      out.push_back({t, t + 3600, to_string(series.metric), score, false, false, ""});
    }
  }
  for (auto &p : out) {
    if (calendar == nullptr) {
      p.unverified = true;
      p.note = "no calendar supplied";
    } else if (calendar->overlaps(p.start, p.end)) {
      p.legitimate = true;
      p.note = "overlaps known legitimate event";
    }
  }
  return out;
}

/// Union of periods from several series; overlapping or touching periods
/// merge and keep the strongest deviation.
inline std::vector<AbnormalPeriod> merge_periods(std::vector<AbnormalPeriod> periods) {
  std::sort(periods.begin(), periods.end(),
            [](const AbnormalPeriod &a, const AbnormalPeriod &b) { return a.start < b.start; });
  std::vector<AbnormalPeriod> out;
  for (auto &p : periods) {
    if (!out.empty() && p.start <= out.back().end) {
      auto &q = out.back();
      q.end = std::max(q.end, p.end);
      q.deviation = std::max(q.deviation, p.deviation);
      if (q.trigger.find(p.trigger) == std::string::npos)
        q.trigger += "+" + p.trigger;
      q.legitimate = q.legitimate || p.legitimate;
      q.unverified = q.unverified && p.unverified;
      if (q.note.empty())
        q.note = p.note;
    } else {
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rule helpers.

namespace detail {

inline void relabel(Verdict &v, Label label, const std::string &rule, const std::string &detail,
                    double value = 0.0) {
  v.label = label;
  v.stage = Stage::Validated;
  v.evidence.push_back({"rule:" + rule, value, detail});
}

struct IpStats {
  double n = 0, hits = 0, in_windows = 0;
};

inline std::unordered_map<std::string, IpStats> ip_stats(const std::vector<CleanRecord> &records,
                                                         const EventCalendar &calendar) {
  std::unordered_map<std::string, IpStats> out;
  for (const auto &r : records) {
    auto &s = out[r.ip];
    s.n += 1;
    s.hits += r.cache_hit ? 1 : 0;
    s.in_windows += calendar.covers(r.timestamp) ? 1 : 0;
  }
  return out;
}

} // namespace detail

/// A dos-labeled IP whose requests all fall inside known legitimate windows
/// and which enjoys a near-perfect hit rate is a crowd client, not a bot.
inline std::vector<Verdict> crowd_event_filter(std::vector<Verdict> ip_verdicts, const std::vector<CleanRecord> &records,
                                               const EventCalendar &calendar, const ValidationConfig &cfg = {}) {
  const auto stats = detail::ip_stats(records, calendar);
  for (auto &v : ip_verdicts) {
    if (v.label != Label::Dos)
      continue;
    const auto it = stats.find(v.entity_id);
    if (it == stats.end() || it->second.n == 0)
      continue;
    const double frac = it->second.in_windows / it->second.n;
    const double hit = it->second.hits / it->second.n;
    if (frac >= cfg.crowd_fraction && hit >= cfg.crowd_hit_rate)
      detail::relabel(v, Label::Normal, "crowd-event-filter",
                      "in-window share " + format_real(frac) + ", hit rate " + format_real(hit), hit);
  }
  return ip_verdicts;
}

// ---------------------------------------------------------------------------
// Abnormal period analysis.

struct AttackHypothesis {
  std::int64_t start = 0;
  std::int64_t end = 0;
  Label attack = Label::Normal; // Normal: no attack pattern found
  std::string primary_target;
  std::vector<std::string> secondary_targets;
  std::size_t n_attack_ips = 0;
};

struct PeriodAnalysis {
  AttackHypothesis hypothesis;
  std::vector<Verdict> ip_verdicts;   // dos-labeled period IPs only
  std::vector<Verdict> node_verdicts; // primary target when it shows the dos shape
  std::vector<detection::ClusterSummary> clusters;
};

/// Re-runs feature engineering and a small GMM on the records of one period.
/// Clusters with very high error rate, very low hit rate and many requests
/// are dos; the primary target is the node receiving the most error requests.
inline PeriodAnalysis analyze_abnormal_period(const std::vector<CleanRecord> &records, std::int64_t start,
                                              std::int64_t end, const ValidationConfig &cfg = {},
                                              const detection::DetectionConfig &dcfg = {}) {
  if (records.empty())
    throw Error("validation", ErrorKind::EmptyPeriod,
                "no records in period " + format_iso8601(start) + " - " + format_iso8601(end));
  PeriodAnalysis out;
  out.hypothesis.start = start;
  out.hypothesis.end = end;

  const auto pop = compute_popularity(records);
  const auto ips = aggregate_by_ip(records, pop);
  std::set<std::string> dos_ips;
  if (ips.size() >= 3) {
    const auto fm = select_feature_subset(ips, Purpose::DosIp);
    const auto X = fm.to_matrix();
    auto k = cfg.period_k;
    k.hi = std::min(k.hi, X.rows - 1);
    k.lo = std::min(k.lo, k.hi);
    auto local = dcfg;
    local.seed = cfg.seed;
    local.bo_budget = std::min<std::size_t>(dcfg.bo_budget, 10);
    const auto tuning = detection::tune_components(X, k, local);
    const auto preds = ml::gmm_predict_all(tuning.params, X);
    const auto labels = ml::hard_assignments(preds);
    out.clusters = detection::detail::summarize_clusters(ips, labels);
    const auto ref = detection::Reference::of(ips);
    const detection::PatternProfile shape{
        "PERIOD_DOS",
        Label::Dos,
        {{"request_error_rate", detection::Comparator::Ge, detection::Threshold::absolute(cfg.period_error_rate)},
         {"cache_hit_rate", detection::Comparator::Le, detection::Threshold::absolute(cfg.period_hit_rate)},
         {"n_requests", detection::Comparator::Ge, detection::Threshold::quantile(cfg.period_n_requests_q)}}};
    std::map<std::size_t, std::vector<Evidence>> dos_clusters;
    for (const auto &c : out.clusters)
      if (auto ev = detection::match_profile(shape, [&](const std::string &f) { return c.at(f); }, ref))
        dos_clusters[c.cluster_id] = std::move(*ev);
    for (std::size_t i = 0; i < ips.size(); ++i) {
      const auto it = dos_clusters.find(labels[i]);
      if (it == dos_clusters.end() || preds[i].responsibilities[labels[i]] < dcfg.min_responsibility)
        continue;
      Verdict v{ips[i].ip, Perspective::Ip, Label::Dos, Stage::Validated, it->second, labels[i],
                preds[i].responsibilities[labels[i]]};
      for (auto &e : v.evidence)
        e.condition = "period centroid " + e.condition;
      out.ip_verdicts.push_back(std::move(v));
      dos_ips.insert(ips[i].ip);
    }
  }

  // Targets.
  std::map<std::string, double> errors_by_node, requests_by_node, hits_by_node, attack_by_node;
  for (const auto &r : records) {
    requests_by_node[r.node] += 1;
    hits_by_node[r.node] += r.cache_hit ? 1 : 0;
    if (is_error_status(r.status_code))
      errors_by_node[r.node] += 1;
    if (dos_ips.contains(r.ip))
      attack_by_node[r.node] += 1;
  }
  if (!dos_ips.empty()) {
    out.hypothesis.attack = Label::Dos;
    out.hypothesis.n_attack_ips = dos_ips.size();
    double best = -1;
    for (const auto &[node, e] : errors_by_node)
      if (e > best) {
        best = e;
        out.hypothesis.primary_target = node;
      }
    for (const auto &[node, n] : attack_by_node)
      if (node != out.hypothesis.primary_target && n >= cfg.n_min)
        out.hypothesis.secondary_targets.push_back(node);
    const auto &node = out.hypothesis.primary_target;
    const double n = requests_by_node[node];
    const double err = errors_by_node[node] / n, hit = hits_by_node[node] / n;
    if (err >= cfg.period_error_rate && hit <= cfg.period_hit_rate)
      out.node_verdicts.push_back({node,
                                   Perspective::Node,
                                   Label::Dos,
                                   Stage::Validated,
                                   {{"request_error_rate", err, "period >=" + format_real(cfg.period_error_rate)},
                                    {"cache_hit_rate", hit, "period <=" + format_real(cfg.period_hit_rate)}},
                                   std::nullopt,
                                   std::nullopt});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-perspective validation.

struct CrossResult {
  std::vector<Verdict> nodes;
  std::vector<Verdict> ips;
  std::vector<Verdict> contents;
};

namespace detail {

inline Label majority(const std::map<Label, double> &counts) {
  Label best = Label::Normal;
  double n = 0;
  for (const auto &[l, c] : counts)
    if (c > n) {
      n = c;
      best = l;
    }
  return best;
}

} // namespace detail

/// (a) Recovers nodes that received at least n_min requests from attack IPs
/// inside an attack-candidate period and whose hit rate there fell more than
/// hit_drop below their baseline over non-abnormal hours. (b) Reverts cpa
/// contents requested only by normal IPs when their popularity is at least
/// the dataset median, or when `content_rows` is given and their own
/// features fail the profile. (c) Drops a dos node label when only cpa IPs hit the
/// node and its error rate is not high. Finally, a content whose requests
/// come mostly from attack IPs of one family takes that family's label
/// (dos additionally needs a mostly-failing URL).
inline CrossResult cross_perspective_validate(std::vector<Verdict> nodes, std::vector<Verdict> ips,
                                              std::vector<Verdict> contents, const std::vector<CleanRecord> &records,
                                              const std::vector<AbnormalPeriod> &periods, const PopularityMap &popularity,
                                              const ValidationConfig &cfg = {},
                                              const detection::DetectionConfig &dcfg = {},
                                              const std::vector<ContentFeatures> *content_rows = nullptr) {
  std::unordered_map<std::string, Label> ip_label;
  for (const auto &v : ips)
    if (is_attack(v.label))
      ip_label[v.entity_id] = v.label;

  auto in_period = [&](std::int64_t t) -> const AbnormalPeriod * {
    for (const auto &p : periods)
      if (p.contains(t))
        return &p;
    return nullptr;
  };

  // Per node: baseline hourly hit rates outside every abnormal period, and
  // per attack-candidate period the request mix.
  struct PeriodAcc {
    double n = 0, hits = 0;
    std::map<Label, double> attack;
  };
  struct NodeAcc {
    std::map<std::int64_t, std::pair<double, double>> baseline_hours; // hour -> (n, hits)
    std::map<std::int64_t, PeriodAcc> periods;                        // period start -> acc
    double n = 0, errors = 0;
    std::map<Label, double> attack_all;
  };
  std::map<std::string, NodeAcc> node_acc;
  struct ContentAcc {
    double n = 0, errors = 0;
    std::map<Label, double> attack;
    bool all_normal = true;
  };
  std::unordered_map<std::string, ContentAcc> content_acc;

  for (const auto &r : records) {
    auto &na = node_acc[r.node];
    na.n += 1;
    na.errors += is_error_status(r.status_code) ? 1 : 0;
    const auto it = ip_label.find(r.ip);
    auto &ca = content_acc[r.content_url];
    ca.n += 1;
    ca.errors += is_error_status(r.status_code) ? 1 : 0;
    if (it != ip_label.end()) {
      na.attack_all[it->second] += 1;
      ca.attack[it->second] += 1;
      ca.all_normal = false;
    }
    const auto *p = in_period(r.timestamp);
    if (p == nullptr) {
      auto &h = na.baseline_hours[hour_floor(r.timestamp)];
      h.first += 1;
      h.second += r.cache_hit ? 1 : 0;
    } else if (p->attack_candidate()) {
      auto &pa = na.periods[p->start];
      pa.n += 1;
      pa.hits += r.cache_hit ? 1 : 0;
      if (it != ip_label.end())
        pa.attack[it->second] += 1;
    }
  }

  // (a) node recovery
  for (auto &v : nodes) {
    if (is_attack(v.label))
      continue;
    const auto it = node_acc.find(v.entity_id);
    if (it == node_acc.end() || it->second.baseline_hours.empty())
      continue;
    double base = 0;
    for (const auto &[_, h] : it->second.baseline_hours)
      base += h.second / h.first;
    base /= static_cast<double>(it->second.baseline_hours.size());
    for (const auto &[start, pa] : it->second.periods) {
      double attack = 0;
      for (const auto &[_, c] : pa.attack)
        attack += c;
      if (attack < cfg.n_min || pa.n == 0)
        continue;
      const double rate = pa.hits / pa.n;
      if (base - rate > cfg.hit_drop) {
        detail::relabel(v, detail::majority(pa.attack), "cross-node-recovery",
                        format_real(attack) + " attack requests in period from " + format_iso8601(start) +
                            ", hit rate " + format_real(rate) + " vs baseline " + format_real(base),
                        rate);
        break;
      }
    }
  }

  // (c) attack-type consistency for nodes
  {
    std::vector<double> error_rates;
    for (const auto &[_, na] : node_acc)
      error_rates.push_back(na.n > 0 ? na.errors / na.n : 0.0);
    std::optional<detection::Condition> err;
    for (const auto &c : dcfg.profiles.node_dos.conditions)
      if (c.feature == "request_error_rate")
        err = c;
    for (auto &v : nodes) {
      if (v.label != Label::Dos)
        continue;
      const auto it = node_acc.find(v.entity_id);
      if (it == node_acc.end() || it->second.attack_all.empty())
        continue;
      bool only_cpa = true;
      for (const auto &[l, _] : it->second.attack_all)
        only_cpa = only_cpa && is_cpa(l);
      if (!only_cpa)
        continue;
      const double rate = it->second.errors / it->second.n;
      bool high = rate >= 0.5;
      if (err) {
        const double t = err->threshold.mode == detection::Threshold::Mode::Absolute
                             ? err->threshold.value
                             : quantile(error_rates, err->threshold.value);
        high = rate >= t && rate > median(error_rates);
      }
      if (!high)
        detail::relabel(v, detail::majority(it->second.attack_all), "cross-type-consistency",
                        "attacked only by cpa IPs, error rate " + format_real(rate), rate);
    }
  }

  // (b) revert cpa contents with only normal requesters and ordinary popularity
  {
    std::vector<double> pops;
    pops.reserve(contents.size());
    for (const auto &v : contents)
      pops.push_back(popularity_of(popularity, v.entity_id));
    const double q = pops.empty() ? 0.0 : quantile(pops, cfg.content_revert_popularity_q);
    for (auto &v : contents) {
      if (!is_cpa(v.label))
        continue;
      const auto it = content_acc.find(v.entity_id);
      const bool all_normal = it == content_acc.end() || it->second.all_normal;
      const double p = popularity_of(popularity, v.entity_id);
      if (all_normal && p >= q)
        detail::relabel(v, Label::Normal, "cross-content-revert",
                        "only normal requesters, popularity " + format_real(p) + " >= " + format_real(q), p);
    }
    // A member that inherited its cluster's label but fails the profile on
    // its own features, with no suspicious requester, reverts as well.
    if (content_rows != nullptr) {
      const auto ref = detection::Reference::of(*content_rows);
      std::unordered_map<std::string, const ContentFeatures *> row_of;
      for (const auto &r : *content_rows)
        row_of[r.content_id] = &r;
      for (auto &v : contents) {
        if (!is_cpa(v.label))
          continue;
        const auto it = content_acc.find(v.entity_id);
        const auto row = row_of.find(v.entity_id);
        if ((it != content_acc.end() && !it->second.all_normal) || row == row_of.end())
          continue;
        const auto &profile = v.label == Label::CpaLda ? dcfg.profiles.content_lda : dcfg.profiles.content_fla;
        const auto own = detection::match_profile(
            profile, [&](const std::string &f) { return feature_value(*row->second, f); }, ref);
        if (!own)
          detail::relabel(v, Label::Normal, "cross-content-member-check",
                          "only normal requesters and own features fail " + profile.name);
      }
    }
  }

  // content recovery / retyping from validated attack IPs
  for (auto &v : contents) {
    const auto it = content_acc.find(v.entity_id);
    if (it == content_acc.end() || it->second.attack.empty())
      continue;
    std::map<Family, std::map<Label, double>> by_family;
    for (const auto &[l, c] : it->second.attack)
      by_family[family_of(l)][l] += c;
    Family fam = Family::None;
    double best = 0;
    for (const auto &[f, m] : by_family) {
      double s = 0;
      for (const auto &[_, c] : m)
        s += c;
      if (s > best) {
        best = s;
        fam = f;
      }
    }
    const double share = best / it->second.n;
    if (share < cfg.content_attack_share)
      continue;
    // Bots also fetch ordinary contents; only URLs that mostly fail are dos targets.
    if (fam == Family::Dos && it->second.errors / it->second.n < cfg.period_error_rate)
      continue;
    const Label label = detail::majority(by_family[fam]);
    if (family_of(v.label) == fam && (v.label == label || v.label != Label::CpaUnspecified))
      continue;
    detail::relabel(v, label, "cross-content-recovery",
                    format_real(share) + " of requests from " + to_string(label) + " IPs", share);
  }

  return {std::move(nodes), std::move(ips), std::move(contents)};
}

// ---------------------------------------------------------------------------
// Account-offering analysis.

struct Band {
  double lo = 0.0;
  double hi = 1.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct AoProfileExpectation {
  std::string ao_id;
  ServiceType service_type = ServiceType::Other;
  std::string role;
  Band popularity;
  Band hit_rate;
  /// Declared source of legitimate low-popularity traffic (e.g. tests of old videos).
  bool legitimate_low_popularity = false;
};

inline std::vector<AoProfileExpectation> ao_expectations_from_json(const nlohmann::json &j) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "account_offerings")
      throw Error("validation", ErrorKind::ConfigInvalid, "unknown AO expectation key '" + it.key() + "'");
  std::vector<AoProfileExpectation> out;
  auto band = [](const nlohmann::json &b, const char *what) {
    const auto v = b.get<std::vector<double>>();
    if (v.size() != 2 || !(v[0] >= 0.0 && v[0] <= v[1] && v[1] <= 1.0))
      throw Error("validation", ErrorKind::ConfigInvalid, std::string(what) + " band must be [lo, hi] within [0, 1]");
    return Band{v[0], v[1]};
  };
  for (const auto &aj : j.value("account_offerings", nlohmann::json::array())) {
    AoProfileExpectation e;
    for (auto it = aj.begin(); it != aj.end(); ++it) {
      const auto &k = it.key();
      if (k == "ao_id")
        e.ao_id = it->get<std::string>();
      else if (k == "service_type")
        e.service_type = parse_service_type(it->get<std::string>());
      else if (k == "role")
        e.role = it->get<std::string>();
      else if (k == "popularity_band")
        e.popularity = band(*it, "popularity");
      else if (k == "hit_rate_band")
        e.hit_rate = band(*it, "hit rate");
      else if (k == "legitimate_low_popularity")
        e.legitimate_low_popularity = it->get<bool>();
      else
        throw Error("validation", ErrorKind::ConfigInvalid, "unknown AO expectation key '" + k + "'");
    }
    if (e.ao_id.empty())
      throw Error("validation", ErrorKind::ConfigInvalid, "AO expectation without ao_id");
    out.push_back(std::move(e));
  }
  return out;
}

struct AoValidation {
  std::vector<Verdict> nodes;
  std::vector<Verdict> ips;
  std::vector<Verdict> contents;
  std::vector<std::string> warnings;
};

/// Flagged IPs and contents whose dominant AO is a declared legitimate
/// low-popularity source become normal; flagged entities on AOs whose observed
/// behaviour leaves the declared bands are confirmed. Every verdict leaves
/// with stage=validated.
inline AoValidation ao_validate(std::vector<Verdict> nodes, std::vector<Verdict> ips, std::vector<Verdict> contents,
                                const std::vector<AoFeatures> &ao_features,
                                const std::vector<AoProfileExpectation> &expectations,
                                const std::vector<CleanRecord> &records) {
  AoValidation out;
  std::map<std::string, const AoProfileExpectation *> expect;
  for (const auto &e : expectations)
    expect[e.ao_id] = &e;
  std::map<std::string, const AoFeatures *> observed;
  for (const auto &a : ao_features)
    observed[a.ao_id] = &a;
  if (expectations.empty())
    out.warnings.push_back("no AO expectations supplied; AO analysis skipped");

  std::unordered_map<std::string, AoShares> ip_ao, content_ao;
  for (const auto &r : records) {
    ip_ao[r.ip][r.account_offering] += 1;
    content_ao[r.content_url][r.account_offering] += 1;
  }

  auto process = [&](std::vector<Verdict> &verdicts, const std::unordered_map<std::string, AoShares> &dominant) {
    for (auto &v : verdicts) {
      if (is_attack(v.label) && !expectations.empty()) {
        const auto it = dominant.find(v.entity_id);
        const std::string ao = it == dominant.end() ? std::string() : dominant_key(it->second);
        const auto e = expect.find(ao);
        if (e == expect.end()) {
          out.warnings.push_back("MissingExpectation: AO '" + ao + "' of " + to_string(v.perspective) + " " +
                                 v.entity_id + " is not configured; verdict kept");
        } else if (e->second->legitimate_low_popularity) {
          detail::relabel(v, Label::Normal, "ao-legitimate-source",
                          "dominant AO " + ao + " declared '" + e->second->role + "'");
        } else if (const auto o = observed.find(ao); o != observed.end()) {
          const bool deviates = !e->second->popularity.contains(o->second->request_popularity) ||
                                !e->second->hit_rate.contains(o->second->cache_hit_rate);
          if (deviates)
            v.evidence.push_back({"rule:ao-confirm", o->second->request_popularity,
                                  "AO " + ao + " outside declared bands"});
        }
      }
      v.stage = Stage::Validated;
    }
  };
  process(ips, ip_ao);
  process(contents, content_ao);
  for (auto &v : nodes)
    v.stage = Stage::Validated;
  out.nodes = std::move(nodes);
  out.ips = std::move(ips);
  out.contents = std::move(contents);
  return out;
}

// ---------------------------------------------------------------------------
// Output.

inline void write_series_table(std::ostream &os, const std::vector<HourlySeries> &series) {
  os << "hour";
  for (const auto &s : series)
    os << ',' << to_string(s.metric);
  os << '\n';
  if (series.empty())
    return;
  for (std::size_t b = 0; b < series.front().buckets.size(); ++b) {
    os << format_iso8601(series.front().buckets[b].first);
    for (const auto &s : series) {
      os << ',';
      if (b < s.buckets.size() && s.buckets[b].second)
        os << format_real(*s.buckets[b].second);
    }
    os << '\n';
  }
}

inline nlohmann::json to_json(const AbnormalPeriod &p) {
  return {{"start", format_iso8601(p.start)}, {"end", format_iso8601(p.end)}, {"trigger", p.trigger},
          {"deviation", p.deviation},        {"legitimate", p.legitimate},   {"unverified", p.unverified},
          {"note", p.note}};
}

inline nlohmann::json to_json(const AttackHypothesis &h) {
  return {{"start", format_iso8601(h.start)},
          {"end", format_iso8601(h.end)},
          {"attack", to_string(h.attack)},
          {"primary_target", h.primary_target},
          {"secondary_targets", h.secondary_targets},
          {"n_attack_ips", h.n_attack_ips}};
}

} // namespace cdnguard::validation
