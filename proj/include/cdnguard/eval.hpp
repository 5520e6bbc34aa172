#pragma once

#include "cdnguard/core.hpp"
#include "cdnguard/detection.hpp"
#include "cdnguard/labels.hpp"
#include "cdnguard/pipeline.hpp"

#include <chrono>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace cdnguard::eval {

using detection::Verdict;

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts &) const = default;
};

struct Score {
  ConfusionCounts counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

/// How a predicted positive is matched against a positive truth label.
/// Family: any label of the same family (cpa_lda and cpa_fla are
/// interchangeable). Variant: the exact label.
enum class MatchMode { Family, Variant };

inline Score score_from_counts(const ConfusionCounts &c) {
  Score s;
  s.counts = c;
  s.precision = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  s.recall = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  s.f1 = s.precision + s.recall == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / (s.precision + s.recall);
  s.accuracy = c.total() == 0 ? 0.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  return s;
}

inline const std::set<Label> &all_attacks() {
  static const std::set<Label> s{Label::Dos, Label::CpaLda, Label::CpaFla, Label::CpaUnspecified};
  return s;
}

/// Scores verdicts against truth over the same entity set. An entity whose
/// truth and predicted labels are both positive but do not match under
/// `mode` counts as a miss (fn).
inline Score score(const std::vector<Verdict> &verdicts, const std::map<std::string, Label> &truth,
                   const std::set<Label> &positive = all_attacks(), MatchMode mode = MatchMode::Family) {
  std::map<std::string, Label> predicted;
  for (const auto &v : verdicts)
    if (!predicted.emplace(v.entity_id, v.label).second)
      throw Error("eval", ErrorKind::EntityMismatch, "duplicate verdict for '" + v.entity_id + "'");
  if (predicted.size() != truth.size())
    throw Error("eval", ErrorKind::EntityMismatch,
                std::to_string(predicted.size()) + " verdicts vs " + std::to_string(truth.size()) + " truth entities");
  ConfusionCounts c;
  for (const auto &[id, t] : truth) {
    const auto it = predicted.find(id);
    if (it == predicted.end())
      throw Error("eval", ErrorKind::EntityMismatch, "no verdict for truth entity '" + id + "'");
    const bool tpos = positive.contains(t), ppos = positive.contains(it->second);
    if (tpos && ppos) {
      const bool match = mode == MatchMode::Variant ? t == it->second : family_of(t) == family_of(it->second);
      (match ? c.tp : c.fn) += 1;
    } else if (tpos) {
      c.fn += 1;
    } else if (ppos) {
      c.fp += 1;
    } else {
      c.tn += 1;
    }
  }
  return score_from_counts(c);
}

struct MetricRow {
  std::string method;
  Perspective perspective = Perspective::Node;
  Score score;
};

inline void write_metrics_table(std::ostream &os, const std::vector<MetricRow> &rows) {
  os << "Method,Perspective,Acc,Pre,Rec,F1,TP,FP,TN,FN\n";
  for (const auto &r : rows) {
    const auto &s = r.score;
    os << r.method << ',' << to_string(r.perspective) << ',' << format_real(s.accuracy) << ','
       << format_real(s.precision) << ',' << format_real(s.recall) << ',' << format_real(s.f1) << ',' << s.counts.tp
       << ',' << s.counts.fp << ',' << s.counts.tn << ',' << s.counts.fn << '\n';
  }
}

// ---------------------------------------------------------------------------
// Detection latency.

struct LatencyRecord {
  std::string entity_id;
  Perspective perspective = Perspective::Node;
  std::int64_t affected_at = 0; // first attack request touching the entity
  double detected_at = 0.0;     // log time of the flagging batch end + processing time
  double latency_s = 0.0;
  double features_s = 0.0;
  double model_s = 0.0;
};

struct LatencySummary {
  Perspective perspective = Perspective::Node;
  std::size_t detected = 0;
  std::size_t missed = 0;
  double avg_s = 0.0;
  double max_s = 0.0;
};

struct LatencyReport {
  std::vector<LatencyRecord> records;
  std::vector<std::pair<Perspective, std::string>> misses;
  std::vector<LatencySummary> summary;
  std::size_t batches = 0;
};

/// Replays the log in timestamp order in fixed-size batches. After each batch
/// the full method (detection with `cfg`'s hyper-parameters, then
/// validation) runs on everything seen so far; an attacked entity's latency
/// runs from its first attack request to the end of the first batch whose
/// run flags it with the right family, plus that run's processing time.
inline LatencyReport measure_latency(const std::vector<CleanRecord> &records, const GroundTruth &truth,
                                     const pipeline::PipelineConfig &cfg,
                                     const std::optional<EventCalendar> &calendar = std::nullopt,
                                     const std::optional<std::vector<validation::AoProfileExpectation>> &expectations =
                                         std::nullopt) {
  std::vector<CleanRecord> sorted = records;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const CleanRecord &a, const CleanRecord &b) { return a.timestamp < b.timestamp; });

  // First attack request per entity: requests by attack IPs mark the IP, the
  // node served and the content requested.
  std::map<std::pair<Perspective, std::string>, std::int64_t> affected;
  for (const auto &r : sorted) {
    const auto it = truth.ip_labels.find(r.ip);
    if (it == truth.ip_labels.end() || !is_attack(it->second))
      continue;
    affected.try_emplace({Perspective::Ip, r.ip}, r.timestamp);
    if (const auto n = truth.node_labels.find(r.node); n != truth.node_labels.end() && is_attack(n->second))
      affected.try_emplace({Perspective::Node, r.node}, r.timestamp);
    if (const auto c = truth.content_labels.find(r.content_url); c != truth.content_labels.end() && is_attack(c->second))
      affected.try_emplace({Perspective::Content, r.content_url}, r.timestamp);
  }

  LatencyReport out;
  std::map<std::pair<Perspective, std::string>, bool> done;
  std::vector<CleanRecord> prefix;
  prefix.reserve(sorted.size());
  for (std::size_t begin = 0; begin < sorted.size(); begin += cfg.latency_batch) {
    const std::size_t end = std::min(sorted.size(), begin + cfg.latency_batch);
    prefix.insert(prefix.end(), sorted.begin() + static_cast<std::ptrdiff_t>(begin),
                  sorted.begin() + static_cast<std::ptrdiff_t>(end));
    ++out.batches;
    const auto batch_end = static_cast<double>(prefix.back().timestamp);
    bool pending = false;
    for (const auto &[key, t] : affected)
      if (t <= prefix.back().timestamp && !done.contains(key))
        pending = true;
    if (!pending)
      continue;
    std::optional<pipeline::DetectOutput> det;
    try {
      det = pipeline::run_detect(prefix, cfg);
    } catch (const Error &e) {
      if (e.kind() == ErrorKind::TooFewSamples || e.kind() == ErrorKind::SingleCluster)
        continue;
      throw;
    }
    const auto val = pipeline::run_validate(prefix, *det, calendar, expectations, cfg);
    const double features_s = det->times.features_s;
    const double model_s = det->times.model_s + val.seconds;
    for (auto p : {Perspective::Node, Perspective::Ip, Perspective::Content}) {
      const auto &labels = truth.labels(p);
      for (const auto &v : val.verdicts(p)) {
        const std::pair<Perspective, std::string> key{p, v.entity_id};
        const auto a = affected.find(key);
        if (a == affected.end() || done.contains(key))
          continue;
        const auto t = labels.find(v.entity_id);
        if (t == labels.end() || family_of(t->second) != family_of(v.label))
          continue;
        const double detected_at = batch_end + features_s + model_s;
        out.records.push_back({v.entity_id, p, a->second, detected_at,
                               detected_at - static_cast<double>(a->second), features_s, model_s});
        done[key] = true;
      }
    }
  }
  for (const auto &[key, _] : affected)
    if (!done.contains(key))
      out.misses.push_back(key);

  for (auto p : {Perspective::Node, Perspective::Ip, Perspective::Content}) {
    LatencySummary s{p, 0, 0, 0.0, 0.0};
    for (const auto &r : out.records)
      if (r.perspective == p) {
        ++s.detected;
        s.avg_s += r.latency_s;
        s.max_s = std::max(s.max_s, r.latency_s);
      }
    for (const auto &[mp, _] : out.misses)
      s.missed += mp == p ? 1 : 0;
    if (s.detected > 0)
      s.avg_s /= static_cast<double>(s.detected);
    out.summary.push_back(s);
  }
  return out;
}

inline void write_latency_table(std::ostream &os, const LatencyReport &r) {
  os << "Perspective,Avg (s),Max (s),Detected,Missed\n";
  for (const auto &s : r.summary)
    os << to_string(s.perspective) << ',' << format_real(s.avg_s) << ',' << format_real(s.max_s) << ','
       << s.detected << ',' << s.missed << '\n';
}

inline void write_latency_records(std::ostream &os, const LatencyReport &r) {
  os << "perspective,entity,affected_at,detected_at,latency_s,features_s,model_s\n";
  for (const auto &x : r.records)
    os << to_string(x.perspective) << ',' << x.entity_id << ',' << format_iso8601(x.affected_at) << ','
       << format_real(x.detected_at) << ',' << format_real(x.latency_s) << ',' << format_real(x.features_s) << ','
       << format_real(x.model_s) << '\n';
  for (const auto &[p, id] : r.misses)
    os << to_string(p) << ',' << id << ",,,miss,,\n";
}

} // namespace cdnguard::eval
