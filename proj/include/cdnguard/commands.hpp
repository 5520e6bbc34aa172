#pragma once

#include "cdnguard/eval.hpp"
#include "cdnguard/pipeline.hpp"
#include "cdnguard/synth.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace cdnguard::commands {

namespace fs = std::filesystem;
using pipeline::PipelineConfig;

/// Holds `<output_dir>/.cdnguard.lock` for the lifetime of a command.
class OutputLock {
public:
  explicit OutputLock(const std::string &dir) : path_(fs::path(dir) / ".cdnguard.lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
      throw Error("cli", ErrorKind::Io, "cannot create output directory '" + dir + "': " + ec.message());
    std::FILE *f = std::fopen(path_.c_str(), "wx");
    if (!f)
      throw Error("cli", ErrorKind::Io,
                  "output directory '" + dir + "' is locked by another command (remove " + path_.string() +
                      " if stale)");
    std::fclose(f);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock &) = delete;
  OutputLock &operator=(const OutputLock &) = delete;

private:
  fs::path path_;
};

namespace detail {

inline std::ofstream open_out(const fs::path &p) {
  std::ofstream out(p, std::ios::binary);
  if (!out)
    throw Error("cli", ErrorKind::Io, "cannot write '" + p.string() + "'");
  return out;
}

/// Delimited tables carry the producing config's hash as a comment line.
template <class Fn> void write_table(const fs::path &p, const PipelineConfig &cfg, Fn &&body) {
  auto out = open_out(p);
  out << "# config_hash: " << cfg.hash() << '\n';
  body(out);
}

inline void write_json(const fs::path &p, const nlohmann::json &j) {
  auto out = open_out(p);
  out << j.dump(1) << '\n';
}

inline nlohmann::json read_json(const fs::path &p, ErrorKind missing, const std::string &module) {
  std::ifstream in(p);
  if (!in)
    throw Error(module, missing, "cannot read '" + p.string() + "'");
  return nlohmann::json::parse(in);
}

inline std::vector<CleanRecord> records_or_throw(const PipelineConfig &cfg, std::ostream &log) {
  std::size_t dropped = 0;
  auto records = pipeline::load_records(cfg, &dropped);
  log << "parsed " << records.size() << " records (" << dropped << " dropped) from " << cfg.input_log << '\n';
  return records;
}

} // namespace detail

inline fs::path out_path(const PipelineConfig &cfg, const std::string &name) { return fs::path(cfg.output_dir) / name; }

// ---------------------------------------------------------------------------
// generate

inline synth::SynthOutput cmd_generate(const PipelineConfig &cfg, std::ostream &log = std::clog) {
  if (cfg.scenario.empty())
    throw Error("cli", ErrorKind::ConfigInvalid, "config has no scenario file");
  if (cfg.input_log.empty() || cfg.truth.empty())
    throw Error("cli", ErrorKind::ConfigInvalid, "generate needs input_log and truth paths");
  const auto doc = detail::read_json(cfg.scenario, ErrorKind::Io, "synth");
  auto file = synth::scenario_file_from_json(doc);
  file.workload.seed = cfg.seed;
  auto out = synth::generate_log(file.workload, file.scenarios);
  for (const auto &p : {fs::path(cfg.input_log), fs::path(cfg.truth)})
    if (p.has_parent_path())
      fs::create_directories(p.parent_path());
  {
    auto os = detail::open_out(cfg.input_log);
    synth::write_log(os, out.records);
  }
  synth::emit_ground_truth(out.truth, cfg.truth);
  log << "wrote " << out.records.size() << " records to " << cfg.input_log << " and truth to " << cfg.truth << '\n';
  return out;
}

// ---------------------------------------------------------------------------
// detect

inline pipeline::DetectOutput cmd_detect(const PipelineConfig &cfg, std::optional<Perspective> only = std::nullopt,
                                         std::ostream &log = std::clog) {
  OutputLock lock(cfg.output_dir);
  const auto records = detail::records_or_throw(cfg, log);
  auto det = pipeline::run_detect(records, cfg, only);
  for (auto p : det.perspectives)
    detail::write_table(out_path(cfg, std::string("pattern_verdicts_") + to_string(p) + ".csv"), cfg,
                        [&](std::ostream &os) { detection::write_verdict_table(os, det.verdicts(p)); });
  if (det.perspectives.contains(Perspective::Node))
    detail::write_table(out_path(cfg, "model_verdicts_node.csv"), cfg,
                        [&](std::ostream &os) { detection::write_verdict_table(os, det.nodes.model_verdicts); });
  const std::pair<const char *, const detection::ClusterDetection *> clusters[] = {
      {"content", &det.contents}, {"dos_ip", &det.dos_ips}, {"cpa_ip", &det.cpa_ips}};
  for (const auto &[name, cd] : clusters) {
    const bool present = std::string(name) == "content" ? det.perspectives.contains(Perspective::Content)
                                                        : det.perspectives.contains(Perspective::Ip);
    if (present)
      detail::write_table(out_path(cfg, std::string("clusters_") + name + ".csv"), cfg,
                          [&](std::ostream &os) { detection::write_cluster_table(os, cd->clusters); });
  }
  detail::write_json(out_path(cfg, "detect_report.json"), pipeline::detect_report(det, cfg));
  for (const auto &w : det.warnings)
    log << "warning: " << w << '\n';
  for (auto p : det.perspectives) {
    std::size_t n = 0;
    for (const auto &v : det.verdicts(p))
      n += is_attack(v.label) ? 1 : 0;
    log << to_string(p) << ": " << n << " of " << det.verdicts(p).size() << " flagged (pattern stage)\n";
  }
  return det;
}

// ---------------------------------------------------------------------------
// validate

/// Per-node hourly cache hit rate, one column per node.
inline void write_node_hit_rate_series(std::ostream &os, const std::vector<CleanRecord> &records) {
  std::map<std::string, std::vector<CleanRecord>> by_node;
  for (const auto &r : records)
    by_node[r.node].push_back(r);
  std::vector<validation::HourlySeries> series;
  std::vector<std::string> names;
  const auto all = validation::build_hourly_series(records, validation::Metric::NRequests);
  for (const auto &[node, rs] : by_node) {
    names.push_back(node);
    std::map<std::int64_t, std::pair<double, double>> hits;
    for (const auto &r : rs) {
      auto &h = hits[hour_floor(r.timestamp)];
      h.first += r.cache_hit ? 1.0 : 0.0;
      h.second += 1.0;
    }
    validation::HourlySeries s;
    s.metric = validation::Metric::CacheHitRate;
    for (const auto &[t, _] : all.buckets) {
      const auto it = hits.find(t);
      s.buckets.emplace_back(t, it == hits.end() ? std::nullopt : std::optional<double>(it->second.first / it->second.second));
    }
    series.push_back(std::move(s));
  }
  os << "hour";
  for (const auto &n : names)
    os << ',' << n;
  os << '\n';
  for (std::size_t b = 0; b < all.buckets.size(); ++b) {
    os << format_iso8601(all.buckets[b].first);
    for (const auto &s : series) {
      os << ',';
      if (s.buckets[b].second)
        os << format_real(*s.buckets[b].second);
    }
    os << '\n';
  }
}

inline pipeline::ValidateOutput cmd_validate(const PipelineConfig &cfg, std::ostream &log = std::clog) {
  OutputLock lock(cfg.output_dir);
  const auto report_path = out_path(cfg, "detect_report.json");
  if (!fs::exists(report_path))
    throw Error("cli", ErrorKind::MissingDetectOutput, "no detect output at '" + report_path.string() + "'; run detect first");
  const auto report = detail::read_json(report_path, ErrorKind::MissingDetectOutput, "cli");
  if (report.value("config_hash", "") != cfg.hash())
    log << "warning: detect output was produced by config " << report.value("config_hash", "?") << ", current is "
        << cfg.hash() << '\n';
  const auto records = detail::records_or_throw(cfg, log);
  const auto det = pipeline::detect_from_report(records, report, cfg);
  const auto val = pipeline::run_validate(records, det, pipeline::load_calendar(cfg), pipeline::load_expectations(cfg), cfg);

  for (auto p : {Perspective::Node, Perspective::Ip, Perspective::Content})
    detail::write_table(out_path(cfg, std::string("final_verdicts_") + to_string(p) + ".csv"), cfg,
                        [&](std::ostream &os) { detection::write_verdict_table(os, val.verdicts(p)); });
  detail::write_table(out_path(cfg, "rule_trace.csv"), cfg, [&](std::ostream &os) {
    os << "perspective,entity,from,to,rule,detail\n";
    for (const auto &t : val.trace)
      os << to_string(t.perspective) << ',' << t.entity_id << ',' << to_string(t.from) << ',' << to_string(t.to) << ','
         << t.rule << ",\"" << t.detail << "\"\n";
  });
  detail::write_table(out_path(cfg, "hourly_series.csv"), cfg,
                      [&](std::ostream &os) { validation::write_series_table(os, val.series); });
  detail::write_table(out_path(cfg, "node_hit_rate_series.csv"), cfg,
                      [&](std::ostream &os) { write_node_hit_rate_series(os, records); });
  detail::write_json(out_path(cfg, "validate_report.json"), pipeline::validate_report(val, cfg));
  for (const auto &w : val.warnings)
    log << "warning: " << w << '\n';
  for (const auto &p : val.periods)
    log << "abnormal period " << format_iso8601(p.start) << " - " << format_iso8601(p.end) << " (" << p.trigger
        << (p.legitimate ? ", calendar event" : "") << ")\n";
  for (auto p : {Perspective::Node, Perspective::Ip, Perspective::Content}) {
    std::size_t n = 0;
    for (const auto &v : val.verdicts(p))
      n += is_attack(v.label) ? 1 : 0;
    log << to_string(p) << ": " << n << " of " << val.verdicts(p).size() << " flagged (validated)\n";
  }
  log << val.trace.size() << " labels changed by validation\n";
  return val;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOutput {
  std::vector<eval::MetricRow> rows;
  std::optional<eval::LatencyReport> latency;
  /// Perspectives where validated F1 fell below the pattern-stage F1.
  std::vector<Perspective> regressions;
};

inline EvaluateOutput cmd_evaluate(const PipelineConfig &cfg, bool skip_validation, bool with_latency,
                                   std::ostream &log = std::clog) {
  OutputLock lock(cfg.output_dir);
  if (cfg.truth.empty())
    throw Error("cli", ErrorKind::ConfigInvalid, "config has no truth path");
  if (!fs::exists(cfg.truth))
    throw Error("eval", ErrorKind::Io, "ground-truth file '" + cfg.truth + "' does not exist");
  const auto truth = synth::read_ground_truth(cfg.truth);
  const auto det_path = out_path(cfg, "detect_report.json");
  if (!fs::exists(det_path))
    throw Error("cli", ErrorKind::MissingDetectOutput, "no detect output at '" + det_path.string() + "'");
  const auto det_report = detail::read_json(det_path, ErrorKind::MissingDetectOutput, "cli");
  std::optional<nlohmann::json> val_report;
  if (!skip_validation) {
    const auto val_path = out_path(cfg, "validate_report.json");
    if (!fs::exists(val_path))
      throw Error("cli", ErrorKind::MissingDetectOutput,
                  "no validate output at '" + val_path.string() + "'; run validate or pass --skip-validation");
    val_report = detail::read_json(val_path, ErrorKind::MissingDetectOutput, "cli");
  }

  EvaluateOutput out;
  for (auto p : {Perspective::Node, Perspective::Ip, Perspective::Content}) {
    const auto key = to_string(p);
    if (!det_report.at("verdicts").contains(key))
      continue;
    const auto bare = pipeline::verdicts_from_json(det_report["verdicts"][key]);
    const auto bare_score = eval::score(bare, truth.labels(p));
    out.rows.push_back({"pattern", p, bare_score});
    if (p == Perspective::Node && det_report.contains("model_verdicts"))
      out.rows.push_back(
          {"iforest", p, eval::score(pipeline::verdicts_from_json(det_report["model_verdicts"]["node"]), truth.labels(p))});
    if (val_report) {
      const auto fin = pipeline::verdicts_from_json(val_report->at("verdicts").at(key));
      const auto s = eval::score(fin, truth.labels(p));
      out.rows.push_back({"validated", p, s});
      out.rows.push_back({"validated-variant", p, eval::score(fin, truth.labels(p), eval::all_attacks(), eval::MatchMode::Variant)});
      if (s.f1 < bare_score.f1)
        out.regressions.push_back(p);
    }
  }
  detail::write_table(out_path(cfg, "metrics.csv"), cfg, [&](std::ostream &os) { eval::write_metrics_table(os, out.rows); });
  for (const auto &r : out.rows)
    log << r.method << ' ' << to_string(r.perspective) << ": P=" << format_real(r.score.precision)
        << " R=" << format_real(r.score.recall) << " F1=" << format_real(r.score.f1) << '\n';
  for (auto p : out.regressions)
    log << "warning: validated F1 below pattern-stage F1 on " << to_string(p) << '\n';

  if (with_latency) {
    const auto records = detail::records_or_throw(cfg, log);
    const auto det = pipeline::detect_from_report(records, det_report, cfg);
    auto frozen = cfg;
    frozen.detection = pipeline::frozen(cfg.detection, det);
    out.latency = eval::measure_latency(records, truth, frozen, pipeline::load_calendar(cfg), pipeline::load_expectations(cfg));
    detail::write_table(out_path(cfg, "latency.csv"), cfg,
                        [&](std::ostream &os) { eval::write_latency_table(os, *out.latency); });
    detail::write_table(out_path(cfg, "latency_entities.csv"), cfg,
                        [&](std::ostream &os) { eval::write_latency_records(os, *out.latency); });
    log << "latency replay: " << out.latency->batches << " batches\n";
    eval::write_latency_table(log, *out.latency);
  }
  return out;
}

// ---------------------------------------------------------------------------
// report

inline std::string cmd_report(const PipelineConfig &cfg, std::ostream &log = std::clog) {
  OutputLock lock(cfg.output_dir);
  std::ostringstream md;
  md << "# cdnguard run summary\n\nconfig hash: `" << cfg.hash() << "`  \ninput log: `" << cfg.input_log << "`\n\n";
  const auto det_path = out_path(cfg, "detect_report.json");
  if (!fs::exists(det_path))
    throw Error("cli", ErrorKind::MissingDetectOutput, "no detect output at '" + det_path.string() + "'");
  const auto det = detail::read_json(det_path, ErrorKind::MissingDetectOutput, "cli");

  auto count = [](const nlohmann::json &vs) {
    std::map<std::string, std::size_t> c;
    for (const auto &v : vs)
      ++c[v.at("label").get<std::string>()];
    std::string s;
    for (const auto &[l, n] : c)
      s += (s.empty() ? "" : ", ") + l + " " + std::to_string(n);
    return s;
  };

  md << "## Detection\n\n";
  if (det.contains("node_model"))
    md << "- node iForest contamination " << format_real(det["node_model"]["contamination"].get<double>())
       << (det["node_model"]["fallback"].get<bool>() ? " (fallback)" : "") << '\n';
  for (const char *m : {"content_model", "dos_ip_model", "cpa_ip_model"})
    if (det.contains(m))
      md << "- " << m << ": K=" << det[m]["k"].get<std::size_t>() << ", silhouette "
         << format_real(det[m]["silhouette"].get<double>()) << '\n';
  md << "\n| Perspective | Pattern-stage labels |\n|---|---|\n";
  for (const auto &[p, vs] : det["verdicts"].items())
    md << "| " << p << " | " << count(vs) << " |\n";

  const auto val_path = out_path(cfg, "validate_report.json");
  if (fs::exists(val_path)) {
    const auto val = detail::read_json(val_path, ErrorKind::Io, "cli");
    md << "\n## Validation\n\n| Perspective | Final labels |\n|---|---|\n";
    for (const auto &[p, vs] : val["verdicts"].items())
      md << "| " << p << " | " << count(vs) << " |\n";
    md << "\nAbnormal periods:\n\n";
    for (const auto &p : val["abnormal_periods"])
      md << "- " << p["start"].get<std::string>() << " to " << p["end"].get<std::string>() << ", "
         << p["trigger"].get<std::string>() << (p["legitimate"].get<bool>() ? " (calendar event)" : "") << '\n';
    md << "\nAttack hypotheses:\n\n";
    for (const auto &h : val["hypotheses"])
    {
      md << "- " << h["start"].get<std::string>() << " to " << h["end"].get<std::string>() << ": ";
      if (h["attack"].get<std::string>() == "normal")
        md << "no attack cluster found\n";
      else
        md << h["attack"].get<std::string>() << " on " << h["primary_target"].get<std::string>() << '\n';
    }
    std::map<std::string, std::size_t> rules;
    for (const auto &t : val["rule_trace"])
      ++rules[t["rule"].get<std::string>()];
    md << "\n| Rule | Labels changed |\n|---|---|\n";
    for (const auto &[r, n] : rules)
      md << "| " << r << " | " << n << " |\n";
    if (!val["warnings"].empty()) {
      md << "\nWarnings:\n\n";
      for (const auto &w : val["warnings"])
        md << "- " << w.get<std::string>() << '\n';
    }
  }

  auto table = [&](const char *file, const char *title) {
    std::ifstream in(out_path(cfg, file));
    if (!in)
      return;
    md << "\n## " << title << "\n\n";
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (line.starts_with('#'))
        continue;
      std::string row = "|";
      std::stringstream ss(line);
      std::string cell;
      std::size_t n = 0;
      while (std::getline(ss, cell, ',')) {
        row += " " + cell + " |";
        ++n;
      }
      md << row << '\n';
      if (header) {
        md << '|';
        for (std::size_t i = 0; i < n; ++i)
          md << "---|";
        md << '\n';
        header = false;
      }
    }
  };
  table("metrics.csv", "Metrics");
  table("latency.csv", "Detection latency");

  const auto path = out_path(cfg, "report.md");
  auto os = detail::open_out(path);
  os << md.str();
  log << "wrote " << path.string() << '\n';
  return md.str();
}

} // namespace cdnguard::commands
