#pragma once

#include "cdnguard/core.hpp"
#include "cdnguard/labels.hpp"
#include "cdnguard/log_model.hpp"

#include <fstream>
#include <list>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace cdnguard::synth {

struct WorkloadConfig {
  std::int64_t start = 1481500800; // 2016-12-12T00:00:00Z
  int n_days = 2;
  int n_nodes = 5;
  int n_contents = 20000;
  int n_ips = 5000;
  double zipf_s = 1.0;
  double base_rate = 6250.0;        // legitimate requests per hour, all nodes
  int cache_capacity = 2000;        // LRU entries per node
  double home_node_share = 0.8;     // share of an IP's requests sent to its home node
  double legit_error_fraction = 0.005;
  double overload_miss = 0.3;       // extra miss probability on a node under DoS
  double warmup_hours = 4.0;        // unlogged background traffic replayed to warm the caches
  std::uint64_t seed = 1;

  std::int64_t end() const { return start + static_cast<std::int64_t>(n_days) * 86400; }
};

enum class ScenarioKind { Lda, Fla, Dos, Ddos, Crowd };

inline const char *to_string(ScenarioKind k) {
  switch (k) {
  case ScenarioKind::Lda: return "lda";
  case ScenarioKind::Fla: return "fla";
  case ScenarioKind::Dos: return "dos";
  case ScenarioKind::Ddos: return "ddos";
  case ScenarioKind::Crowd: return "crowd";
  }
  return "?";
}

struct AttackScenario {
  ScenarioKind kind = ScenarioKind::Ddos;
  std::int64_t start = 0;
  std::int64_t end = 0;
  int n_attackers = 1;
  std::vector<std::string> target_nodes;    // empty: every node
  std::vector<std::string> target_contents; // fla: explicit targets
  int n_target_contents = 5;                // fla: picked from the unpopular tail when none given
  int pool_size = 10000;                    // lda: generated unpopular contents
  int n_popular = 10;                       // crowd: top contents requested
  double rate = 0.5;                        // requests/s per attacker (or crowd client)
  double error_fraction = 0.0;              // dos/ddos: share of requests to nonexistent URLs
  int error_pool = 50;                      // dos/ddos: distinct nonexistent URLs
  std::string ao;                           // AO carried by the scenario's requests
};

struct SynthOutput {
  std::vector<CleanRecord> records; // sorted by timestamp
  GroundTruth truth;
  EventCalendar calendar; // crowd windows (known legitimate events)
};

inline std::string node_name(int j) { return "node" + std::to_string(j); }

// ---------------------------------------------------------------------------
// Scenario documents.

namespace detail {

inline void reject_unknown(const nlohmann::json &j, std::initializer_list<std::string_view> keys,
                           const char *what) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
      throw Error("synth", ErrorKind::ConfigInvalid,
                  std::string("unknown ") + what + " key '" + it.key() + "'");
}

} // namespace detail

inline WorkloadConfig workload_from_json(const nlohmann::json &j) {
  detail::reject_unknown(j,
                         {"start", "n_days", "n_nodes", "n_contents", "n_ips", "zipf_s", "base_rate",
                          "cache_capacity", "home_node_share", "legit_error_fraction", "overload_miss",
                          "warmup_hours", "seed"},
                         "workload");
  WorkloadConfig c;
  if (j.contains("start"))
    c.start = parse_iso8601(j["start"].get<std::string>());
  c.n_days = j.value("n_days", c.n_days);
  c.n_nodes = j.value("n_nodes", c.n_nodes);
  c.n_contents = j.value("n_contents", c.n_contents);
  c.n_ips = j.value("n_ips", c.n_ips);
  c.zipf_s = j.value("zipf_s", c.zipf_s);
  c.base_rate = j.value("base_rate", c.base_rate);
  c.cache_capacity = j.value("cache_capacity", c.cache_capacity);
  c.home_node_share = j.value("home_node_share", c.home_node_share);
  c.legit_error_fraction = j.value("legit_error_fraction", c.legit_error_fraction);
  c.overload_miss = j.value("overload_miss", c.overload_miss);
  c.warmup_hours = j.value("warmup_hours", c.warmup_hours);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline AttackScenario scenario_from_json(const nlohmann::json &j) {
  detail::reject_unknown(j,
                         {"kind", "start", "end", "n_attackers", "target_nodes", "target_contents",
                          "n_target_contents", "pool_size", "n_popular", "rate", "error_fraction",
                          "error_pool", "ao"},
                         "scenario");
  AttackScenario s;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "lda")
    s.kind = ScenarioKind::Lda;
  else if (kind == "fla")
    s.kind = ScenarioKind::Fla;
  else if (kind == "dos")
    s.kind = ScenarioKind::Dos;
  else if (kind == "ddos")
    s.kind = ScenarioKind::Ddos;
  else if (kind == "crowd")
    s.kind = ScenarioKind::Crowd;
  else
    throw Error("synth", ErrorKind::ConfigInvalid, "unknown scenario kind '" + kind + "'");
  s.start = parse_iso8601(j.at("start").get<std::string>());
  s.end = parse_iso8601(j.at("end").get<std::string>());
  s.n_attackers = j.value("n_attackers", s.n_attackers);
  s.target_nodes = j.value("target_nodes", s.target_nodes);
  s.target_contents = j.value("target_contents", s.target_contents);
  s.n_target_contents = j.value("n_target_contents", s.n_target_contents);
  s.pool_size = j.value("pool_size", s.pool_size);
  s.n_popular = j.value("n_popular", s.n_popular);
  s.rate = j.value("rate", s.rate);
  s.error_fraction = j.value("error_fraction", s.error_fraction);
  s.error_pool = j.value("error_pool", s.error_pool);
  s.ao = j.value("ao", s.ao);
  return s;
}

struct ScenarioFile {
  WorkloadConfig workload;
  std::vector<AttackScenario> scenarios;
};

inline ScenarioFile scenario_file_from_json(const nlohmann::json &j) {
  detail::reject_unknown(j, {"workload", "scenarios"}, "scenario file");
  ScenarioFile f;
  if (j.contains("workload"))
    f.workload = workload_from_json(j["workload"]);
  for (const auto &s : j.value("scenarios", nlohmann::json::array()))
    f.scenarios.push_back(scenario_from_json(s));
  return f;
}

// ---------------------------------------------------------------------------
// Generation.

namespace detail {

/// Inverse-CDF Zipf sampler over ranks [0, n).
class ZipfSampler {
public:
  ZipfSampler(int n, double s) : cdf_(static_cast<std::size_t>(n)) {
    double acc = 0.0;
    for (int r = 0; r < n; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), s);
      cdf_[static_cast<std::size_t>(r)] = acc;
    }
    for (auto &v : cdf_)
      v /= acc;
  }
  int operator()(Rng &rng) const {
    const double u = uniform01(rng);
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<int>(std::min<std::ptrdiff_t>(it - cdf_.begin(),
                                                      static_cast<std::ptrdiff_t>(cdf_.size()) - 1));
  }

private:
  std::vector<double> cdf_;
};

class LruCache {
public:
  explicit LruCache(std::size_t capacity) : capacity_(capacity) {}

  /// Returns true on a hit; on a miss the key is inserted (evicting the LRU entry).
  bool access(std::int64_t key) {
    if (const auto it = index_.find(key); it != index_.end()) {
      order_.splice(order_.begin(), order_, it->second);
      return true;
    }
    order_.push_front(key);
    index_[key] = order_.begin();
    if (order_.size() > capacity_) {
      index_.erase(order_.back());
      order_.pop_back();
    }
    return false;
  }

private:
  std::size_t capacity_;
  std::list<std::int64_t> order_;
  std::unordered_map<std::int64_t, std::list<std::int64_t>::iterator> index_;
};

struct Event {
  std::int64_t t = 0;
  std::uint32_t ip = 0;
  std::int64_t content = 0; // >= 0: catalog or pool content; < 0: nonexistent URL
  std::uint16_t node = 0;
  std::int16_t scenario = -1; // -1: background legitimate traffic
  std::uint16_t ao = 0;
};

struct AoInfo {
  std::string id;
  ServiceType service;
  ContentType content;
};

inline std::string ip_text(int a, int b, int c, int d) {
  return std::to_string(a) + '.' + std::to_string(b) + '.' + std::to_string(c) + '.' + std::to_string(d);
}

inline std::int64_t content_bytes(std::int64_t content, ContentType type) {
  const auto h = splitmix64(static_cast<std::uint64_t>(content) * 2654435761ULL + 17);
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  switch (type) {
  case ContentType::Image: return 20'000 + static_cast<std::int64_t>(u * 180'000);
  case ContentType::Text: return 2'000 + static_cast<std::int64_t>(u * 48'000);
  case ContentType::Video: return 500'000 + static_cast<std::int64_t>(u * 4'500'000);
  default: return 10'000 + static_cast<std::int64_t>(u * 90'000);
  }
}

} // namespace detail

inline void validate_scenarios(const WorkloadConfig &cfg, const std::vector<AttackScenario> &scenarios) {
  auto bad = [](const std::string &m) { return Error("synth", ErrorKind::ConfigInvalid, m); };
  if (cfg.n_days < 1 || cfg.n_nodes < 1 || cfg.n_contents < 1 || cfg.n_ips < 1 || cfg.cache_capacity < 1)
    throw bad("workload counts must all be >= 1");
  if (!(cfg.zipf_s > 0.0) || !(cfg.base_rate >= 0.0) || !(cfg.warmup_hours >= 0.0))
    throw bad("zipf_s must be > 0, base_rate and warmup_hours >= 0");
  std::set<std::string> nodes;
  for (int j = 0; j < cfg.n_nodes; ++j)
    nodes.insert(node_name(j));
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const auto &s = scenarios[i];
    const std::string tag = std::string("scenario ") + std::to_string(i) + " (" + to_string(s.kind) + ")";
    if (!(s.start < s.end) || s.start < cfg.start || s.end > cfg.end())
      throw bad(tag + ": window must satisfy start < end and lie inside the workload span [" +
                format_iso8601(cfg.start) + ", " + format_iso8601(cfg.end()) + ")");
    if (s.n_attackers < 1 || !(s.rate > 0.0))
      throw bad(tag + ": n_attackers must be >= 1 and rate > 0");
    if (s.error_fraction < 0.0 || s.error_fraction > 1.0)
      throw bad(tag + ": error_fraction must lie in [0, 1]");
    for (const auto &n : s.target_nodes)
      if (!nodes.contains(n))
        throw bad(tag + ": unknown target node '" + n + "'");
    if (s.kind == ScenarioKind::Fla) {
      const auto n_targets = s.target_contents.empty() ? s.n_target_contents
                                                       : static_cast<int>(s.target_contents.size());
      if (n_targets < 1 || n_targets > 10)
        throw bad(tag + ": fla needs between 1 and 10 target contents");
    }
    if (s.kind == ScenarioKind::Lda && s.pool_size < 1)
      throw bad(tag + ": lda pool_size must be >= 1");
    if (s.kind == ScenarioKind::Crowd && (s.n_popular < 1 || s.n_popular > cfg.n_contents))
      throw bad(tag + ": crowd n_popular must lie in [1, n_contents]");
    if ((s.kind == ScenarioKind::Dos || s.kind == ScenarioKind::Ddos) && s.error_pool < 1)
      throw bad(tag + ": error_pool must be >= 1");
  }
}

inline std::string content_url(std::int64_t rank) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "/c/%06lld", static_cast<long long>(rank));
  return buf;
}

/// Builds a labeled synthetic log. Background clients pick contents from a
/// Zipf law and nodes from a home-node preference; per-node LRU caches decide
/// hit or miss in timestamp order.
inline SynthOutput generate_log(const WorkloadConfig &cfg, const std::vector<AttackScenario> &scenarios) {
  validate_scenarios(cfg, scenarios);
  Rng rng(cfg.seed);
  const detail::ZipfSampler zipf(cfg.n_contents, cfg.zipf_s);

  // AO table: background AOs first, then one per distinct scenario AO.
  std::vector<detail::AoInfo> aos{{"ao1", ServiceType::Static, ContentType::Image},
                                  {"ao2", ServiceType::Static, ContentType::Text},
                                  {"ao3", ServiceType::ProgressiveDownload, ContentType::Video},
                                  {"ao4", ServiceType::LiveStreaming, ContentType::Video}};
  const std::size_t n_background_aos = aos.size();
  auto ao_index = [&](const std::string &id, ServiceType st, ContentType ct) {
    for (std::size_t i = 0; i < aos.size(); ++i)
      if (aos[i].id == id)
        return static_cast<std::uint16_t>(i);
    aos.push_back({id, st, ct});
    return static_cast<std::uint16_t>(aos.size() - 1);
  };

  // IP table.
  std::vector<std::string> ips;
  std::vector<Label> ip_label;
  for (int i = 0; i < cfg.n_ips; ++i) {
    ips.push_back(detail::ip_text(10, (i >> 16) & 255, (i >> 8) & 255, i & 255));
    ip_label.push_back(Label::Normal);
  }

  // Content id space: [0, n_contents) catalog, then one block per lda pool;
  // negative ids are nonexistent URLs.
  std::int64_t next_pool = cfg.n_contents;
  std::map<std::int64_t, std::string> special_urls;
  std::map<std::int64_t, Label> special_labels;
  std::map<std::int64_t, std::uint16_t> special_ao;

  std::vector<detail::Event> events;
  const auto span = static_cast<double>(cfg.end() - cfg.start);
  const auto n_background = static_cast<std::size_t>(std::llround(cfg.base_rate * span / 3600.0));
  events.reserve(n_background);
  for (std::size_t k = 0; k < n_background; ++k) {
    detail::Event e;
    e.t = cfg.start + static_cast<std::int64_t>(uniform01(rng) * span);
    e.ip = static_cast<std::uint32_t>(uniform_index(rng, static_cast<std::uint64_t>(cfg.n_ips)));
    e.content = zipf(rng);
    const int home = static_cast<int>(e.ip % static_cast<std::uint32_t>(cfg.n_nodes));
    e.node = static_cast<std::uint16_t>(uniform01(rng) < cfg.home_node_share
                                            ? home
                                            : static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.n_nodes))));
    e.ao = static_cast<std::uint16_t>(e.content % static_cast<std::int64_t>(n_background_aos));
    events.push_back(e);
  }

  auto node_index = [&](const std::string &name) {
    for (int j = 0; j < cfg.n_nodes; ++j)
      if (node_name(j) == name)
        return static_cast<std::uint16_t>(j);
    return std::uint16_t{0};
  };

  SynthOutput out;
  std::map<std::uint16_t, std::map<Label, double>> node_attack_labels;
  std::vector<std::tuple<std::uint16_t, std::int64_t, std::int64_t>> overload; // node, start, end

  for (std::size_t si = 0; si < scenarios.size(); ++si) {
    const auto &s = scenarios[si];
    std::vector<std::uint16_t> targets;
    for (const auto &n : s.target_nodes)
      targets.push_back(node_index(n));
    if (targets.empty())
      for (int j = 0; j < cfg.n_nodes; ++j)
        targets.push_back(static_cast<std::uint16_t>(j));

    AttackWindow window{to_string(s.kind), s.start, s.end, {}};
    for (auto t : targets)
      window.target_nodes.push_back(node_name(t));

    Label label = Label::Normal;
    std::uint16_t ao = 0;
    int octet = 0;
    switch (s.kind) {
    case ScenarioKind::Crowd:
      ao = ao_index(s.ao.empty() ? "ao_event" : s.ao, ServiceType::Static, ContentType::Image);
      octet = 172;
      break;
    case ScenarioKind::Dos:
    case ScenarioKind::Ddos:
      label = Label::Dos;
      ao = ao_index(s.ao.empty() ? "ao7" : s.ao, ServiceType::Static, ContentType::Text);
      octet = 198;
      break;
    case ScenarioKind::Lda:
      label = Label::CpaLda;
      ao = ao_index(s.ao.empty() ? "ao6" : s.ao, ServiceType::ProgressiveDownload, ContentType::Video);
      octet = 192;
      break;
    case ScenarioKind::Fla:
      label = Label::CpaFla;
      ao = ao_index(s.ao.empty() ? "ao8" : s.ao, ServiceType::Static, ContentType::Image);
      octet = 100;
      break;
    }

    // Content choices for this scenario.
    std::vector<std::int64_t> fla_targets;
    std::int64_t pool_base = 0;
    std::int64_t error_base = 0;
    if (s.kind == ScenarioKind::Fla) {
      if (!s.target_contents.empty()) {
        for (const auto &url : s.target_contents) {
          const std::int64_t id = next_pool++;
          special_urls[id] = url;
          fla_targets.push_back(id);
        }
      } else {
        // Unpopular tail of the catalog: ranks in the last half.
        const auto half = static_cast<std::uint64_t>(cfg.n_contents) / 2;
        for (auto r : sample_without_replacement(rng, static_cast<std::size_t>(cfg.n_contents) - half,
                                                 static_cast<std::size_t>(s.n_target_contents)))
          fla_targets.push_back(static_cast<std::int64_t>(half + r));
      }
      for (auto c : fla_targets)
        special_labels[c] = Label::CpaFla;
    } else if (s.kind == ScenarioKind::Lda) {
      pool_base = next_pool;
      next_pool += s.pool_size;
      for (int k = 0; k < s.pool_size; ++k) {
        special_urls[pool_base + k] = "/lda" + std::to_string(si) + "/" + std::to_string(k) + ".mp4";
        special_labels[pool_base + k] = Label::CpaLda;
        special_ao[pool_base + k] = ao;
      }
    } else if (s.kind == ScenarioKind::Dos || s.kind == ScenarioKind::Ddos) {
      error_base = -1 - static_cast<std::int64_t>(si) * 1'000'000;
      for (int k = 0; k < s.error_pool; ++k) {
        special_urls[error_base - k] = "/nx" + std::to_string(si) + "/" + std::to_string(k) + ".html";
        special_labels[error_base - k] = Label::Dos;
      }
      for (auto t : targets)
        overload.emplace_back(t, s.start, s.end);
    }

    for (int a = 0; a < s.n_attackers; ++a) {
      const auto ip = static_cast<std::uint32_t>(ips.size());
      ips.push_back(detail::ip_text(octet, static_cast<int>(si), a / 256, a % 256));
      ip_label.push_back(label);
      const auto home = targets[static_cast<std::size_t>(a) % targets.size()];
      double t = static_cast<double>(s.start) + exponential(rng, s.rate);
      while (t < static_cast<double>(s.end)) {
        detail::Event e;
        e.t = static_cast<std::int64_t>(t);
        e.ip = ip;
        e.scenario = static_cast<std::int16_t>(si);
        e.ao = ao;
        switch (s.kind) {
        case ScenarioKind::Crowd:
          e.node = home;
          e.content = static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(s.n_popular)));
          break;
        case ScenarioKind::Dos:
        case ScenarioKind::Ddos:
          e.node = targets[uniform_index(rng, targets.size())];
          if (uniform01(rng) < s.error_fraction) {
            e.content = error_base - static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(s.error_pool)));
          } else {
            e.content = zipf(rng);
          }
          break;
        case ScenarioKind::Lda:
          e.node = targets[uniform_index(rng, targets.size())];
          e.content = pool_base + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(s.pool_size)));
          break;
        case ScenarioKind::Fla:
          e.node = targets[uniform_index(rng, targets.size())];
          e.content = fla_targets[uniform_index(rng, fla_targets.size())];
          break;
        }
        if (label != Label::Normal)
          node_attack_labels[e.node][label] += 1;
        events.push_back(e);
        t += exponential(rng, s.rate);
      }
    }

    out.truth.attack_windows.push_back(window);
    if (s.kind == ScenarioKind::Crowd)
      out.calendar.events.push_back({s.start, s.end, EventKind::Crowd, "synthetic crowd event " + std::to_string(si)});
  }

  std::stable_sort(events.begin(), events.end(),
                   [](const detail::Event &a, const detail::Event &b) { return a.t < b.t; });

  // Replay through per-node LRU caches.
  std::vector<detail::LruCache> caches(static_cast<std::size_t>(cfg.n_nodes),
                                       detail::LruCache(static_cast<std::size_t>(cfg.cache_capacity)));
  const auto n_warmup = static_cast<std::size_t>(std::llround(cfg.base_rate * cfg.warmup_hours));
  for (std::size_t k = 0; k < n_warmup; ++k) {
    const auto ip = uniform_index(rng, static_cast<std::uint64_t>(cfg.n_ips));
    const auto home = static_cast<std::size_t>(ip % static_cast<std::uint64_t>(cfg.n_nodes));
    const auto node = uniform01(rng) < cfg.home_node_share
                          ? home
                          : static_cast<std::size_t>(uniform_index(rng, static_cast<std::uint64_t>(cfg.n_nodes)));
    caches[node].access(zipf(rng));
  }
  auto overloaded = [&](std::uint16_t node, std::int64_t t) {
    for (const auto &[n, a, b] : overload)
      if (n == node && t >= a && t < b)
        return true;
    return false;
  };

  std::set<std::int64_t> seen_contents;
  out.records.reserve(events.size());
  for (const auto &e : events) {
    CleanRecord r;
    r.ip = ips[e.ip];
    r.timestamp = e.t;
    r.node = node_name(e.node);
    const auto &ao = aos[e.ao];
    r.account_offering = ao.id;
    r.service_type = ao.service;
    r.content_type = ao.content;
    r.http_method = HttpMethod::Get;
    seen_contents.insert(e.content);
    if (const auto it = special_urls.find(e.content); it != special_urls.end())
      r.content_url = it->second;
    else
      r.content_url = content_url(e.content);

    const bool under_dos = overloaded(e.node, e.t);
    const bool legit = e.scenario < 0 || scenarios[static_cast<std::size_t>(e.scenario)].kind == ScenarioKind::Crowd;
    if (e.content < 0) {
      r.status_code = 404;
      r.cache_hit = false;
      r.bytes = 500;
      r.delivery_time_ms = 2 + static_cast<std::int64_t>(uniform_index(rng, 8));
    } else {
      bool hit = caches[e.node].access(e.content);
      if (legit && under_dos && hit && uniform01(rng) < cfg.overload_miss)
        hit = false;
      r.cache_hit = hit;
      if (e.scenario < 0 && uniform01(rng) < cfg.legit_error_fraction) {
        r.status_code = uniform01(rng) < 0.7 ? 404 : 503;
        r.bytes = 500;
        r.delivery_time_ms = 2 + static_cast<std::int64_t>(uniform_index(rng, 8));
      } else {
        r.status_code = 200;
        r.bytes = detail::content_bytes(e.content, r.content_type);
        // Edge serves at ~10 MB/s, origin fetches at ~2 MB/s plus a round trip.
        const double mbps = hit ? 10.0 : 2.0;
        double ms = 5.0 + static_cast<double>(r.bytes) / (mbps * 1e3) + (hit ? 0.0 : 80.0);
        if (under_dos)
          ms *= 3.0;
        r.delivery_time_ms = static_cast<std::int64_t>(ms);
      }
    }
    out.records.push_back(std::move(r));
  }

  // Ground truth restricted to entities present in the log.
  std::set<std::uint32_t> seen_ips;
  for (const auto &e : events)
    seen_ips.insert(e.ip);
  for (auto i : seen_ips)
    out.truth.ip_labels[ips[i]] = ip_label[i];
  for (int j = 0; j < cfg.n_nodes; ++j) {
    const auto node = static_cast<std::uint16_t>(j);
    Label l = Label::Normal;
    if (const auto it = node_attack_labels.find(node); it != node_attack_labels.end()) {
      double best = 0.0;
      for (const auto &[lab, n] : it->second)
        if (n > best) {
          best = n;
          l = lab;
        }
    }
    bool present = false;
    for (const auto &r : out.records)
      if (r.node == node_name(j)) {
        present = true;
        break;
      }
    if (present)
      out.truth.node_labels[node_name(j)] = l;
  }
  for (auto c : seen_contents) {
    const auto url = special_urls.contains(c) ? special_urls.at(c) : content_url(c);
    const auto it = special_labels.find(c);
    out.truth.content_labels[url] = it == special_labels.end() ? Label::Normal : it->second;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output.

inline void write_log(std::ostream &os, const std::vector<CleanRecord> &records) {
  for (const auto &r : records)
    os << format_log_line(r) << '\n';
}

inline void emit_ground_truth(const GroundTruth &truth, const std::string &path) {
  std::ofstream out(path);
  if (!out)
    throw Error("synth", ErrorKind::Io, "cannot write ground truth to '" + path + "'");
  out << to_json(truth).dump(1) << '\n';
}

inline GroundTruth read_ground_truth(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw Error("eval", ErrorKind::Io, "cannot read ground truth '" + path + "'");
  return ground_truth_from_json(nlohmann::json::parse(in));
}

} // namespace cdnguard::synth
