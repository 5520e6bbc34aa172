#pragma once

#include "cdnguard/core.hpp"
#include "cdnguard/log_model.hpp"

#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

namespace cdnguard {

using PopularityMap = std::unordered_map<std::string, double>;
using AoShares = std::map<std::string, double>;

struct ContentFeatures {
  std::string content_id;
  double n_requests = 0;
  double popularity = 0;
  double cache_hit_rate = 0;
  double req_per_ip = 0;
  double req_per_node = 0;
};

struct NodeFeatures {
  std::string node_id;
  double n_requests = 0;
  double cache_hit_rate = 0;
  double legit_ip_cache_hit_rate = 0;
  double data_transfer_rate_mbps = 0;
  double request_error_rate = 0;
  double avg_request_popularity = 0;
  AoShares ao_request_rate;
};

struct IpFeatures {
  std::string ip;
  double n_requests = 0;
  double avg_request_interval_s = 0;
  double n_nodes = 0;
  double n_contents = 0;
  double req_per_content = 0;
  double req_per_node = 0;
  double avg_request_popularity = 0;
  double cache_hit_rate = 0;
  double request_error_rate = 0;
  AoShares ao_request_rate;
};

struct AoFeatures {
  std::string ao_id;
  double n_requests = 0;
  double n_nodes = 0;
  ServiceType service_type = ServiceType::Other;
  ContentType content_type = ContentType::Other;
  double cache_hit_rate = 0;
  double request_popularity = 0;
};

// ---------------------------------------------------------------------------
// Named access to numeric features, used by pattern profiles and summaries.

inline double top_share(const AoShares &shares) {
  double best = 0.0;
  for (const auto &[_, v] : shares)
    best = std::max(best, v);
  return best;
}

/// Key of the largest share; ties go to the lexicographically smallest key.
inline std::string dominant_key(const AoShares &shares) {
  std::string key;
  double best = -1.0;
  for (const auto &[k, v] : shares)
    if (v > best) {
      best = v;
      key = k;
    }
  return key;
}

template <class Row> struct FeatureTraits;

template <> struct FeatureTraits<ContentFeatures> {
  static constexpr const char *perspective = "content";
  static const std::string &id(const ContentFeatures &r) { return r.content_id; }
  static std::vector<std::string> names() {
    return {"n_requests", "popularity", "cache_hit_rate", "req_per_ip", "req_per_node"};
  }
  static std::vector<double> values(const ContentFeatures &r) {
    return {r.n_requests, r.popularity, r.cache_hit_rate, r.req_per_ip, r.req_per_node};
  }
};

template <> struct FeatureTraits<NodeFeatures> {
  static constexpr const char *perspective = "node";
  static const std::string &id(const NodeFeatures &r) { return r.node_id; }
  static std::vector<std::string> names() {
    return {"n_requests",         "cache_hit_rate",         "legit_ip_cache_hit_rate",
            "data_transfer_rate_mbps", "request_error_rate", "avg_request_popularity",
            "top_ao_share"};
  }
  static std::vector<double> values(const NodeFeatures &r) {
    return {r.n_requests,         r.cache_hit_rate,         r.legit_ip_cache_hit_rate,
            r.data_transfer_rate_mbps, r.request_error_rate, r.avg_request_popularity,
            top_share(r.ao_request_rate)};
  }
};

template <> struct FeatureTraits<IpFeatures> {
  static constexpr const char *perspective = "ip";
  static const std::string &id(const IpFeatures &r) { return r.ip; }
  static std::vector<std::string> names() {
    return {"n_requests",       "avg_request_interval_s", "n_nodes",
            "n_contents",       "req_per_content",        "req_per_node",
            "avg_request_popularity", "cache_hit_rate",   "request_error_rate",
            "top_ao_share"};
  }
  static std::vector<double> values(const IpFeatures &r) {
    return {r.n_requests,      r.avg_request_interval_s, r.n_nodes,
            r.n_contents,      r.req_per_content,        r.req_per_node,
            r.avg_request_popularity, r.cache_hit_rate,  r.request_error_rate,
            top_share(r.ao_request_rate)};
  }
};

template <> struct FeatureTraits<AoFeatures> {
  static constexpr const char *perspective = "ao";
  static const std::string &id(const AoFeatures &r) { return r.ao_id; }
  static std::vector<std::string> names() {
    return {"n_requests", "n_nodes", "cache_hit_rate", "request_popularity"};
  }
  static std::vector<double> values(const AoFeatures &r) {
    return {r.n_requests, r.n_nodes, r.cache_hit_rate, r.request_popularity};
  }
};

/// Value of a named numeric feature; throws WrongPerspective for unknown names.
template <class Row> double feature_value(const Row &row, std::string_view name) {
  const auto names = FeatureTraits<Row>::names();
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name)
      return FeatureTraits<Row>::values(row)[i];
  throw Error("features", ErrorKind::WrongPerspective,
              "feature '" + std::string(name) + "' does not exist in the " +
                  FeatureTraits<Row>::perspective + " schema");
}

template <class Row> bool has_feature(std::string_view name) {
  for (const auto &n : FeatureTraits<Row>::names())
    if (n == name)
      return true;
  return false;
}

// ---------------------------------------------------------------------------
// Aggregation.

namespace detail {

/// Maps distinct strings to dense ids in first-seen order.
class Interner {
public:
  std::uint32_t id(std::string_view s) {
    auto [it, inserted] = ids_.try_emplace(s, static_cast<std::uint32_t>(names_.size()));
    if (inserted)
      names_.push_back(s);
    return it->second;
  }
  std::size_t size() const { return names_.size(); }
  std::string_view name(std::uint32_t i) const { return names_[i]; }

private:
  std::unordered_map<std::string_view, std::uint32_t> ids_;
  std::vector<std::string_view> names_;
};

inline std::uint64_t pair_key(std::uint32_t a, std::uint32_t b) {
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

inline bool is_error_status(int status) { return status >= 400; }

/// Fixed-point accumulator for values in [0, 1] so sums do not depend on
/// record order (resolution 2^-60).
class OrderFreeSum {
public:
  void add(double v) { acc_ += static_cast<__int128>(std::llround(std::ldexp(v, 60))); }
  double value() const { return std::ldexp(static_cast<double>(acc_), -60); }

private:
  __int128 acc_ = 0;
};

/// Sorts rows by entity id so every table is emitted in a canonical order.
template <class Row> void sort_rows(std::vector<Row> &rows) {
  std::sort(rows.begin(), rows.end(), [](const Row &a, const Row &b) {
    return FeatureTraits<Row>::id(a) < FeatureTraits<Row>::id(b);
  });
}

inline double popularity_of(const PopularityMap &pop, const std::string &content) {
  const auto it = pop.find(content);
  return it == pop.end() ? 0.0 : it->second;
}

} // namespace detail

using detail::is_error_status;
using detail::popularity_of;

/// Popularity of each content: min-max-normalized count of distinct IPs.
inline PopularityMap compute_popularity(const std::vector<CleanRecord> &records) {
  if (records.empty())
    throw Error("features", ErrorKind::EmptyInput, "cannot compute popularity of an empty log");
  detail::Interner contents, ips;
  std::unordered_set<std::uint64_t> seen;
  std::vector<double> distinct;
  for (const auto &r : records) {
    const auto c = contents.id(r.content_url);
    const auto ip = ips.id(r.ip);
    if (c >= distinct.size())
      distinct.resize(c + 1, 0.0);
    if (seen.insert(detail::pair_key(c, ip)).second)
      distinct[c] += 1.0;
  }
  const auto stats = ColumnStats::fit(distinct);
  PopularityMap out;
  out.reserve(distinct.size());
  for (std::uint32_t c = 0; c < distinct.size(); ++c)
    out.emplace(std::string(contents.name(c)), minmax_normalize(distinct[c], stats));
  return out;
}

inline std::vector<ContentFeatures> aggregate_by_content(const std::vector<CleanRecord> &records,
                                                         const PopularityMap &popularity) {
  detail::Interner contents, ips, nodes;
  struct Acc {
    double n = 0, hits = 0, ips = 0, nodes = 0;
  };
  std::vector<Acc> acc;
  std::unordered_set<std::uint64_t> seen_ip, seen_node;
  for (const auto &r : records) {
    const auto c = contents.id(r.content_url);
    if (c >= acc.size())
      acc.resize(c + 1);
    auto &a = acc[c];
    a.n += 1;
    a.hits += r.cache_hit ? 1 : 0;
    if (seen_ip.insert(detail::pair_key(c, ips.id(r.ip))).second)
      a.ips += 1;
    if (seen_node.insert(detail::pair_key(c, nodes.id(r.node))).second)
      a.nodes += 1;
  }
  std::vector<ContentFeatures> rows;
  rows.reserve(acc.size());
  for (std::uint32_t c = 0; c < acc.size(); ++c) {
    const auto &a = acc[c];
    ContentFeatures f;
    f.content_id = std::string(contents.name(c));
    f.n_requests = a.n;
    f.popularity = detail::popularity_of(popularity, f.content_id);
    f.cache_hit_rate = a.hits / a.n;
    f.req_per_ip = a.n / a.ips;
    f.req_per_node = a.n / a.nodes;
    rows.push_back(std::move(f));
  }
  detail::sort_rows(rows);
  return rows;
}

inline std::vector<IpFeatures> aggregate_by_ip(const std::vector<CleanRecord> &records,
                                               const PopularityMap &popularity) {
  detail::Interner ips, nodes, contents;
  struct Acc {
    double n = 0, hits = 0, errors = 0, nodes = 0, contents = 0;
    detail::OrderFreeSum pop_sum;
    std::int64_t t_min = std::numeric_limits<std::int64_t>::max();
    std::int64_t t_max = std::numeric_limits<std::int64_t>::min();
    std::map<std::string, double> ao;
  };
  std::vector<Acc> acc;
  std::unordered_set<std::uint64_t> seen_node, seen_content;
  for (const auto &r : records) {
    const auto i = ips.id(r.ip);
    if (i >= acc.size())
      acc.resize(i + 1);
    auto &a = acc[i];
    a.n += 1;
    a.hits += r.cache_hit ? 1 : 0;
    a.errors += detail::is_error_status(r.status_code) ? 1 : 0;
    a.pop_sum.add(detail::popularity_of(popularity, r.content_url));
    a.t_min = std::min(a.t_min, r.timestamp);
    a.t_max = std::max(a.t_max, r.timestamp);
    a.ao[r.account_offering] += 1;
    if (seen_node.insert(detail::pair_key(i, nodes.id(r.node))).second)
      a.nodes += 1;
    if (seen_content.insert(detail::pair_key(i, contents.id(r.content_url))).second)
      a.contents += 1;
  }
  std::vector<IpFeatures> rows;
  rows.reserve(acc.size());
  for (std::uint32_t i = 0; i < acc.size(); ++i) {
    auto &a = acc[i];
    IpFeatures f;
    f.ip = std::string(ips.name(i));
    f.n_requests = a.n;
    // Mean gap between consecutive sorted timestamps telescopes to span/(n-1).
    f.avg_request_interval_s =
        a.n > 1 ? static_cast<double>(a.t_max - a.t_min) / (a.n - 1) : 0.0;
    f.n_nodes = a.nodes;
    f.n_contents = a.contents;
    f.req_per_content = a.n / a.contents;
    f.req_per_node = a.n / a.nodes;
    f.avg_request_popularity = a.pop_sum.value() / a.n;
    f.cache_hit_rate = a.hits / a.n;
    f.request_error_rate = a.errors / a.n;
    for (auto &[k, v] : a.ao)
      f.ao_request_rate[k] = v / a.n;
    rows.push_back(std::move(f));
  }
  detail::sort_rows(rows);
  return rows;
}

/// `legit_popularity`: an IP is "legitimate" for legit_ip_cache_hit_rate when
/// its avg_request_popularity is at least this value.
inline std::vector<NodeFeatures> aggregate_by_node(const std::vector<CleanRecord> &records,
                                                   const PopularityMap &popularity,
                                                   const std::vector<IpFeatures> &ip_features,
                                                   double legit_popularity = 0.9) {
  std::unordered_set<std::string_view> legit;
  for (const auto &f : ip_features)
    if (f.avg_request_popularity >= legit_popularity)
      legit.insert(f.ip);

  detail::Interner nodes, ips;
  struct Acc {
    double n = 0, hits = 0, errors = 0, bytes = 0, delivery_ms = 0;
    detail::OrderFreeSum pop_sum;
    std::map<std::string, double> ao;
  };
  struct IpOnNode {
    double n = 0, hits = 0;
  };
  std::vector<Acc> acc;
  std::unordered_map<std::uint64_t, IpOnNode> legit_acc;
  for (const auto &r : records) {
    const auto nd = nodes.id(r.node);
    if (nd >= acc.size())
      acc.resize(nd + 1);
    auto &a = acc[nd];
    a.n += 1;
    a.hits += r.cache_hit ? 1 : 0;
    a.errors += detail::is_error_status(r.status_code) ? 1 : 0;
    a.pop_sum.add(detail::popularity_of(popularity, r.content_url));
    a.bytes += static_cast<double>(r.bytes);
    a.delivery_ms += static_cast<double>(r.delivery_time_ms);
    a.ao[r.account_offering] += 1;
    if (legit.contains(r.ip)) {
      auto &l = legit_acc[detail::pair_key(nd, ips.id(r.ip))];
      l.n += 1;
      l.hits += r.cache_hit ? 1 : 0;
    }
  }
  std::vector<detail::OrderFreeSum> legit_sum(acc.size());
  std::vector<double> legit_count(acc.size(), 0.0);
  for (const auto &[key, l] : legit_acc) {
    const auto nd = static_cast<std::uint32_t>(key >> 32);
    legit_sum[nd].add(l.hits / l.n);
    legit_count[nd] += 1;
  }
  std::vector<NodeFeatures> rows;
  rows.reserve(acc.size());
  for (std::uint32_t nd = 0; nd < acc.size(); ++nd) {
    const auto &a = acc[nd];
    NodeFeatures f;
    f.node_id = std::string(nodes.name(nd));
    f.n_requests = a.n;
    f.cache_hit_rate = a.hits / a.n;
    f.legit_ip_cache_hit_rate =
        legit_count[nd] > 0 ? legit_sum[nd].value() / legit_count[nd] : f.cache_hit_rate;
    // MB = 1e6 bytes; delivery time is in milliseconds.
    f.data_transfer_rate_mbps = a.delivery_ms > 0 ? (a.bytes / 1e6) / (a.delivery_ms / 1e3) : 0.0;
    f.request_error_rate = a.errors / a.n;
    f.avg_request_popularity = a.pop_sum.value() / a.n;
    for (const auto &[k, v] : a.ao)
      f.ao_request_rate[k] = v / a.n;
    rows.push_back(std::move(f));
  }
  detail::sort_rows(rows);
  return rows;
}

inline std::vector<AoFeatures> aggregate_by_ao(const std::vector<CleanRecord> &records,
                                               const PopularityMap &popularity) {
  detail::Interner aos, nodes;
  struct Acc {
    double n = 0, hits = 0, nodes = 0;
    detail::OrderFreeSum pop_sum;
    std::array<double, 4> service{};
    std::array<double, 5> content{};
  };
  std::vector<Acc> acc;
  std::unordered_set<std::uint64_t> seen_node;
  for (const auto &r : records) {
    const auto ao = aos.id(r.account_offering);
    if (ao >= acc.size())
      acc.resize(ao + 1);
    auto &a = acc[ao];
    a.n += 1;
    a.hits += r.cache_hit ? 1 : 0;
    a.pop_sum.add(detail::popularity_of(popularity, r.content_url));
    a.service[static_cast<std::size_t>(r.service_type)] += 1;
    a.content[static_cast<std::size_t>(r.content_type)] += 1;
    if (seen_node.insert(detail::pair_key(ao, nodes.id(r.node))).second)
      a.nodes += 1;
  }
  std::vector<AoFeatures> rows;
  rows.reserve(acc.size());
  for (std::uint32_t ao = 0; ao < acc.size(); ++ao) {
    const auto &a = acc[ao];
    AoFeatures f;
    f.ao_id = std::string(aos.name(ao));
    f.n_requests = a.n;
    f.n_nodes = a.nodes;
    f.service_type = static_cast<ServiceType>(argmax(a.service));
    f.content_type = static_cast<ContentType>(argmax(a.content));
    f.cache_hit_rate = a.hits / a.n;
    f.request_popularity = a.pop_sum.value() / a.n;
    rows.push_back(std::move(f));
  }
  detail::sort_rows(rows);
  return rows;
}

// ---------------------------------------------------------------------------
// Feature matrices.

/// Dense row-major matrix used by the ML kernels.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  static Matrix from_rows(const std::vector<std::vector<double>> &rs) {
    Matrix m(rs.size(), rs.empty() ? 0 : rs.front().size());
    for (std::size_t i = 0; i < rs.size(); ++i) {
      if (rs[i].size() != m.cols)
        throw Error("ml-core", ErrorKind::DimensionMismatch, "ragged rows");
      std::copy(rs[i].begin(), rs[i].end(), m.data.begin() + static_cast<std::ptrdiff_t>(i * m.cols));
    }
    return m;
  }

  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  double &operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
};

enum class Purpose { DosIp, CpaIp, Node, Content };

inline const char *to_string(Purpose p) {
  switch (p) {
  case Purpose::DosIp: return "dos_ip";
  case Purpose::CpaIp: return "cpa_ip";
  case Purpose::Node: return "node";
  case Purpose::Content: return "content";
  }
  return "?";
}

/// Min-max-normalized feature columns for one perspective. `raw` keeps the
/// un-normalized values in the same layout.
struct FeatureMatrix {
  std::vector<std::string> entity_ids;
  std::vector<std::string> column_names;
  std::vector<std::vector<double>> columns;
  std::vector<std::vector<double>> raw;
  std::vector<ColumnStats> normalization;

  std::size_t n_rows() const { return entity_ids.size(); }
  std::size_t n_cols() const { return column_names.size(); }

  Matrix to_matrix() const {
    Matrix m(n_rows(), n_cols());
    for (std::size_t j = 0; j < n_cols(); ++j)
      for (std::size_t i = 0; i < n_rows(); ++i)
        m(i, j) = columns[j][i];
    return m;
  }
};

namespace detail {

template <class Row>
FeatureMatrix build_matrix(const std::vector<Row> &rows, const std::vector<std::string> &cols) {
  FeatureMatrix fm;
  fm.column_names = cols;
  fm.raw.assign(cols.size(), {});
  for (const auto &row : rows) {
    fm.entity_ids.push_back(FeatureTraits<Row>::id(row));
    for (std::size_t j = 0; j < cols.size(); ++j)
      fm.raw[j].push_back(feature_value(row, cols[j]));
  }
  for (std::size_t j = 0; j < cols.size(); ++j) {
    fm.normalization.push_back(ColumnStats::fit(fm.raw[j]));
    fm.columns.push_back(minmax_normalize(fm.raw[j], fm.normalization.back()));
  }
  return fm;
}

[[noreturn]] inline void wrong_perspective(Purpose p, const char *perspective) {
  throw Error("features", ErrorKind::WrongPerspective,
              std::string("purpose '") + to_string(p) + "' does not apply to " + perspective + " rows");
}

} // namespace detail

inline std::vector<std::string> subset_columns(Purpose p) {
  switch (p) {
  case Purpose::DosIp: return {"n_requests", "req_per_node", "avg_request_interval_s"};
  case Purpose::CpaIp: return {"n_requests", "req_per_content", "avg_request_popularity"};
  case Purpose::Node:
    return {"cache_hit_rate", "legit_ip_cache_hit_rate", "data_transfer_rate_mbps",
            "request_error_rate", "avg_request_popularity"};
  case Purpose::Content:
    return {"n_requests", "popularity", "cache_hit_rate", "req_per_ip", "req_per_node"};
  }
  return {};
}

inline FeatureMatrix select_feature_subset(const std::vector<IpFeatures> &rows, Purpose p) {
  if (p != Purpose::DosIp && p != Purpose::CpaIp)
    detail::wrong_perspective(p, "ip");
  return detail::build_matrix(rows, subset_columns(p));
}

inline FeatureMatrix select_feature_subset(const std::vector<NodeFeatures> &rows, Purpose p) {
  if (p != Purpose::Node)
    detail::wrong_perspective(p, "node");
  return detail::build_matrix(rows, subset_columns(p));
}

inline FeatureMatrix select_feature_subset(const std::vector<ContentFeatures> &rows, Purpose p) {
  if (p != Purpose::Content)
    detail::wrong_perspective(p, "content");
  return detail::build_matrix(rows, subset_columns(p));
}

// ---------------------------------------------------------------------------
// Output.

inline std::string format_ao_shares(const AoShares &shares) {
  std::string out;
  for (const auto &[k, v] : shares) {
    if (!out.empty())
      out += ';';
    out += k + ':' + format_real(v);
  }
  return out;
}

template <class Row> void write_feature_table(std::ostream &os, const std::vector<Row> &rows) {
  os << "entity";
  for (const auto &n : FeatureTraits<Row>::names())
    os << ',' << n;
  if constexpr (requires(const Row &r) { r.ao_request_rate; })
    os << ",ao_request_rate";
  os << '\n';
  for (const auto &r : rows) {
    os << FeatureTraits<Row>::id(r);
    for (double v : FeatureTraits<Row>::values(r))
      os << ',' << format_real(v);
    if constexpr (requires(const Row &x) { x.ao_request_rate; })
      os << ',' << format_ao_shares(r.ao_request_rate);
    os << '\n';
  }
}

inline nlohmann::json normalization_sidecar(const FeatureMatrix &fm) {
  nlohmann::json cols = nlohmann::json::array();
  for (std::size_t j = 0; j < fm.n_cols(); ++j)
    cols.push_back({{"column", fm.column_names[j]},
                    {"min", fm.normalization[j].min},
                    {"max", fm.normalization[j].max}});
  return cols;
}

} // namespace cdnguard
