#pragma once

#include "cdnguard/core.hpp"

#include <array>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace cdnguard {

enum class HttpMethod { Get, Post, Head, Put, Delete, Other };
enum class ServiceType { Static, LiveStreaming, ProgressiveDownload, Other };
enum class ContentType { Image, Video, Audio, Text, Other };

inline std::string_view to_string(HttpMethod m) {
  constexpr std::array<std::string_view, 6> names{"GET", "POST", "HEAD", "PUT", "DELETE", "OTHER"};
  return names[static_cast<std::size_t>(m)];
}

inline std::string_view to_string(ServiceType s) {
  constexpr std::array<std::string_view, 4> names{"static", "live_streaming",
                                                  "progressive_download", "other"};
  return names[static_cast<std::size_t>(s)];
}

inline std::string_view to_string(ContentType c) {
  constexpr std::array<std::string_view, 5> names{"image", "video", "audio", "text", "other"};
  return names[static_cast<std::size_t>(c)];
}

inline HttpMethod parse_http_method(std::string_view s) {
  if (s == "GET") return HttpMethod::Get;
  if (s == "POST") return HttpMethod::Post;
  if (s == "HEAD") return HttpMethod::Head;
  if (s == "PUT") return HttpMethod::Put;
  if (s == "DELETE") return HttpMethod::Delete;
  return HttpMethod::Other;
}

inline ServiceType parse_service_type(std::string_view s) {
  if (s == "static") return ServiceType::Static;
  if (s == "live_streaming" || s == "live") return ServiceType::LiveStreaming;
  if (s == "progressive_download" || s == "pd") return ServiceType::ProgressiveDownload;
  return ServiceType::Other;
}

/// Accepts bare kinds ("video") and MIME types ("video/mp4").
inline ContentType parse_content_type(std::string_view s) {
  const auto major = s.substr(0, s.find('/'));
  if (major == "image") return ContentType::Image;
  if (major == "video") return ContentType::Video;
  if (major == "audio") return ContentType::Audio;
  if (major == "text") return ContentType::Text;
  return ContentType::Other;
}

/// One sanitized access-log request.
struct CleanRecord {
  std::string ip;
  std::int64_t timestamp = 0; // epoch seconds, UTC
  HttpMethod http_method = HttpMethod::Get;
  int status_code = 200;
  std::int64_t bytes = 0;
  std::int64_t delivery_time_ms = 0;
  ServiceType service_type = ServiceType::Static;
  bool cache_hit = false;
  std::string node;
  std::string account_offering;
  std::string content_url;
  ContentType content_type = ContentType::Other;

  bool operator==(const CleanRecord &) const = default;
};

/// Positions (0-based token indices) of the retained fields in a log line.
/// The request token ("METHOD URL PROTO") yields both method and content URL.
struct LogSchema {
  int ip = 0;
  int timestamp = 3;
  int request = 4;
  int status_code = 5;
  int bytes = 6;
  int delivery_time_ms = 7;
  int service_type = 8;
  int cache_hit = 9;
  int node = 10;
  int account_offering = 11;
  int content_type = 12;

  int max_position() const {
    return std::max({ip, timestamp, request, status_code, bytes, delivery_time_ms, service_type,
                     cache_hit, node, account_offering, content_type});
  }

  static LogSchema from_json(const nlohmann::json &j) {
    LogSchema s;
    for (auto it = j.begin(); it != j.end(); ++it) {
      int *slot = s.slot(it.key());
      if (slot == nullptr)
        throw Error("log-model", ErrorKind::ConfigInvalid, "unknown schema field '" + it.key() + "'");
      if (!it.value().is_number_integer() || it.value().get<int>() < 0)
        throw Error("log-model", ErrorKind::ConfigInvalid,
                    "schema position for '" + it.key() + "' must be a non-negative integer");
      *slot = it.value().get<int>();
    }
    return s;
  }

  nlohmann::json to_json() const {
    return {{"ip", ip},
            {"timestamp", timestamp},
            {"request", request},
            {"status_code", status_code},
            {"bytes", bytes},
            {"delivery_time_ms", delivery_time_ms},
            {"service_type", service_type},
            {"cache_hit", cache_hit},
            {"node", node},
            {"account_offering", account_offering},
            {"content_type", content_type}};
  }

private:
  int *slot(std::string_view name) {
    if (name == "ip") return &ip;
    if (name == "timestamp") return &timestamp;
    if (name == "request") return &request;
    if (name == "status_code") return &status_code;
    if (name == "bytes") return &bytes;
    if (name == "delivery_time_ms") return &delivery_time_ms;
    if (name == "service_type") return &service_type;
    if (name == "cache_hit") return &cache_hit;
    if (name == "node") return &node;
    if (name == "account_offering") return &account_offering;
    if (name == "content_type") return &content_type;
    return nullptr;
  }
};

struct ParseError {
  ErrorKind kind;
  std::string field;
  std::string message;
};

struct ParsedLine {
  CleanRecord record;
  int empty_fields = 0; // retained fields that were "-" or blank
};

using ParseResult = std::variant<ParsedLine, ParseError>;

namespace detail {

/// Splits on spaces; "[...]" and "\"...\"" groups are single tokens with the
/// delimiters stripped.
inline std::vector<std::string_view> tokenize_log_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  const std::size_t n = line.size();
  while (i < n) {
    while (i < n && (line[i] == ' ' || line[i] == '\t'))
      ++i;
    if (i >= n)
      break;
    if (line[i] == '[') {
      const auto close = line.find(']', i + 1);
      const auto end = close == std::string_view::npos ? n : close;
      out.push_back(line.substr(i + 1, end - i - 1));
      i = end + 1;
    } else if (line[i] == '"') {
      std::size_t j = i + 1;
      while (j < n && !(line[j] == '"' && line[j - 1] != '\\'))
        ++j;
      out.push_back(line.substr(i + 1, j - i - 1));
      i = j + 1;
    } else {
      std::size_t j = i;
      while (j < n && line[j] != ' ' && line[j] != '\t')
        ++j;
      out.push_back(line.substr(i, j - i));
      i = j;
    }
  }
  return out;
}

inline bool is_empty_field(std::string_view s) { return s.empty() || s == "-"; }

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  if (s.empty())
    return std::nullopt;
  std::int64_t v = 0;
  std::size_t i = 0;
  bool neg = false;
  if (s[0] == '-' || s[0] == '+') {
    neg = s[0] == '-';
    i = 1;
    if (s.size() == 1)
      return std::nullopt;
  }
  for (; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9')
      return std::nullopt;
    v = v * 10 + (s[i] - '0');
  }
  return neg ? -v : v;
}

inline constexpr std::array<std::string_view, 12> kMonths{"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                                         "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};

} // namespace detail

/// Parses "dd/Mon/yyyy:hh:mm:ss +zzzz" into UTC epoch seconds.
inline std::optional<std::int64_t> parse_clf_timestamp(std::string_view s) {
  // 01234567890123456789012345
  // 12/Dec/2016:04:54:20 -4000
  if (s.size() < 26 || s[2] != '/' || s[6] != '/' || s[11] != ':' || s[14] != ':' ||
      s[17] != ':' || s[20] != ' ')
    return std::nullopt;
  auto digits = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (s[i] < '0' || s[i] > '9')
        return std::nullopt;
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  const auto day = digits(0, 2), year = digits(7, 4), hh = digits(12, 2), mm = digits(15, 2),
             ss = digits(18, 2);
  if (!day || !year || !hh || !mm || !ss)
    return std::nullopt;
  int month = 0;
  for (std::size_t m = 0; m < 12; ++m)
    if (s.substr(3, 3) == detail::kMonths[m])
      month = static_cast<int>(m) + 1;
  if (month == 0 || *day < 1 || *day > 31 || *hh > 23 || *mm > 59 || *ss > 60)
    return std::nullopt;
  const char sign = s[21];
  const auto oh = digits(22, 2), om = digits(24, 2);
  if ((sign != '+' && sign != '-') || !oh || !om || *om > 59 || s.size() != 26)
    return std::nullopt;
  const std::int64_t offset = (sign == '-' ? -1 : 1) * (*oh * 3600 + *om * 60);
  const std::int64_t local = days_from_civil(*year, static_cast<unsigned>(month),
                                             static_cast<unsigned>(*day)) * 86400 +
                             *hh * 3600 + *mm * 60 + *ss;
  return local - offset;
}

inline std::string format_clf_timestamp(std::int64_t t) {
  const auto c = civil_from_epoch(t);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%02d/%s/%04d:%02d:%02d:%02d +0000", c.day,
                std::string(detail::kMonths[static_cast<std::size_t>(c.month - 1)]).c_str(),
                c.year, c.hour, c.minute, c.second);
  return buf;
}

inline ParseResult parse_log_line(std::string_view line, const LogSchema &schema = {}) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n' || line.back() == ' '))
    line.remove_suffix(1);
  while (!line.empty() && line.front() == ' ')
    line.remove_prefix(1);
  if (line.empty())
    return ParseError{ErrorKind::MalformedLine, "line", "empty line"};

  const auto tokens = detail::tokenize_log_line(line);
  if (static_cast<int>(tokens.size()) <= schema.max_position())
    return ParseError{ErrorKind::MalformedLine, "line",
                      "expected at least " + std::to_string(schema.max_position() + 1) +
                          " fields, got " + std::to_string(tokens.size())};

  ParsedLine out;
  auto &r = out.record;
  auto field = [&](int pos) -> std::string_view {
    const auto v = tokens[static_cast<std::size_t>(pos)];
    if (detail::is_empty_field(v)) {
      ++out.empty_fields;
      return {};
    }
    return v;
  };

  r.ip = std::string(field(schema.ip));

  const auto ts_text = tokens[static_cast<std::size_t>(schema.timestamp)];
  const auto ts = parse_clf_timestamp(ts_text);
  if (!ts || *ts <= 0)
    return ParseError{ErrorKind::BadTimestamp, "timestamp",
                      "cannot parse timestamp '" + std::string(ts_text) + "'"};
  r.timestamp = *ts;

  const auto request = tokens[static_cast<std::size_t>(schema.request)];
  if (detail::is_empty_field(request)) {
    out.empty_fields += 2; // method and URL
    r.http_method = HttpMethod::Other;
  } else {
    const auto sp1 = request.find(' ');
    const auto method = request.substr(0, sp1);
    r.http_method = parse_http_method(method);
    if (sp1 == std::string_view::npos) {
      ++out.empty_fields;
    } else {
      const auto rest = request.substr(sp1 + 1);
      r.content_url = std::string(rest.substr(0, rest.find(' ')));
      if (r.content_url.empty())
        ++out.empty_fields;
    }
  }

  const auto status_text = tokens[static_cast<std::size_t>(schema.status_code)];
  const auto status = detail::parse_int(status_text);
  if (!status || *status < 100 || *status > 599)
    return ParseError{ErrorKind::BadInteger, "status_code",
                      "status code '" + std::string(status_text) + "' is not an integer in [100, 599]"};
  r.status_code = static_cast<int>(*status);

  auto non_negative = [&](int pos, const char *name, std::int64_t &dst) -> std::optional<ParseError> {
    const auto text = field(pos);
    if (text.empty()) {
      dst = 0;
      return std::nullopt;
    }
    const auto v = detail::parse_int(text);
    if (!v || *v < 0)
      return ParseError{ErrorKind::BadInteger, name,
                        std::string(name) + " '" + std::string(text) + "' is not a non-negative integer"};
    dst = *v;
    return std::nullopt;
  };
  if (auto e = non_negative(schema.bytes, "bytes", r.bytes))
    return *e;
  if (auto e = non_negative(schema.delivery_time_ms, "delivery_time_ms", r.delivery_time_ms))
    return *e;

  r.service_type = parse_service_type(field(schema.service_type));

  const auto cache_text = field(schema.cache_hit);
  if (!cache_text.empty()) {
    std::string upper(cache_text);
    for (auto &c : upper)
      c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (upper.find("MISS") != std::string::npos || upper == "0" || upper == "FALSE")
      r.cache_hit = false;
    else if (upper.find("HIT") != std::string::npos || upper == "1" || upper == "TRUE")
      r.cache_hit = true;
    else
      return ParseError{ErrorKind::MalformedLine, "cache_hit",
                        "cache indicator '" + std::string(cache_text) + "' is neither hit nor miss"};
  }

  r.node = std::string(field(schema.node));
  r.account_offering = std::string(field(schema.account_offering));
  r.content_type = parse_content_type(field(schema.content_type));
  return out;
}

/// Renders a record in the default combined layout (the layout LogSchema{}
/// describes). Empty strings are written as "-".
inline std::string format_log_line(const CleanRecord &r) {
  auto dash = [](const std::string &s) -> const std::string & {
    static const std::string d = "-";
    return s.empty() ? d : s;
  };
  std::string out;
  out.reserve(160);
  out += dash(r.ip);
  out += " - - [";
  out += format_clf_timestamp(r.timestamp);
  out += "] \"";
  out += to_string(r.http_method);
  out += ' ';
  out += dash(r.content_url);
  out += " HTTP/1.1\" ";
  out += std::to_string(r.status_code);
  out += ' ';
  out += std::to_string(r.bytes);
  out += ' ';
  out += std::to_string(r.delivery_time_ms);
  out += ' ';
  out += to_string(r.service_type);
  out += r.cache_hit ? " HIT " : " MISS ";
  out += dash(r.node);
  out += ' ';
  out += dash(r.account_offering);
  out += ' ';
  out += to_string(r.content_type);
  return out;
}

struct CleanResult {
  std::vector<CleanRecord> records;
  std::size_t dropped = 0;
};

/// Keeps successfully parsed records with at most `max_empty_fields` empty
/// retained fields, in input order.
inline CleanResult clean_records(std::vector<ParseResult> results, int max_empty_fields = 3) {
  CleanResult out;
  out.records.reserve(results.size());
  for (auto &res : results) {
    if (auto *p = std::get_if<ParsedLine>(&res); p != nullptr && p->empty_fields <= max_empty_fields)
      out.records.push_back(std::move(p->record));
    else
      ++out.dropped;
  }
  return out;
}

/// Reads a log file; lines starting with '#' are comments and skipped.
inline CleanResult read_log_file(const std::string &path, const LogSchema &schema = {},
                                 int max_empty_fields = 3) {
  std::ifstream in(path);
  if (!in)
    throw Error("log-model", ErrorKind::Io, "cannot open log file '" + path + "'");
  CleanResult out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#')
      continue;
    auto res = parse_log_line(line, schema);
    if (auto *p = std::get_if<ParsedLine>(&res); p != nullptr && p->empty_fields <= max_empty_fields)
      out.records.push_back(std::move(p->record));
    else
      ++out.dropped;
  }
  return out;
}

/// Columnar record table: a header naming the 12 fields, then one
/// comma-separated row per record.
inline void write_records_table(std::ostream &os, const std::vector<CleanRecord> &records) {
  os << "ip,timestamp,http_method,status_code,bytes,delivery_time_ms,service_type,cache_hit,"
        "node,account_offering,content_url,content_type\n";
  for (const auto &r : records) {
    os << r.ip << ',' << r.timestamp << ',' << to_string(r.http_method) << ',' << r.status_code
       << ',' << r.bytes << ',' << r.delivery_time_ms << ',' << to_string(r.service_type) << ','
       << (r.cache_hit ? 1 : 0) << ',' << r.node << ',' << r.account_offering << ','
       << r.content_url << ',' << to_string(r.content_type) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Min-max normalization.

struct ColumnStats {
  double min = 0.0;
  double max = 0.0;

  static ColumnStats fit(std::span<const double> column) {
    if (column.empty())
      return {};
    const auto [lo, hi] = std::minmax_element(column.begin(), column.end());
    return {*lo, *hi};
  }
};

inline double minmax_normalize(double x, const ColumnStats &stats) {
  if (stats.max == stats.min)
    return 0.0;
  const double v = (x - stats.min) / (stats.max - stats.min);
  return std::clamp(v, 0.0, 1.0);
}

/// (x - min) / (max - min), clamped to [0, 1]; constant columns map to 0.
inline std::vector<double> minmax_normalize(std::span<const double> column, const ColumnStats &stats) {
  std::vector<double> out(column.size());
  for (std::size_t i = 0; i < column.size(); ++i)
    out[i] = minmax_normalize(column[i], stats);
  return out;
}

inline double minmax_denormalize(double v, const ColumnStats &stats) {
  return stats.min + v * (stats.max - stats.min);
}

} // namespace cdnguard
