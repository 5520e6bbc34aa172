#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cdnguard {

enum class ErrorKind {
  MalformedLine,
  BadTimestamp,
  BadInteger,
  EmptyInput,
  WrongPerspective,
  TooFewSamples,
  DimensionMismatch,
  SingularCovariance,
  SingleCluster,
  IllConditioned,
  SpanTooShort,
  EmptyPeriod,
  ConfigInvalid,
  EntityMismatch,
  MissingDetectOutput,
  Io,
};

inline const char *to_string(ErrorKind k) {
  switch (k) {
  case ErrorKind::MalformedLine: return "MalformedLine";
  case ErrorKind::BadTimestamp: return "BadTimestamp";
  case ErrorKind::BadInteger: return "BadInteger";
  case ErrorKind::EmptyInput: return "EmptyInput";
  case ErrorKind::WrongPerspective: return "WrongPerspective";
  case ErrorKind::TooFewSamples: return "TooFewSamples";
  case ErrorKind::DimensionMismatch: return "DimensionMismatch";
  case ErrorKind::SingularCovariance: return "SingularCovariance";
  case ErrorKind::SingleCluster: return "SingleCluster";
  case ErrorKind::IllConditioned: return "IllConditioned";
  case ErrorKind::SpanTooShort: return "SpanTooShort";
  case ErrorKind::EmptyPeriod: return "EmptyPeriod";
  case ErrorKind::ConfigInvalid: return "ConfigInvalid";
  case ErrorKind::EntityMismatch: return "EntityMismatch";
  case ErrorKind::MissingDetectOutput: return "MissingDetectOutput";
  case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Error raised by every module. `module()` names the subsystem
/// (log-model, features, ml-core, ...) so CLI diagnostics can be tagged.
class Error : public std::runtime_error {
public:
  Error(std::string module, ErrorKind kind, const std::string &detail)
      : std::runtime_error("[" + module + "] " + to_string(kind) + ": " + detail),
        module_(std::move(module)), kind_(kind), detail_(detail) {}

  const std::string &module() const noexcept { return module_; }
  ErrorKind kind() const noexcept { return kind_; }
  const std::string &detail() const noexcept { return detail_; }

private:
  std::string module_;
  ErrorKind kind_;
  std::string detail_;
};

// ---------------------------------------------------------------------------
// Deterministic random helpers. The std distributions are implementation
// defined, so all sampling goes through these.

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double uniform01(Rng &rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng &rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

/// Uniform integer in [0, n). n must be > 0.
inline std::uint64_t uniform_index(Rng &rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

inline double exponential(Rng &rng, double rate) {
  return -std::log1p(-uniform01(rng)) / rate;
}

inline double standard_normal(Rng &rng) {
  // Box-Muller; u1 in (0,1].
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// First `k` entries of a seeded Fisher-Yates shuffle of [0, n).
inline std::vector<std::size_t> sample_without_replacement(Rng &rng, std::size_t n,
                                                           std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

// ---------------------------------------------------------------------------
// Statistics helpers.

/// Linear-interpolation quantile (the usual "type 7" definition).
inline double quantile(std::vector<double> values, double q) {
  if (values.empty())
    return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

inline double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

inline double mean(std::span<const double> v) {
  if (v.empty())
    return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double stddev(std::span<const double> v) {
  if (v.size() < 2)
    return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v)
    s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

/// Index of the maximum; ties resolve to the lowest index.
template <class Range> std::size_t argmax(const Range &r) {
  std::size_t best = 0, i = 0;
  bool first = true;
  for (const auto &v : r) {
    if (first || v > r[best]) {
      best = i;
      first = false;
    }
    ++i;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Time helpers (UTC only).

inline std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct CivilTime {
  int year, month, day, hour, minute, second;
};

inline CivilTime civil_from_epoch(std::int64_t t) {
  std::int64_t days = t >= 0 ? t / 86400 : (t - 86399) / 86400;
  std::int64_t secs = t - days * 86400;
  days += 719468;
  const std::int64_t era = (days >= 0 ? days : days - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(days - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp < 10 ? mp + 3 : mp - 9;
  y += m <= 2;
  return {static_cast<int>(y), static_cast<int>(m), static_cast<int>(d),
          static_cast<int>(secs / 3600), static_cast<int>((secs % 3600) / 60),
          static_cast<int>(secs % 60)};
}

inline std::int64_t hour_floor(std::int64_t t) {
  return t >= 0 ? t - t % 3600 : t - ((t % 3600) + 3600) % 3600;
}

inline std::int64_t day_floor(std::int64_t t) {
  return t >= 0 ? t - t % 86400 : t - ((t % 86400) + 86400) % 86400;
}

/// "2016-12-12T13:00:00Z" (also accepts a "+hh:mm" / "-hh:mm" suffix).
inline std::int64_t parse_iso8601(std::string_view s) {
  auto fail = [&] {
    return Error("core", ErrorKind::BadTimestamp, "not ISO-8601: '" + std::string(s) + "'");
  };
  if (s.size() < 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') ||
      s[13] != ':' || s[16] != ':')
    throw fail();
  auto num = [&](std::size_t pos, std::size_t len) {
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (s[i] < '0' || s[i] > '9')
        throw fail();
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  const int y = num(0, 4), mo = num(5, 2), d = num(8, 2);
  const int h = num(11, 2), mi = num(14, 2), se = num(17, 2);
  if (mo < 1 || mo > 12 || d < 1 || d > 31 || h > 23 || mi > 59 || se > 60)
    throw fail();
  std::int64_t offset = 0;
  std::string_view rest = s.substr(19);
  if (rest == "Z" || rest.empty()) {
    offset = 0;
  } else if ((rest[0] == '+' || rest[0] == '-') && rest.size() == 6 && rest[3] == ':') {
    const int oh = num(20, 2), om = num(23, 2);
    offset = (oh * 3600 + om * 60) * (rest[0] == '-' ? -1 : 1);
  } else {
    throw fail();
  }
  return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 +
         h * 3600 + mi * 60 + se - offset;
}

inline std::string format_iso8601(std::int64_t t) {
  const auto c = civil_from_epoch(t);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", c.year, c.month, c.day,
                c.hour, c.minute, c.second);
  return buf;
}

// ---------------------------------------------------------------------------

/// FNV-1a 64-bit; used to tag outputs with the config that produced them.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Shortest round-trippable decimal text for a double.
inline std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

} // namespace cdnguard
