#pragma once

#include "cdnguard/core.hpp"

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cdnguard {

enum class Label { Normal, Dos, CpaLda, CpaFla, CpaUnspecified };
enum class Perspective { Node, Ip, Content };
enum class Stage { Model, Pattern, Validated };

inline const char *to_string(Label l) {
  switch (l) {
  case Label::Normal: return "normal";
  case Label::Dos: return "dos";
  case Label::CpaLda: return "cpa_lda";
  case Label::CpaFla: return "cpa_fla";
  case Label::CpaUnspecified: return "cpa_unspecified";
  }
  return "?";
}

inline const char *to_string(Perspective p) {
  switch (p) {
  case Perspective::Node: return "node";
  case Perspective::Ip: return "ip";
  case Perspective::Content: return "content";
  }
  return "?";
}

inline const char *to_string(Stage s) {
  switch (s) {
  case Stage::Model: return "model";
  case Stage::Pattern: return "pattern";
  case Stage::Validated: return "validated";
  }
  return "?";
}

inline Label parse_label(std::string_view s) {
  for (auto l : {Label::Normal, Label::Dos, Label::CpaLda, Label::CpaFla, Label::CpaUnspecified})
    if (s == to_string(l))
      return l;
  throw Error("eval", ErrorKind::ConfigInvalid, "unknown label '" + std::string(s) + "'");
}

inline Perspective parse_perspective(std::string_view s) {
  for (auto p : {Perspective::Node, Perspective::Ip, Perspective::Content})
    if (s == to_string(p))
      return p;
  throw Error("cli", ErrorKind::ConfigInvalid, "unknown perspective '" + std::string(s) + "'");
}

inline Stage parse_stage(std::string_view s) {
  for (auto st : {Stage::Model, Stage::Pattern, Stage::Validated})
    if (s == to_string(st))
      return st;
  throw Error("detection", ErrorKind::ConfigInvalid, "unknown stage '" + std::string(s) + "'");
}

inline bool is_attack(Label l) { return l != Label::Normal; }
inline bool is_cpa(Label l) {
  return l == Label::CpaLda || l == Label::CpaFla || l == Label::CpaUnspecified;
}

/// Attack family used when variants do not matter.
enum class Family { None, Dos, Cpa };
inline Family family_of(Label l) {
  if (l == Label::Dos)
    return Family::Dos;
  return is_cpa(l) ? Family::Cpa : Family::None;
}

// ---------------------------------------------------------------------------
// Known legitimate events.

enum class EventKind { Crowd, Maintenance, Test };

inline const char *to_string(EventKind k) {
  switch (k) {
  case EventKind::Crowd: return "crowd";
  case EventKind::Maintenance: return "maintenance";
  case EventKind::Test: return "test";
  }
  return "?";
}

struct CalendarEvent {
  std::int64_t start = 0; // inclusive
  std::int64_t end = 0;   // exclusive
  EventKind kind = EventKind::Crowd;
  std::string note;
};

struct EventCalendar {
  std::vector<CalendarEvent> events;

  bool covers(std::int64_t t) const {
    for (const auto &e : events)
      if (t >= e.start && t < e.end)
        return true;
    return false;
  }
  bool overlaps(std::int64_t start, std::int64_t end) const {
    for (const auto &e : events)
      if (start < e.end && e.start < end)
        return true;
    return false;
  }
};

inline nlohmann::json to_json(const EventCalendar &c) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto &e : c.events)
    events.push_back({{"start", format_iso8601(e.start)},
                      {"end", format_iso8601(e.end)},
                      {"kind", to_string(e.kind)},
                      {"note", e.note}});
  return {{"events", events}};
}

inline EventCalendar calendar_from_json(const nlohmann::json &j) {
  EventCalendar c;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "events")
      throw Error("validation", ErrorKind::ConfigInvalid, "unknown calendar key '" + it.key() + "'");
  for (const auto &ej : j.value("events", nlohmann::json::array())) {
    CalendarEvent e;
    for (auto it = ej.begin(); it != ej.end(); ++it) {
      const auto &k = it.key();
      if (k == "start")
        e.start = parse_iso8601(it->get<std::string>());
      else if (k == "end")
        e.end = parse_iso8601(it->get<std::string>());
      else if (k == "note")
        e.note = it->get<std::string>();
      else if (k == "kind") {
        const auto s = it->get<std::string>();
        if (s == "crowd")
          e.kind = EventKind::Crowd;
        else if (s == "maintenance")
          e.kind = EventKind::Maintenance;
        else if (s == "test")
          e.kind = EventKind::Test;
        else
          throw Error("validation", ErrorKind::ConfigInvalid, "unknown event kind '" + s + "'");
      } else {
        throw Error("validation", ErrorKind::ConfigInvalid, "unknown calendar event key '" + k + "'");
      }
    }
    if (!(e.start < e.end))
      throw Error("validation", ErrorKind::ConfigInvalid, "calendar event must have start < end");
    c.events.push_back(std::move(e));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Ground truth of a synthetic log.

struct AttackWindow {
  std::string kind;
  std::int64_t start = 0;
  std::int64_t end = 0;
  std::vector<std::string> target_nodes;

  bool operator==(const AttackWindow &) const = default;
};

struct GroundTruth {
  std::map<std::string, Label> ip_labels;
  std::map<std::string, Label> node_labels;
  std::map<std::string, Label> content_labels;
  std::vector<AttackWindow> attack_windows;

  const std::map<std::string, Label> &labels(Perspective p) const {
    switch (p) {
    case Perspective::Node: return node_labels;
    case Perspective::Ip: return ip_labels;
    case Perspective::Content: return content_labels;
    }
    return ip_labels;
  }
};

inline nlohmann::json to_json(const GroundTruth &t) {
  auto labels = [](const std::map<std::string, Label> &m) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto &[k, v] : m)
      j[k] = to_string(v);
    return j;
  };
  nlohmann::json windows = nlohmann::json::array();
  for (const auto &w : t.attack_windows)
    windows.push_back({{"kind", w.kind},
                       {"start", format_iso8601(w.start)},
                       {"end", format_iso8601(w.end)},
                       {"target_nodes", w.target_nodes}});
  return {{"ip_labels", labels(t.ip_labels)},
          {"node_labels", labels(t.node_labels)},
          {"content_labels", labels(t.content_labels)},
          {"attack_windows", windows}};
}

inline GroundTruth ground_truth_from_json(const nlohmann::json &j) {
  GroundTruth t;
  auto labels = [](const nlohmann::json &src, std::map<std::string, Label> &dst) {
    for (auto it = src.begin(); it != src.end(); ++it)
      dst[it.key()] = parse_label(it->get<std::string>());
  };
  labels(j.at("ip_labels"), t.ip_labels);
  labels(j.at("node_labels"), t.node_labels);
  labels(j.at("content_labels"), t.content_labels);
  for (const auto &w : j.at("attack_windows"))
    t.attack_windows.push_back({w.at("kind").get<std::string>(), parse_iso8601(w.at("start").get<std::string>()),
                                parse_iso8601(w.at("end").get<std::string>()),
                                w.at("target_nodes").get<std::vector<std::string>>()});
  return t;
}

} // namespace cdnguard
