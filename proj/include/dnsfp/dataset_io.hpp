#pragma once

// JSON Lines trace files: one Trace object per line.
//   {"trace_id":"937","app":"A1","resolver":"google","protocol":"dot",
//    "collected_at":"2020-04-28T06:23:29Z",
//    "events":[{"t_ms":0,"dir":"c2r","size":154},{"t_ms":274,"dir":"r2c","size":204}]}
// Unknown fields are ignored on read and never written.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <unordered_set>

#include <json.hpp>

#include "dnsfp/error.hpp"
#include "dnsfp/trace.hpp"

namespace dnsfp {

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(line, std::string("missing field '") + key + "'");
  return *it;
}

inline std::string require_string(const nlohmann::json& obj, const char* key, std::size_t line) {
  const auto& v = require(obj, key, line);
  if (!v.is_string()) throw ParseError(line, std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

inline std::int64_t require_integer(const nlohmann::json& obj, const char* key, std::size_t line) {
  const auto& v = require(obj, key, line);
  if (v.is_number_integer()) return v.get<std::int64_t>();
  // Sub-millisecond timestamps are floored at ingestion.
  if (v.is_number_float() && std::string_view(key) == "t_ms")
    return static_cast<std::int64_t>(std::floor(v.get<double>()));
  throw ParseError(line, std::string("field '") + key + "' must be an integer");
}

} // namespace detail

inline nlohmann::json trace_to_json(const Trace& t) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : t.events)
    events.push_back({{"t_ms", e.t_ms}, {"dir", to_string(e.direction)}, {"size", e.size_bytes}});
  nlohmann::json j;
  j["trace_id"] = t.trace_id;
  j["app"] = t.app_label;
  j["resolver"] = t.resolver_id;
  j["protocol"] = to_string(t.protocol);
  j["collected_at"] = t.collected_at;
  j["events"] = std::move(events);
  return j;
}

inline Trace trace_from_json(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) throw ParseError(line, "expected a JSON object");
  Trace t;
  t.trace_id = detail::require_string(j, "trace_id", line);
  t.app_label = detail::require_string(j, "app", line);
  t.resolver_id = detail::require_string(j, "resolver", line);
  const auto proto = detail::require_string(j, "protocol", line);
  auto p = parse_protocol(proto);
  if (!p) throw ParseError(line, "invalid protocol '" + proto + "'");
  t.protocol = *p;
  t.collected_at = detail::require_string(j, "collected_at", line);
  const auto& events = detail::require(j, "events", line);
  if (!events.is_array()) throw ParseError(line, "field 'events' must be an array");
  t.events.reserve(events.size());
  for (const auto& ev : events) {
    if (!ev.is_object()) throw ParseError(line, "event must be an object");
    DnsEvent e;
    e.t_ms = detail::require_integer(ev, "t_ms", line);
    const auto dir = detail::require_string(ev, "dir", line);
    auto d = parse_direction(dir);
    if (!d) throw ParseError(line, "invalid dir '" + dir + "'");
    e.direction = *d;
    e.size_bytes = detail::require_integer(ev, "size", line);
    t.events.push_back(e);
  }
  auto report = validate_trace(t);
  if (!report.ok()) throw ParseError(line, "invalid trace '" + t.trace_id + "': " + report.violations.front());
  return t;
}

inline Dataset read_dataset(std::istream& in) {
  std::vector<Trace> traces;
  std::unordered_set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line, e.what());
    }
    Trace t = trace_from_json(j, line);
    if (!ids.insert(t.trace_id).second) throw DuplicateTraceId(t.trace_id);
    traces.push_back(std::move(t));
  }
  return Dataset(std::move(traces));
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace file " + path.string());
  return read_dataset(in);
}

inline void write_dataset(const Dataset& ds, std::ostream& out) {
  for (const auto& t : ds.traces()) out << trace_to_json(t).dump() << '\n';
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write trace file " + path.string());
  write_dataset(ds, out);
  if (!out) throw Error("write failed for " + path.string());
}

} // namespace dnsfp
