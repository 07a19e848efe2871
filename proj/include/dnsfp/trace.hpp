#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "dnsfp/error.hpp"

namespace dnsfp {

enum class Direction : std::uint8_t { ClientToResolver, ResolverToClient };
enum class Protocol : std::uint8_t { DoT, DoH };

inline std::string_view to_string(Direction d) noexcept {
  return d == Direction::ClientToResolver ? "c2r" : "r2c";
}
inline std::string_view to_string(Protocol p) noexcept { return p == Protocol::DoT ? "dot" : "doh"; }

inline std::optional<Direction> parse_direction(std::string_view s) noexcept {
  if (s == "c2r") return Direction::ClientToResolver;
  if (s == "r2c") return Direction::ResolverToClient;
  return std::nullopt;
}
inline std::optional<Protocol> parse_protocol(std::string_view s) noexcept {
  if (s == "dot") return Protocol::DoT;
  if (s == "doh") return Protocol::DoH;
  return std::nullopt;
}

/// One TLS application-data record observed on the wire.
struct DnsEvent {
  std::int64_t t_ms = 0;  // relative to the first event of the trace
  Direction direction = Direction::ClientToResolver;
  std::int64_t size_bytes = 1;

  /// Requests carry a negative sign, responses a positive one.
  std::int64_t signed_size() const noexcept {
    return direction == Direction::ClientToResolver ? -size_bytes : size_bytes;
  }

  friend bool operator==(const DnsEvent&, const DnsEvent&) = default;
};

struct Trace {
  std::string trace_id;
  std::string app_label;
  std::string resolver_id;
  Protocol protocol = Protocol::DoT;
  std::string collected_at;
  std::vector<DnsEvent> events;

  friend bool operator==(const Trace&, const Trace&) = default;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const noexcept { return violations.empty(); }
};

inline ValidationReport validate_trace(const Trace& t) {
  ValidationReport r;
  if (t.events.empty()) {
    r.violations.emplace_back("empty trace");
    return r;
  }
  if (t.events.front().t_ms != 0) r.violations.emplace_back("first event t_ms is not 0");
  bool monotone = true;
  bool sizes_ok = true;
  bool times_ok = true;
  for (std::size_t i = 0; i < t.events.size(); ++i) {
    const auto& e = t.events[i];
    if (e.size_bytes < 1) sizes_ok = false;
    if (e.t_ms < 0) times_ok = false;
    if (i > 0 && e.t_ms < t.events[i - 1].t_ms) monotone = false;
  }
  if (!times_ok) r.violations.emplace_back("negative timestamp");
  if (!monotone) r.violations.emplace_back("non-monotone timestamps");
  if (!sizes_ok) r.violations.emplace_back("record size below 1 byte");
  return r;
}

inline std::vector<std::int64_t> signed_sizes(const Trace& t) {
  std::vector<std::int64_t> out;
  out.reserve(t.events.size());
  for (const auto& e : t.events) out.push_back(e.signed_size());
  return out;
}

/// Immutable collection of traces with a label index.
class Dataset {
public:
  Dataset() = default;

  /// Throws DuplicateTraceId if two traces share an id.
  explicit Dataset(std::vector<Trace> traces) : traces_(std::move(traces)) {
    std::unordered_set<std::string> seen;
    seen.reserve(traces_.size());
    for (std::size_t i = 0; i < traces_.size(); ++i) {
      if (!seen.insert(traces_[i].trace_id).second) throw DuplicateTraceId(traces_[i].trace_id);
      label_index_[traces_[i].app_label].push_back(i);
    }
  }

  const std::vector<Trace>& traces() const noexcept { return traces_; }
  const Trace& operator[](std::size_t i) const { return traces_[i]; }
  std::size_t size() const noexcept { return traces_.size(); }
  bool empty() const noexcept { return traces_.empty(); }

  const std::map<std::string, std::vector<std::size_t>>& label_index() const noexcept {
    return label_index_;
  }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    out.reserve(label_index_.size());
    for (const auto& [label, _] : label_index_) out.push_back(label);
    return out;
  }

  Dataset subset(std::span<const std::size_t> indices) const {
    std::vector<Trace> picked;
    picked.reserve(indices.size());
    for (auto i : indices) picked.push_back(traces_.at(i));
    return Dataset(std::move(picked));
  }

  friend bool operator==(const Dataset& a, const Dataset& b) { return a.traces_ == b.traces_; }

private:
  std::vector<Trace> traces_;
  std::map<std::string, std::vector<std::size_t>> label_index_;
};

} // namespace dnsfp
