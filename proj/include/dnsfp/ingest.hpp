#pragma once

// Capture file -> Trace. Keeps TLS application-data records on TCP flows to
// or from the resolver, after in-order per-direction stream reassembly.

#include <algorithm>
#include <array>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "dnsfp/error.hpp"
#include "dnsfp/pcap.hpp"
#include "dnsfp/trace.hpp"

namespace dnsfp {

struct ResolverSpec {
  std::string resolver_id;
  std::set<std::string> ips;
  int port = 853;
  Protocol protocol = Protocol::DoT;

  void validate() const {
    if (ips.empty()) throw Error("resolver '" + resolver_id + "' has no IP addresses");
    if (port < 1 || port > 65535) throw Error("resolver port must be in [1, 65535]");
    for (const auto& ip : ips)
      if (!pcap::canonical_ip(ip)) throw Error("invalid IP address '" + ip + "'");
  }
};

inline constexpr std::uint32_t kMaxTlsRecordLength = 64 * 1024;

namespace detail {

inline std::string iso8601_utc(std::int64_t ts_ns) {
  const std::time_t secs = static_cast<std::time_t>(ts_ns / 1'000'000'000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct RecordHit {
  std::int64_t ts_ns;
  std::size_t packet;
  std::size_t order;
  Direction dir;
  std::int64_t size;
};

/// One direction of one TCP connection.
class TlsStream {
public:
  TlsStream(Direction dir, std::string flow) : dir_(dir), flow_(std::move(flow)) {}

  void on_syn(std::uint32_t seq) {
    if (next_seq_ && *next_seq_ == seq + 1) return;  // retransmitted SYN
    next_seq_ = seq + 1;
    header_len_ = 0;
    remaining_ = 0;
  }

  void on_segment(std::uint32_t seq, std::span<const std::uint8_t> payload, std::size_t wire_len, std::int64_t ts_ns,
                  std::size_t packet, std::vector<RecordHit>& out) {
    if (wire_len == 0) return;
    if (!next_seq_) next_seq_ = seq;  // capture started mid-connection
    const auto diff = static_cast<std::int32_t>(seq - *next_seq_);
    if (diff < 0) {
      if (static_cast<std::int64_t>(diff) + static_cast<std::int64_t>(wire_len) <= 0) return;  // duplicate
      fail("partially overlapping retransmission");
    }
    if (diff > 0) fail("out-of-order segment or missing data");
    if (payload.size() < wire_len) fail("segment truncated by the capture snap length");
    *next_seq_ += static_cast<std::uint32_t>(wire_len);
    consume(payload, ts_ns, packet, out);
  }

private:
  [[noreturn]] void fail(const std::string& why) const { throw MalformedTls(why + " on " + flow_); }

  void consume(std::span<const std::uint8_t> data, std::int64_t ts_ns, std::size_t packet,
               std::vector<RecordHit>& out) {
    std::size_t i = 0;
    while (i < data.size()) {
      if (remaining_ > 0) {
        const std::size_t n = std::min<std::size_t>(remaining_, data.size() - i);
        remaining_ -= n;
        i += n;
        continue;
      }
      if (header_len_ == 0) header_ts_ = ts_ns, header_packet_ = packet;
      header_[header_len_++] = data[i++];
      if (header_len_ < 5) continue;
      header_len_ = 0;
      const std::uint8_t type = header_[0];
      const std::uint32_t length = std::uint32_t{header_[3]} << 8 | header_[4];
      if (type < 20 || type > 24 || header_[1] != 3) fail("TLS stream desynchronised");
      if (length > kMaxTlsRecordLength) fail("TLS record length exceeds sanity bound");
      if (type == 23) out.push_back({header_ts_, header_packet_, out.size(), dir_, static_cast<std::int64_t>(length)});
      remaining_ = length;
    }
  }

  Direction dir_;
  std::string flow_;
  std::optional<std::uint32_t> next_seq_;
  std::array<std::uint8_t, 5> header_{};
  std::size_t header_len_ = 0;
  std::size_t remaining_ = 0;
  std::int64_t header_ts_ = 0;
  std::size_t header_packet_ = 0;
};

} // namespace detail

/// Trace from already-read packets; see filter_capture.
inline Trace filter_packets(const std::vector<pcap::Packet>& packets, const ResolverSpec& spec,
                            const std::string& label, const std::string& trace_id) {
  spec.validate();
  std::set<std::string> ips;
  for (const auto& ip : spec.ips) ips.insert(*pcap::canonical_ip(ip));
  const auto port = static_cast<std::uint16_t>(spec.port);

  // (client ip, client port, resolver ip, direction)
  using Key = std::tuple<std::string, std::uint16_t, std::string, Direction>;
  std::map<Key, detail::TlsStream> streams;
  std::vector<detail::RecordHit> hits;

  for (std::size_t i = 0; i < packets.size(); ++i) {
    const auto seg = pcap::decode_tcp_segment(packets[i]);
    if (!seg) continue;
    Direction dir;
    Key key;
    if (seg->dst_port == port && ips.count(seg->dst_ip)) {
      dir = Direction::ClientToResolver;
      key = {seg->src_ip, seg->src_port, seg->dst_ip, dir};
    } else if (seg->src_port == port && ips.count(seg->src_ip)) {
      dir = Direction::ResolverToClient;
      key = {seg->dst_ip, seg->dst_port, seg->src_ip, dir};
    } else {
      continue;
    }
    auto it = streams.find(key);
    if (it == streams.end()) {
      const std::string flow = std::get<0>(key) + ":" + std::to_string(std::get<1>(key)) + " " +
                               std::string(to_string(dir)) + " " + std::get<2>(key);
      it = streams.emplace(key, detail::TlsStream(dir, flow)).first;
    }
    if (seg->rst) continue;
    if (seg->syn) {
      it->second.on_syn(seg->seq);
      continue;
    }
    it->second.on_segment(seg->seq, seg->payload, seg->payload_length, packets[i].ts_ns, i, hits);
  }
  if (hits.empty()) throw NoMatchingTraffic("no TLS application-data records for resolver '" + spec.resolver_id + "'");

  std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
    return std::tie(a.ts_ns, a.packet) < std::tie(b.ts_ns, b.packet);
  });
  auto floor_ms = [](std::int64_t ns) { return ns >= 0 ? ns / 1'000'000 : -((-ns + 999'999) / 1'000'000); };
  Trace t;
  t.trace_id = trace_id;
  t.app_label = label;
  t.resolver_id = spec.resolver_id;
  t.protocol = spec.protocol;
  t.collected_at = detail::iso8601_utc(hits.front().ts_ns);
  const std::int64_t t0 = floor_ms(hits.front().ts_ns);
  for (const auto& h : hits) t.events.push_back({floor_ms(h.ts_ns) - t0, h.dir, h.size});
  return t;
}

/// Reads a capture and reduces it to the TLS application-data records
/// exchanged with the resolver.
inline Trace filter_capture(const std::filesystem::path& capture_path, const ResolverSpec& spec,
                            const std::string& label, const std::string& trace_id) {
  return filter_packets(pcap::read_capture(capture_path), spec, label, trace_id);
}

} // namespace dnsfp
