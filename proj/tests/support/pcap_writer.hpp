#pragma once

// Builds small synthetic captures: Ethernet/IPv4/IPv6/TCP frames written as
// classic pcap (either byte order, us or ns) or pcapng.

#include <arpa/inet.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace testsupport {

using Bytes = std::vector<std::uint8_t>;

inline void be16(Bytes& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}
inline void be32(Bytes& b, std::uint32_t v) {
  be16(b, static_cast<std::uint16_t>(v >> 16));
  be16(b, static_cast<std::uint16_t>(v));
}

struct Segment {
  std::string src_ip, dst_ip;
  std::uint16_t src_port = 0, dst_port = 0;
  std::uint32_t seq = 0;
  bool syn = false, fin = false;
  Bytes payload;
};

inline Bytes tcp_bytes(const Segment& s) {
  Bytes b;
  be16(b, s.src_port);
  be16(b, s.dst_port);
  be32(b, s.seq);
  be32(b, 0);  // ack
  b.push_back(5 << 4);
  b.push_back(static_cast<std::uint8_t>(0x10 | (s.syn ? 0x02 : 0) | (s.fin ? 0x01 : 0)));
  be16(b, 65535);
  be16(b, 0);  // checksum (not verified)
  be16(b, 0);
  b.insert(b.end(), s.payload.begin(), s.payload.end());
  return b;
}

/// IP packet (v4 or v6 by address family) carrying the segment.
inline Bytes ip_packet(const Segment& s) {
  const Bytes tcp = tcp_bytes(s);
  Bytes b;
  unsigned char src[16], dst[16];
  if (inet_pton(AF_INET, s.src_ip.c_str(), src) == 1) {
    inet_pton(AF_INET, s.dst_ip.c_str(), dst);
    b.push_back(0x45);
    b.push_back(0);
    be16(b, static_cast<std::uint16_t>(20 + tcp.size()));
    be16(b, 0);
    be16(b, 0x4000);  // DF
    b.push_back(64);
    b.push_back(6);
    be16(b, 0);
    b.insert(b.end(), src, src + 4);
    b.insert(b.end(), dst, dst + 4);
  } else {
    inet_pton(AF_INET6, s.src_ip.c_str(), src);
    inet_pton(AF_INET6, s.dst_ip.c_str(), dst);
    be32(b, 0x60000000);
    be16(b, static_cast<std::uint16_t>(tcp.size()));
    b.push_back(6);
    b.push_back(64);
    b.insert(b.end(), src, src + 16);
    b.insert(b.end(), dst, dst + 16);
  }
  b.insert(b.end(), tcp.begin(), tcp.end());
  return b;
}

inline Bytes ethernet_frame(const Segment& s, bool vlan = false) {
  const Bytes ip = ip_packet(s);
  Bytes b(12, 0x02);
  if (vlan) {
    be16(b, 0x8100);
    be16(b, 42);
  }
  be16(b, (ip[0] >> 4) == 4 ? 0x0800 : 0x86DD);
  b.insert(b.end(), ip.begin(), ip.end());
  return b;
}

/// TLS record: 5-byte header plus `length` filler bytes.
inline Bytes tls_record(std::uint8_t type, std::size_t length) {
  Bytes b{type, 3, 3};
  be16(b, static_cast<std::uint16_t>(length));
  b.insert(b.end(), length, 0xAB);
  return b;
}

struct Frame {
  std::int64_t ts_ns;
  Bytes data;
};

enum class Format { PcapMicro, PcapNano, PcapMicroSwapped, PcapNg };

class CaptureWriter {
public:
  explicit CaptureWriter(std::uint32_t link_type = 1) : link_(link_type) {}

  void add(std::int64_t ts_ns, Bytes data) { frames_.push_back({ts_ns, std::move(data)}); }
  void add_segment(std::int64_t ts_ns, const Segment& s) {
    add(ts_ns, link_ == 1 ? ethernet_frame(s) : ip_packet(s));
  }

  Bytes bytes(Format f) const {
    if (f == Format::PcapNg) return pcapng();
    const bool swap = f == Format::PcapMicroSwapped;
    const bool nano = f == Format::PcapNano;
    Bytes b;
    auto u32 = [&](std::uint32_t v) {
      if (swap)
        be32(b, v);
      else
        for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    auto u16 = [&](std::uint16_t v) {
      if (swap)
        be16(b, v);
      else
        b.push_back(static_cast<std::uint8_t>(v)), b.push_back(static_cast<std::uint8_t>(v >> 8));
    };
    u32(nano ? 0xa1b23c4d : 0xa1b2c3d4);
    u16(2);
    u16(4);
    u32(0);
    u32(0);
    u32(262144);
    u32(link_);
    for (const auto& fr : frames_) {
      u32(static_cast<std::uint32_t>(fr.ts_ns / 1'000'000'000));
      const auto frac = fr.ts_ns % 1'000'000'000;
      u32(static_cast<std::uint32_t>(nano ? frac : frac / 1000));
      u32(static_cast<std::uint32_t>(fr.data.size()));
      u32(static_cast<std::uint32_t>(fr.data.size()));
      b.insert(b.end(), fr.data.begin(), fr.data.end());
    }
    return b;
  }

  void write(const std::filesystem::path& p, Format f = Format::PcapMicro) const {
    const auto b = bytes(f);
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  }

private:
  // Little-endian pcapng: SHB, one IDB with nanosecond resolution, EPBs.
  Bytes pcapng() const {
    Bytes b;
    auto le32 = [](Bytes& o, std::uint32_t v) {
      for (int i = 0; i < 4; ++i) o.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    auto le16 = [](Bytes& o, std::uint16_t v) {
      o.push_back(static_cast<std::uint8_t>(v));
      o.push_back(static_cast<std::uint8_t>(v >> 8));
    };
    auto block = [&](std::uint32_t type, const Bytes& body) {
      const auto len = static_cast<std::uint32_t>(12 + body.size());
      le32(b, type);
      le32(b, len);
      b.insert(b.end(), body.begin(), body.end());
      le32(b, len);
    };
    Bytes shb;
    le32(shb, 0x1A2B3C4D);
    le16(shb, 1);
    le16(shb, 0);
    le32(shb, 0xffffffff);
    le32(shb, 0xffffffff);
    block(0x0A0D0D0A, shb);
    Bytes idb;
    le16(idb, static_cast<std::uint16_t>(link_));
    le16(idb, 0);
    le32(idb, 262144);
    le16(idb, 9);  // if_tsresol = 10^-9
    le16(idb, 1);
    idb.insert(idb.end(), {9, 0, 0, 0});
    le16(idb, 0);  // opt_endofopt
    le16(idb, 0);
    block(1, idb);
    for (const auto& fr : frames_) {
      Bytes epb;
      const auto ts = static_cast<std::uint64_t>(fr.ts_ns);
      le32(epb, 0);
      le32(epb, static_cast<std::uint32_t>(ts >> 32));
      le32(epb, static_cast<std::uint32_t>(ts));
      le32(epb, static_cast<std::uint32_t>(fr.data.size()));
      le32(epb, static_cast<std::uint32_t>(fr.data.size()));
      epb.insert(epb.end(), fr.data.begin(), fr.data.end());
      while (epb.size() % 4) epb.push_back(0);
      block(6, epb);
    }
    return b;
  }

  std::uint32_t link_;
  std::vector<Frame> frames_;
};

/// A client/resolver TCP conversation with sequence bookkeeping.
class Conversation {
public:
  Conversation(CaptureWriter& w, std::string client, std::uint16_t cport, std::string resolver, std::uint16_t rport)
      : w_(w), client_(std::move(client)), resolver_(std::move(resolver)), cport_(cport), rport_(rport) {}

  void handshake(std::int64_t ts_ns) {
    w_.add_segment(ts_ns, seg(true, {}, true));
    w_.add_segment(ts_ns, seg(false, {}, true));
    ++cseq_;
    ++rseq_;
  }
  /// Sends bytes from the client (to_resolver) or resolver, in one segment.
  void send(std::int64_t ts_ns, bool to_resolver, const Bytes& data) {
    w_.add_segment(ts_ns, seg(to_resolver, data, false));
    (to_resolver ? cseq_ : rseq_) += static_cast<std::uint32_t>(data.size());
  }
  /// Segment at an explicit sequence offset relative to the next expected byte.
  void send_at(std::int64_t ts_ns, bool to_resolver, const Bytes& data, std::int32_t offset) {
    auto s = seg(to_resolver, data, false);
    s.seq += static_cast<std::uint32_t>(offset);
    w_.add_segment(ts_ns, s);
  }

private:
  Segment seg(bool to_resolver, Bytes payload, bool syn) const {
    Segment s;
    s.src_ip = to_resolver ? client_ : resolver_;
    s.dst_ip = to_resolver ? resolver_ : client_;
    s.src_port = to_resolver ? cport_ : rport_;
    s.dst_port = to_resolver ? rport_ : cport_;
    s.seq = to_resolver ? cseq_ : rseq_;
    s.syn = syn;
    s.payload = std::move(payload);
    return s;
  }

  CaptureWriter& w_;
  std::string client_, resolver_;
  std::uint16_t cport_, rport_;
  std::uint32_t cseq_ = 1000, rseq_ = 0xfffffff0;  // resolver side wraps around
};

} // namespace testsupport
