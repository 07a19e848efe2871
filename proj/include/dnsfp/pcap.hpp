#pragma once

// Reader for classic pcap (micro- and nanosecond, either byte order) and
// pcapng capture files, plus a decoder down to TCP segments for the link
// types that matter here: Ethernet (with VLAN tags), raw IP, Linux cooked
// capture v1/v2 and BSD loopback.

#include <arpa/inet.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dnsfp/error.hpp"

namespace dnsfp::pcap {

inline constexpr std::uint32_t kLinkNull = 0;
inline constexpr std::uint32_t kLinkEthernet = 1;
inline constexpr std::uint32_t kLinkRawBsd = 12;
inline constexpr std::uint32_t kLinkRawOpenBsd = 14;
inline constexpr std::uint32_t kLinkRaw = 101;
inline constexpr std::uint32_t kLinkLinuxSll = 113;
inline constexpr std::uint32_t kLinkIpv4 = 228;
inline constexpr std::uint32_t kLinkIpv6 = 229;
inline constexpr std::uint32_t kLinkLinuxSll2 = 276;

struct Packet {
  std::int64_t ts_ns = 0;  // capture time, nanoseconds since the epoch
  std::uint32_t link_type = kLinkEthernet;
  std::uint32_t original_length = 0;
  std::vector<std::uint8_t> data;  // captured bytes (may be shorter than original_length)
};

namespace detail {

class ByteView {
public:
  ByteView(std::span<const std::uint8_t> b, bool swap) : b_(b), swap_(swap) {}

  bool has(std::size_t off, std::size_t n) const noexcept { return off <= b_.size() && n <= b_.size() - off; }

  std::uint16_t u16(std::size_t off) const {
    check(off, 2);
    std::uint16_t v;
    std::memcpy(&v, b_.data() + off, 2);
    return swap_ ? static_cast<std::uint16_t>(v << 8 | v >> 8) : v;
  }
  std::uint32_t u32(std::size_t off) const {
    check(off, 4);
    std::uint32_t v;
    std::memcpy(&v, b_.data() + off, 4);
    return swap_ ? __builtin_bswap32(v) : v;
  }

private:
  void check(std::size_t off, std::size_t n) const {
    if (!has(off, n)) throw UnreadableCapture("truncated capture file");
  }
  std::span<const std::uint8_t> b_;
  bool swap_;
};

inline bool host_is_little() {
  const std::uint16_t one = 1;
  std::uint8_t first;
  std::memcpy(&first, &one, 1);
  return first == 1;
}

inline std::int64_t to_ns(std::uint64_t units, std::uint64_t per_second) {
  const auto whole = static_cast<std::int64_t>(units / per_second);
  const auto frac = static_cast<std::int64_t>(units % per_second);
  return whole * 1'000'000'000 + static_cast<std::int64_t>((static_cast<__int128>(frac) * 1'000'000'000) / per_second);
}

inline std::vector<Packet> read_classic(std::span<const std::uint8_t> file) {
  std::uint32_t magic;
  std::memcpy(&magic, file.data(), 4);
  bool swap = false, nano = false;
  switch (magic) {
    case 0xa1b2c3d4: break;
    case 0xd4c3b2a1: swap = true; break;
    case 0xa1b23c4d: nano = true; break;
    case 0x4d3cb2a1: swap = nano = true; break;
    default: throw UnreadableCapture("unknown capture magic");
  }
  ByteView v(file, swap);
  const std::uint32_t link = v.u32(20) & 0x0fffffff;
  std::vector<Packet> out;
  std::size_t off = 24;
  while (off < file.size()) {
    if (!v.has(off, 16)) throw UnreadableCapture("truncated packet record header");
    Packet p;
    const std::uint32_t sec = v.u32(off), frac = v.u32(off + 4), incl = v.u32(off + 8);
    p.original_length = v.u32(off + 12);
    if (!v.has(off + 16, incl)) throw UnreadableCapture("truncated packet data");
    p.ts_ns = static_cast<std::int64_t>(sec) * 1'000'000'000 + static_cast<std::int64_t>(frac) * (nano ? 1 : 1000);
    p.link_type = link;
    p.data.assign(file.begin() + static_cast<std::ptrdiff_t>(off + 16),
                  file.begin() + static_cast<std::ptrdiff_t>(off + 16 + incl));
    out.push_back(std::move(p));
    off += 16 + incl;
  }
  return out;
}

inline std::vector<Packet> read_pcapng(std::span<const std::uint8_t> file) {
  struct Interface {
    std::uint32_t link;
    std::uint64_t per_second;
  };
  std::vector<Interface> ifaces;
  std::vector<Packet> out;
  bool swap = false;
  std::size_t off = 0;
  while (off < file.size()) {
    if (file.size() - off < 12) throw UnreadableCapture("truncated pcapng block");
    std::uint32_t type;
    std::memcpy(&type, file.data() + off, 4);
    if (type == 0x0A0D0D0A) {
      std::uint32_t bom;
      std::memcpy(&bom, file.data() + off + 8, 4);
      if (bom == 0x1A2B3C4D)
        swap = false;
      else if (bom == 0x4D3C2B1A)
        swap = true;
      else
        throw UnreadableCapture("bad pcapng byte-order magic");
      ifaces.clear();
    } else if (off == 0) {
      throw UnreadableCapture("pcapng file does not start with a section header");
    }
    ByteView v(file, swap);
    type = v.u32(off);
    const std::uint32_t len = v.u32(off + 4);
    if (len < 12 || len % 4 != 0 || !v.has(off, len)) throw UnreadableCapture("bad pcapng block length");
    const std::size_t body = off + 8;
    const std::size_t body_end = off + len - 4;

    auto packet = [&](std::uint32_t iface, std::uint64_t ts, std::uint32_t caplen, std::uint32_t origlen,
                      std::size_t data_off) {
      if (iface >= ifaces.size()) throw UnreadableCapture("packet references unknown interface");
      if (data_off + caplen > body_end) throw UnreadableCapture("truncated pcapng packet");
      Packet p;
      p.ts_ns = to_ns(ts, ifaces[iface].per_second);
      p.link_type = ifaces[iface].link;
      p.original_length = origlen;
      p.data.assign(file.begin() + static_cast<std::ptrdiff_t>(data_off),
                    file.begin() + static_cast<std::ptrdiff_t>(data_off + caplen));
      out.push_back(std::move(p));
    };

    switch (type) {
      case 1: {  // interface description
        Interface itf{v.u16(body), 1'000'000};
        std::size_t opt = body + 8;
        while (opt + 4 <= body_end) {
          const std::uint16_t code = v.u16(opt), olen = v.u16(opt + 2);
          if (code == 0) break;
          if (code == 9 && olen >= 1) {  // if_tsresol
            const std::uint8_t r = file[opt + 4];
            std::uint64_t per = 1;
            const unsigned exp = r & 0x7f;
            if (exp > 63 || (!(r & 0x80) && exp > 19)) throw UnreadableCapture("unsupported timestamp resolution");
            for (unsigned i = 0; i < exp; ++i) per *= (r & 0x80) ? 2 : 10;
            itf.per_second = per;
          }
          opt += 4 + ((olen + 3u) & ~3u);
        }
        ifaces.push_back(itf);
        break;
      }
      case 6: {  // enhanced packet
        const std::uint64_t ts = std::uint64_t{v.u32(body + 4)} << 32 | v.u32(body + 8);
        packet(v.u32(body), ts, v.u32(body + 12), v.u32(body + 16), body + 20);
        break;
      }
      case 2: {  // obsolete packet block
        const std::uint64_t ts = std::uint64_t{v.u32(body + 4)} << 32 | v.u32(body + 8);
        packet(v.u16(body), ts, v.u32(body + 12), v.u32(body + 16), body + 20);
        break;
      }
      default: break;  // simple packet blocks carry no timestamp; other blocks are metadata
    }
    off += len;
  }
  return out;
}

} // namespace detail

/// Reads every packet of a classic pcap or pcapng file.
inline std::vector<Packet> read_capture(std::span<const std::uint8_t> file) {
  if (file.size() < 4) throw UnreadableCapture("file too short to be a capture");
  std::uint32_t magic;
  std::memcpy(&magic, file.data(), 4);
  if (magic == 0x0A0D0D0A) return detail::read_pcapng(file);
  if (file.size() < 24) throw UnreadableCapture("truncated capture header");
  return detail::read_classic(file);
}

inline std::vector<Packet> read_capture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UnreadableCapture("cannot open capture " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return read_capture(bytes);
}

// ---------------------------------------------------------------------------
// Decoding to TCP

struct TcpSegment {
  std::string src_ip;
  std::string dst_ip;
  std::uint16_t src_port = 0;
  std::uint16_t dst_port = 0;
  std::uint32_t seq = 0;
  bool syn = false;
  bool fin = false;
  bool rst = false;
  std::span<const std::uint8_t> payload;  // captured payload bytes
  std::size_t payload_length = 0;         // on-the-wire payload length per the IP header
};

/// Canonical text form of an IPv4/IPv6 address, or nullopt if unparsable.
inline std::optional<std::string> canonical_ip(const std::string& s) {
  unsigned char buf[16];
  char text[INET6_ADDRSTRLEN];
  if (inet_pton(AF_INET, s.c_str(), buf) == 1) return std::string(inet_ntop(AF_INET, buf, text, sizeof text));
  if (inet_pton(AF_INET6, s.c_str(), buf) == 1) return std::string(inet_ntop(AF_INET6, buf, text, sizeof text));
  return std::nullopt;
}

namespace detail {

inline std::uint16_t be16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] << 8 | b[off + 1]);
}
inline std::uint32_t be32(std::span<const std::uint8_t> b, std::size_t off) {
  return std::uint32_t{be16(b, off)} << 16 | be16(b, off + 2);
}

inline std::string ip_text(int family, const std::uint8_t* addr) {
  char text[INET6_ADDRSTRLEN];
  return inet_ntop(family, addr, text, sizeof text);
}

inline std::optional<TcpSegment> decode_tcp(std::span<const std::uint8_t> l4, std::size_t wire_len, TcpSegment seg) {
  if (l4.size() < 20) return std::nullopt;
  const std::size_t header = static_cast<std::size_t>(l4[12] >> 4) * 4;
  if (header < 20 || header > l4.size() || header > wire_len) return std::nullopt;
  seg.src_port = be16(l4, 0);
  seg.dst_port = be16(l4, 2);
  seg.seq = be32(l4, 4);
  const std::uint8_t flags = l4[13];
  seg.fin = flags & 0x01;
  seg.syn = flags & 0x02;
  seg.rst = flags & 0x04;
  seg.payload_length = wire_len - header;
  seg.payload = l4.subspan(header, std::min(l4.size(), wire_len) - header);
  return seg;
}

inline std::optional<TcpSegment> decode_ip(std::span<const std::uint8_t> b) {
  if (b.empty()) return std::nullopt;
  const unsigned version = b[0] >> 4;
  TcpSegment seg;
  if (version == 4) {
    if (b.size() < 20) return std::nullopt;
    const std::size_t ihl = static_cast<std::size_t>(b[0] & 0x0f) * 4;
    const std::size_t total = be16(b, 2);
    if (ihl < 20 || total < ihl || b.size() < ihl) return std::nullopt;
    const std::uint16_t frag = be16(b, 6);
    if ((frag & 0x1fff) != 0 || (frag & 0x2000) != 0) return std::nullopt;  // fragments are not reassembled
    if (b[9] != 6) return std::nullopt;
    seg.src_ip = ip_text(AF_INET, &b[12]);
    seg.dst_ip = ip_text(AF_INET, &b[16]);
    return decode_tcp(b.subspan(ihl), total - ihl, std::move(seg));
  }
  if (version == 6) {
    if (b.size() < 40) return std::nullopt;
    std::size_t remaining = be16(b, 4);
    std::uint8_t next = b[6];
    seg.src_ip = ip_text(AF_INET6, &b[8]);
    seg.dst_ip = ip_text(AF_INET6, &b[24]);
    std::size_t off = 40;
    while (next == 0 || next == 43 || next == 60) {
      if (b.size() < off + 8) return std::nullopt;
      const std::size_t len = (static_cast<std::size_t>(b[off + 1]) + 1) * 8;
      if (len > remaining) return std::nullopt;
      next = b[off];
      off += len;
      remaining -= len;
    }
    if (next != 6 || off > b.size()) return std::nullopt;
    return decode_tcp(b.subspan(off), remaining, std::move(seg));
  }
  return std::nullopt;
}

} // namespace detail

/// TCP segment carried by a captured frame; nullopt for anything else.
inline std::optional<TcpSegment> decode_tcp_segment(const Packet& p) {
  std::span<const std::uint8_t> b(p.data);
  auto ethertype_payload = [&](std::uint16_t type, std::size_t off) -> std::optional<TcpSegment> {
    if (type != 0x0800 && type != 0x86DD) return std::nullopt;
    if (off > b.size()) return std::nullopt;
    return detail::decode_ip(b.subspan(off));
  };
  switch (p.link_type) {
    case kLinkEthernet: {
      if (b.size() < 14) return std::nullopt;
      std::size_t off = 12;
      std::uint16_t type = detail::be16(b, off);
      while ((type == 0x8100 || type == 0x88A8) && b.size() >= off + 6) {
        off += 4;
        type = detail::be16(b, off);
      }
      return ethertype_payload(type, off + 2);
    }
    case kLinkRaw:
    case kLinkRawBsd:
    case kLinkRawOpenBsd:
    case kLinkIpv4:
    case kLinkIpv6: return detail::decode_ip(b);
    case kLinkLinuxSll:
      if (b.size() < 16) return std::nullopt;
      return ethertype_payload(detail::be16(b, 14), 16);
    case kLinkLinuxSll2:
      if (b.size() < 20) return std::nullopt;
      return ethertype_payload(detail::be16(b, 0), 20);
    case kLinkNull: {
      if (b.size() < 4) return std::nullopt;
      return detail::decode_ip(b.subspan(4));
    }
    default: return std::nullopt;
  }
}

} // namespace dnsfp::pcap
