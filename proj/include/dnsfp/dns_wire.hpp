#pragma once

// Minimal DNS wire codec for padding probes: builds a single-question query
// carrying an EDNS(0) OPT record with a Padding option (code 12), and parses
// responses far enough to read the rcode and the OPT options.

#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dnsfp/error.hpp"

namespace dnsfp::dns {

inline constexpr std::uint16_t kTypeA = 1;
inline constexpr std::uint16_t kTypeNS = 2;
inline constexpr std::uint16_t kTypeCNAME = 5;
inline constexpr std::uint16_t kTypeSOA = 6;
inline constexpr std::uint16_t kTypePTR = 12;
inline constexpr std::uint16_t kTypeMX = 15;
inline constexpr std::uint16_t kTypeTXT = 16;
inline constexpr std::uint16_t kTypeAAAA = 28;
inline constexpr std::uint16_t kTypeOPT = 41;
inline constexpr std::uint16_t kTypeSVCB = 64;
inline constexpr std::uint16_t kTypeHTTPS = 65;
inline constexpr std::uint16_t kClassIN = 1;
inline constexpr std::uint16_t kOptionPadding = 12;

inline constexpr std::size_t kHeaderSize = 12;
inline constexpr std::size_t kOptFixedSize = 11;    // root name, type, class, ttl, rdlength
inline constexpr std::size_t kOptionHeaderSize = 4;  // option code, option length

enum class Rcode : std::uint16_t { NoError = 0, FormErr = 1, ServFail = 2, NXDomain = 3, NotImp = 4, Refused = 5 };

inline std::string rcode_name(std::uint16_t rcode) {
  static constexpr std::array<std::string_view, 6> names{"NOERROR", "FORMERR", "SERVFAIL", "NXDOMAIN", "NOTIMP", "REFUSED"};
  return rcode < names.size() ? std::string(names[rcode]) : "RCODE" + std::to_string(rcode);
}

inline std::optional<std::uint16_t> parse_qtype(std::string_view s) {
  struct Named {
    std::string_view name;
    std::uint16_t type;
  };
  static constexpr Named table[] = {{"A", kTypeA},     {"NS", kTypeNS},   {"CNAME", kTypeCNAME}, {"SOA", kTypeSOA},
                                    {"PTR", kTypePTR}, {"MX", kTypeMX},   {"TXT", kTypeTXT},     {"AAAA", kTypeAAAA},
                                    {"SVCB", kTypeSVCB}, {"HTTPS", kTypeHTTPS}};
  for (const auto& n : table)
    if (n.name == s) return n.type;
  if (s.starts_with("TYPE") && s.size() > 4) {
    unsigned v = 0;
    for (char c : s.substr(4)) {
      if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
      v = v * 10 + static_cast<unsigned>(c - '0');
      if (v > 0xffff) return std::nullopt;
    }
    return static_cast<std::uint16_t>(v);
  }
  return std::nullopt;
}

struct QuerySpec {
  std::string qname;
  std::uint16_t qtype = kTypeA;
  std::size_t pad_block = 128;
  std::uint16_t edns_udp_size = 4096;
  bool want_dnssec = false;
};

/// Uncompressed wire form of a domain name. A trailing dot is optional;
/// "." or "" is the root.
inline std::vector<std::uint8_t> encode_name(std::string_view name) {
  if (!name.empty() && name.back() == '.') name.remove_suffix(1);
  std::vector<std::uint8_t> out;
  while (!name.empty()) {
    const auto dot = name.find('.');
    const auto label = name.substr(0, dot);
    if (label.empty()) throw WireFormatError("empty label in domain name");
    if (label.size() > 63) throw NameTooLong("label longer than 63 octets");
    for (char c : label) {
      const auto u = static_cast<unsigned char>(c);
      if (!(std::isalnum(u) || c == '-' || c == '_')) throw WireFormatError("invalid character in domain name");
    }
    out.push_back(static_cast<std::uint8_t>(label.size()));
    out.insert(out.end(), label.begin(), label.end());
    name = dot == std::string_view::npos ? std::string_view{} : name.substr(dot + 1);
  }
  out.push_back(0);
  if (out.size() > 255) throw NameTooLong("domain name longer than 255 octets");
  return out;
}

namespace detail {
inline void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
}
inline void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  put16(b, static_cast<std::uint16_t>(v >> 16));
  put16(b, static_cast<std::uint16_t>(v & 0xffff));
}
} // namespace detail

/// Padding-data length that brings a message of `unpadded_size` bytes
/// (including an empty padding option) to the next multiple of `block`.
inline std::size_t padding_length(std::size_t unpadded_size, std::size_t block) {
  if (block == 0) throw UnencodableBlock("pad block must be >= 1");
  return (block - unpadded_size % block) % block;
}

/// Query with RD=1, one question and an OPT record whose Padding option fills
/// the message to the smallest multiple of spec.pad_block. Padding bytes are zero.
inline std::vector<std::uint8_t> build_query(const QuerySpec& spec, std::uint16_t txn_id) {
  const auto qname = encode_name(spec.qname);
  const std::size_t unpadded = kHeaderSize + qname.size() + 4 + kOptFixedSize + kOptionHeaderSize;
  const std::size_t pad = padding_length(unpadded, spec.pad_block);
  if (kOptionHeaderSize + pad > 0xffff || unpadded + pad > 0xffff)
    throw UnencodableBlock("pad block " + std::to_string(spec.pad_block) + " cannot be reached within 65535 octets");

  std::vector<std::uint8_t> b;
  b.reserve(unpadded + pad);
  detail::put16(b, txn_id);
  detail::put16(b, 0x0100);  // RD
  detail::put16(b, 1);       // QDCOUNT
  detail::put16(b, 0);       // ANCOUNT
  detail::put16(b, 0);       // NSCOUNT
  detail::put16(b, 1);       // ARCOUNT
  b.insert(b.end(), qname.begin(), qname.end());
  detail::put16(b, spec.qtype);
  detail::put16(b, kClassIN);
  b.push_back(0);  // root owner
  detail::put16(b, kTypeOPT);
  detail::put16(b, spec.edns_udp_size);
  detail::put32(b, spec.want_dnssec ? 0x00008000u : 0u);  // ext-rcode 0, version 0, DO
  detail::put16(b, static_cast<std::uint16_t>(kOptionHeaderSize + pad));
  detail::put16(b, kOptionPadding);
  detail::put16(b, static_cast<std::uint16_t>(pad));
  b.insert(b.end(), pad, std::uint8_t{0});
  return b;
}

struct EdnsOption {
  std::uint16_t code = 0;
  std::vector<std::uint8_t> data;
};

struct OptRecord {
  std::uint16_t udp_size = 0;
  std::uint8_t extended_rcode = 0;
  std::uint8_t version = 0;
  bool dnssec_ok = false;
  std::uint16_t rdlength = 0;
  std::vector<EdnsOption> options;

  const EdnsOption* find(std::uint16_t code) const {
    for (const auto& o : options)
      if (o.code == code) return &o;
    return nullptr;
  }
};

struct Question {
  std::string qname;  // dotted, no trailing dot; "" for the root
  std::uint16_t qtype = 0;
  std::uint16_t qclass = 0;
};

struct Message {
  std::uint16_t id = 0;
  std::uint16_t flags = 0;
  std::vector<Question> questions;
  std::uint16_t answer_count = 0;
  std::uint16_t authority_count = 0;
  std::uint16_t additional_count = 0;
  std::optional<OptRecord> opt;
  std::size_t wire_size = 0;

  bool is_response() const noexcept { return (flags & 0x8000) != 0; }
  /// 12-bit rcode when an OPT record is present, else the 4-bit header field.
  std::uint16_t rcode() const noexcept {
    const std::uint16_t low = flags & 0x000f;
    return opt ? static_cast<std::uint16_t>((opt->extended_rcode << 4) | low) : low;
  }
  std::optional<std::size_t> padding_length() const {
    if (!opt) return std::nullopt;
    if (const auto* o = opt->find(kOptionPadding)) return o->data.size();
    return std::nullopt;
  }
};

namespace detail {

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> buf) : buf_(buf) {}

  std::size_t pos() const noexcept { return pos_; }
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw WireFormatError("truncated DNS message");
  }
  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(buf_[pos_] << 8 | buf_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    const std::uint32_t hi = u16();
    return hi << 16 | u16();
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = buf_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  /// Reads a possibly compressed name and leaves the cursor after it.
  std::string name() {
    std::string out;
    std::size_t cursor = pos_;
    bool jumped = false;
    int hops = 0;
    for (;;) {
      if (cursor >= buf_.size()) throw WireFormatError("truncated domain name");
      const std::uint8_t len = buf_[cursor];
      if ((len & 0xc0) == 0xc0) {
        if (cursor + 1 >= buf_.size()) throw WireFormatError("truncated compression pointer");
        if (++hops > 64) throw WireFormatError("compression pointer loop");
        const std::size_t target = static_cast<std::size_t>(len & 0x3f) << 8 | buf_[cursor + 1];
        if (!jumped) pos_ = cursor + 2;
        jumped = true;
        cursor = target;
        continue;
      }
      if (len & 0xc0) throw WireFormatError("unsupported label type");
      if (len == 0) {
        if (!jumped) pos_ = cursor + 1;
        break;
      }
      if (cursor + 1 + len > buf_.size()) throw WireFormatError("truncated label");
      if (!out.empty()) out += '.';
      out.append(reinterpret_cast<const char*>(&buf_[cursor + 1]), len);
      if (out.size() > 255) throw WireFormatError("domain name too long");
      cursor += 1 + len;
    }
    return out;
  }

private:
  std::span<const std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

} // namespace detail

/// Throws WireFormatError on malformed input.
inline Message parse_message(std::span<const std::uint8_t> wire) {
  detail::Reader r(wire);
  Message m;
  m.wire_size = wire.size();
  m.id = r.u16();
  m.flags = r.u16();
  const std::uint16_t qd = r.u16();
  m.answer_count = r.u16();
  m.authority_count = r.u16();
  m.additional_count = r.u16();
  for (std::uint16_t i = 0; i < qd; ++i) {
    Question q;
    q.qname = r.name();
    q.qtype = r.u16();
    q.qclass = r.u16();
    m.questions.push_back(std::move(q));
  }
  const std::size_t records = std::size_t{m.answer_count} + m.authority_count + m.additional_count;
  for (std::size_t i = 0; i < records; ++i) {
    const auto owner = r.name();
    const std::uint16_t type = r.u16();
    const std::uint16_t klass = r.u16();
    const std::uint32_t ttl = r.u32();
    const std::uint16_t rdlen = r.u16();
    const auto rdata = r.bytes(rdlen);
    const bool in_additional = i >= std::size_t{m.answer_count} + m.authority_count;
    if (type != kTypeOPT) continue;
    if (!in_additional || !owner.empty()) throw WireFormatError("misplaced OPT record");
    if (m.opt) throw WireFormatError("more than one OPT record");
    OptRecord opt;
    opt.udp_size = klass;
    opt.extended_rcode = static_cast<std::uint8_t>(ttl >> 24);
    opt.version = static_cast<std::uint8_t>(ttl >> 16);
    opt.dnssec_ok = (ttl & 0x8000) != 0;
    opt.rdlength = rdlen;
    detail::Reader o(rdata);
    while (o.pos() < rdata.size()) {
      EdnsOption opt_entry;
      opt_entry.code = o.u16();
      const std::uint16_t len = o.u16();
      const auto data = o.bytes(len);
      opt_entry.data.assign(data.begin(), data.end());
      opt.options.push_back(std::move(opt_entry));
    }
    m.opt = std::move(opt);
  }
  if (r.pos() != wire.size()) throw WireFormatError("trailing bytes after DNS message");
  return m;
}

/// RFC 4648 base64url without '=' padding, as used by the DoH "dns" parameter.
inline std::string base64url(std::span<const std::uint8_t> data) {
  static constexpr char alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
  std::string out;
  out.reserve((data.size() * 4 + 2) / 3);
  std::size_t i = 0;
  for (; i + 3 <= data.size(); i += 3) {
    const std::uint32_t v = std::uint32_t{data[i]} << 16 | std::uint32_t{data[i + 1]} << 8 | data[i + 2];
    out += alphabet[v >> 18 & 63];
    out += alphabet[v >> 12 & 63];
    out += alphabet[v >> 6 & 63];
    out += alphabet[v & 63];
  }
  if (const std::size_t rest = data.size() - i; rest > 0) {
    std::uint32_t v = std::uint32_t{data[i]} << 16;
    if (rest == 2) v |= std::uint32_t{data[i + 1]} << 8;
    out += alphabet[v >> 18 & 63];
    out += alphabet[v >> 12 & 63];
    if (rest == 2) out += alphabet[v >> 6 & 63];
  }
  return out;
}

} // namespace dnsfp::dns
