#pragma once

// Probing live DoT/DoH resolvers with padded queries and classifying how
// they pad their responses.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <pthread.h>
#include <signal.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/err.h>
#include <openssl/ssl.h>
#include <openssl/x509v3.h>

#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "dnsfp/dns_wire.hpp"
#include "dnsfp/error.hpp"
#include "dnsfp/parallel.hpp"
#include "dnsfp/pcap.hpp"
#include "dnsfp/trace.hpp"

namespace dnsfp {

enum class HttpMethod : std::uint8_t { Get, Post };

inline std::string_view to_string(HttpMethod m) { return m == HttpMethod::Get ? "GET" : "POST"; }

struct ProbeTarget {
  std::string resolver_id;
  Protocol protocol = Protocol::DoT;
  std::string host;
  int port = 0;                 // 0: 853 for DoT, 443 for DoH
  std::string url_template;     // DoH: "https://host/dns-query{?dns}", "/dns-query{?dns}" or "...?dns={dns}"
  HttpMethod method = HttpMethod::Post;
  std::string tls_server_name;  // defaults to host
  int timeout_ms = 5000;
  bool insecure = false;        // skip certificate verification
  std::string ca_file;          // extra trust anchors (PEM); system store otherwise

  int effective_port() const { return port != 0 ? port : protocol == Protocol::DoT ? 853 : 443; }
  std::string server_name() const { return tls_server_name.empty() ? host : tls_server_name; }

  void validate() const {
    if (resolver_id.empty()) throw Error("probe target without resolver_id");
    if (host.empty() && !(protocol == Protocol::DoH && url_template.find("://") != std::string::npos))
      throw Error("probe target '" + resolver_id + "' has no host");
    if (port < 0 || port > 65535) throw Error("probe target '" + resolver_id + "' has an invalid port");
    if (timeout_ms < 1) throw Error("probe timeout must be >= 1 ms");
    if (protocol == Protocol::DoH && url_template.find("{?dns}") == std::string::npos &&
        url_template.find("{dns}") == std::string::npos)
      throw Error("DoH target '" + resolver_id + "' needs a URL template with {?dns} or {dns}");
  }
};

struct QueryRecord {
  std::string qname;
  std::uint16_t qtype = 0;
  std::size_t query_length = 0;
  bool ok = false;  // a well-formed DNS response arrived
  std::size_t response_length = 0;
  std::uint16_t rcode = 0;
  bool padding_present = false;
  std::optional<std::size_t> padding_length;
  std::string error;

  /// Counted by the classifier: an answer or a clean NXDOMAIN.
  bool valid() const noexcept {
    return ok && (rcode == static_cast<std::uint16_t>(dns::Rcode::NoError) ||
                  rcode == static_cast<std::uint16_t>(dns::Rcode::NXDomain));
  }
};

enum class Verdict : std::uint8_t { NoPadding, Custom, Edns468, Invalid };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::NoPadding: return "NoPadding";
    case Verdict::Custom: return "Custom";
    case Verdict::Edns468: return "Edns468";
    case Verdict::Invalid: return "Invalid";
  }
  return "?";
}

struct ProbeResult {
  ProbeTarget target;
  std::vector<QueryRecord> records;
  Verdict verdict = Verdict::Invalid;
  std::string diagnostic;
};

inline constexpr std::size_t kEdnsResponseBlock = 468;

inline Verdict classify_padding(const std::vector<QueryRecord>& records) {
  std::size_t valid = 0, with_option = 0, aligned = 0;
  for (const auto& r : records) {
    if (!r.valid()) continue;
    ++valid;
    with_option += r.padding_present;
    aligned += r.response_length % kEdnsResponseBlock == 0;
  }
  if (valid == 0) return Verdict::Invalid;
  if (aligned == valid && with_option == valid) return Verdict::Edns468;
  if (with_option == 0 && aligned != valid) return Verdict::NoPadding;
  return Verdict::Custom;
}

/// Short A, long TXT, NXDOMAIN and AAAA: raw response sizes differ, so
/// coincidental 468-alignment of one answer cannot pass as padding.
inline std::vector<dns::QuerySpec> default_probe_specs() {
  return {
      {"example.com", dns::kTypeA},
      {"google.com", dns::kTypeTXT},
      {"dnsfp-nxdomain-probe.example.com", dns::kTypeA},
      {"example.com", dns::kTypeAAAA},
  };
}

inline constexpr std::uint16_t kProbeTxnBase = 0x5a00;

namespace detail {

inline void fill_record(QueryRecord& rec, std::span<const std::uint8_t> wire, std::uint16_t txn) {
  try {
    const auto msg = dns::parse_message(wire);
    if (!msg.is_response()) throw WireFormatError("QR bit not set");
    if (msg.id != txn) throw WireFormatError("transaction id mismatch");
    rec.ok = true;
    rec.response_length = wire.size();
    rec.rcode = msg.rcode();
    rec.padding_length = msg.padding_length();
    rec.padding_present = rec.padding_length.has_value();
  } catch (const Error& e) {
    rec.ok = false;
    rec.error = std::string("malformed response: ") + e.what();
  }
}

inline std::string ssl_error_text() {
  const unsigned long code = ERR_get_error();
  if (code == 0) return "TLS error";
  char buf[256];
  ERR_error_string_n(code, buf, sizeof buf);
  ERR_clear_error();
  return buf;
}

struct SslCtxFree {
  void operator()(SSL_CTX* c) const noexcept { SSL_CTX_free(c); }
};
struct SslFree {
  void operator()(SSL* s) const noexcept { SSL_free(s); }
};

class Socket {
public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) reset(), fd_ = std::exchange(o.fd_, -1);
    return *this;
  }
  ~Socket() { reset(); }
  int get() const noexcept { return fd_; }

private:
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  int fd_ = -1;
};

/// Connected TCP socket with send/receive timeouts, or an error message.
inline Socket tcp_connect(const std::string& host, int port, int timeout_ms, std::string& err) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0) {
    err = "resolve " + host + ": " + gai_strerror(rc);
    return {};
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
  err = "connect " + host + ": no usable address";
  for (auto* ai = res; ai; ai = ai->ai_next) {
    Socket s(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (s.get() < 0) continue;
    const int flags = ::fcntl(s.get(), F_GETFL, 0);
    ::fcntl(s.get(), F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(s.get(), ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{s.get(), POLLOUT, 0};
      rc = ::poll(&p, 1, timeout_ms);
      if (rc == 0) {
        err = "connect " + host + ": timed out";
        continue;
      }
      int so_error = 0;
      socklen_t len = sizeof so_error;
      ::getsockopt(s.get(), SOL_SOCKET, SO_ERROR, &so_error, &len);
      rc = so_error == 0 ? 0 : -1;
      errno = so_error;
    }
    if (rc != 0) {
      err = "connect " + host + ": " + std::strerror(errno);
      continue;
    }
    ::fcntl(s.get(), F_SETFL, flags);
    timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
    ::setsockopt(s.get(), SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    ::setsockopt(s.get(), SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    err.clear();
    return s;
  }
  return {};
}

/// Blocks SIGPIPE on this thread while alive; a SIGPIPE raised meanwhile by
/// writing to a closed peer is swallowed, one that was already pending is kept.
class SigpipeBlock {
public:
  SigpipeBlock() {
    sigemptyset(&pipe_);
    sigaddset(&pipe_, SIGPIPE);
    sigset_t pending;
    sigpending(&pending);
    was_pending_ = sigismember(&pending, SIGPIPE) == 1;
    pthread_sigmask(SIG_BLOCK, &pipe_, &old_);
  }
  SigpipeBlock(const SigpipeBlock&) = delete;
  SigpipeBlock& operator=(const SigpipeBlock&) = delete;
  ~SigpipeBlock() {
    if (!was_pending_) {
      sigset_t pending;
      sigpending(&pending);
      const timespec zero{0, 0};
      if (sigismember(&pending, SIGPIPE) == 1) sigtimedwait(&pipe_, nullptr, &zero);
    }
    pthread_sigmask(SIG_SETMASK, &old_, nullptr);
  }

private:
  sigset_t pipe_{}, old_{};
  bool was_pending_ = false;
};

inline bool ssl_write_all(SSL* ssl, const std::vector<std::uint8_t>& b) {
  std::size_t off = 0;
  while (off < b.size()) {
    const int n = SSL_write(ssl, b.data() + off, static_cast<int>(b.size() - off));
    if (n <= 0) return false;
    off += static_cast<std::size_t>(n);
  }
  return true;
}

inline bool ssl_read_exact(SSL* ssl, std::uint8_t* out, std::size_t len) {
  std::size_t off = 0;
  while (off < len) {
    const int n = SSL_read(ssl, out + off, static_cast<int>(len - off));
    if (n <= 0) return false;
    off += static_cast<std::size_t>(n);
  }
  return true;
}

inline std::vector<QueryRecord> blank_records(const std::vector<dns::QuerySpec>& specs) {
  std::vector<QueryRecord> out;
  for (const auto& s : specs) {
    QueryRecord r;
    r.qname = s.qname;
    r.qtype = s.qtype;
    out.push_back(std::move(r));
  }
  return out;
}

inline ProbeResult finish(ProbeTarget target, std::vector<QueryRecord> records, std::string diagnostic = {}) {
  ProbeResult r{std::move(target), std::move(records), Verdict::Invalid, std::move(diagnostic)};
  r.verdict = classify_padding(r.records);
  if (r.diagnostic.empty() && r.verdict == Verdict::Invalid) {
    for (const auto& q : r.records)
      if (!q.error.empty()) {
        r.diagnostic = q.error;
        break;
      }
    if (r.diagnostic.empty()) r.diagnostic = "no NOERROR/NXDOMAIN response";
  }
  return r;
}

} // namespace detail

/// DNS over TLS: one connection, queries sent sequentially with 2-byte
/// length framing. Never throws for network trouble; the verdict is then Invalid.
inline ProbeResult probe_dot(const ProbeTarget& target, const std::vector<dns::QuerySpec>& specs) {
  if (target.protocol != Protocol::DoT) throw Error("probe_dot needs a DoT target");
  target.validate();
  auto records = detail::blank_records(specs);
  auto fail_all = [&](const std::string& why) {
    for (auto& r : records)
      if (!r.ok && r.error.empty()) r.error = why;
    return detail::finish(target, std::move(records), why);
  };

  std::unique_ptr<SSL_CTX, detail::SslCtxFree> ctx(SSL_CTX_new(TLS_client_method()));
  if (!ctx) return fail_all(detail::ssl_error_text());
  SSL_CTX_set_min_proto_version(ctx.get(), TLS1_2_VERSION);
  if (!target.insecure) {
    SSL_CTX_set_verify(ctx.get(), SSL_VERIFY_PEER, nullptr);
    const bool loaded = target.ca_file.empty()
                            ? SSL_CTX_set_default_verify_paths(ctx.get()) == 1
                            : SSL_CTX_load_verify_locations(ctx.get(), target.ca_file.c_str(), nullptr) == 1;
    if (!loaded) return fail_all("cannot load trust anchors: " + detail::ssl_error_text());
  }

  const detail::SigpipeBlock no_sigpipe;
  std::string err;
  auto sock = detail::tcp_connect(target.host, target.effective_port(), target.timeout_ms, err);
  if (sock.get() < 0) return fail_all(err);

  std::unique_ptr<SSL, detail::SslFree> ssl(SSL_new(ctx.get()));
  if (!ssl) return fail_all(detail::ssl_error_text());
  const std::string name = target.server_name();
  const bool name_is_ip = pcap::canonical_ip(name).has_value();
  if (!name_is_ip) SSL_set_tlsext_host_name(ssl.get(), name.c_str());
  if (!target.insecure) {
    X509_VERIFY_PARAM* param = SSL_get0_param(ssl.get());
    if (name_is_ip)
      X509_VERIFY_PARAM_set1_ip_asc(param, name.c_str());
    else
      X509_VERIFY_PARAM_set1_host(param, name.c_str(), 0);
  }
  SSL_set_fd(ssl.get(), sock.get());
  if (SSL_connect(ssl.get()) != 1) {
    const long vr = SSL_get_verify_result(ssl.get());
    return fail_all("TLS handshake failed: " +
                    (vr != X509_V_OK ? std::string(X509_verify_cert_error_string(vr)) : detail::ssl_error_text()));
  }

  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto& rec = records[i];
    const auto txn = static_cast<std::uint16_t>(kProbeTxnBase + i);
    std::vector<std::uint8_t> query;
    try {
      query = dns::build_query(specs[i], txn);
    } catch (const Error& e) {
      rec.error = e.what();
      continue;
    }
    rec.query_length = query.size();
    std::vector<std::uint8_t> framed{static_cast<std::uint8_t>(query.size() >> 8),
                                     static_cast<std::uint8_t>(query.size() & 0xff)};
    framed.insert(framed.end(), query.begin(), query.end());
    std::uint8_t len[2];
    if (!detail::ssl_write_all(ssl.get(), framed) || !detail::ssl_read_exact(ssl.get(), len, 2)) {
      rec.error = "connection closed or timed out";
      for (std::size_t j = i + 1; j < specs.size(); ++j) records[j].error = "not sent: connection lost";
      break;
    }
    std::vector<std::uint8_t> resp(static_cast<std::size_t>(len[0]) << 8 | len[1]);
    if (!detail::ssl_read_exact(ssl.get(), resp.data(), resp.size())) {
      rec.error = "truncated response";
      for (std::size_t j = i + 1; j < specs.size(); ++j) records[j].error = "not sent: connection lost";
      break;
    }
    detail::fill_record(rec, resp, txn);
  }
  SSL_shutdown(ssl.get());
  return detail::finish(target, std::move(records));
}

namespace detail {

struct DohEndpoint {
  std::string scheme_host_port;  // "https://name:port"
  std::string path_template;     // path and query with the {?dns}/{dns} slot
};

inline DohEndpoint doh_endpoint(const ProbeTarget& t) {
  DohEndpoint ep;
  std::string scheme = "https", authority, rest = t.url_template;
  if (const auto p = rest.find("://"); p != std::string::npos) {
    scheme = rest.substr(0, p);
    rest = rest.substr(p + 3);
    const auto slash = rest.find('/');
    authority = rest.substr(0, slash);
    rest = slash == std::string::npos ? "/" : rest.substr(slash);
  }
  if (scheme != "https" && scheme != "http") throw Error("unsupported URL scheme '" + scheme + "'");
  std::string name = t.tls_server_name;
  if (name.empty()) {
    name = authority.empty() ? t.host : authority;
    if (const auto colon = name.rfind(':'); !authority.empty() && colon != std::string::npos &&
                                            name.find(']') == std::string::npos && name.find(':') == colon)
      name = name.substr(0, colon);
  }
  ep.scheme_host_port = scheme + "://" + name + ":" + std::to_string(t.effective_port());
  ep.path_template = rest.empty() || rest.front() != '/' ? "/" + rest : rest;
  return ep;
}

inline std::string expand_template(const std::string& tmpl, const std::string& dns_value) {
  std::string out = tmpl;
  if (const auto p = out.find("{?dns}"); p != std::string::npos)
    return out.replace(p, 6, dns_value.empty() ? std::string{} : "?dns=" + dns_value);
  if (const auto p = out.find("{dns}"); p != std::string::npos) {
    if (!dns_value.empty()) return out.replace(p, 5, dns_value);
    // POST with a "...?dns={dns}" template: drop the parameter.
    out.erase(p, 5);
    if (out.size() >= 5 && out.compare(out.size() - 5, 5, "?dns=") == 0) out.erase(out.size() - 5);
    else if (out.size() >= 5 && out.compare(out.size() - 5, 5, "&dns=") == 0) out.erase(out.size() - 5);
  }
  return out;
}

} // namespace detail

/// DNS over HTTPS: GET (base64url, id 0) or POST (application/dns-message).
inline ProbeResult probe_doh(const ProbeTarget& target, const std::vector<dns::QuerySpec>& specs) {
  if (target.protocol != Protocol::DoH) throw Error("probe_doh needs a DoH target");
  target.validate();
  auto records = detail::blank_records(specs);
  detail::DohEndpoint ep;
  try {
    ep = detail::doh_endpoint(target);
  } catch (const Error& e) {
    return detail::finish(target, std::move(records), e.what());
  }

  const detail::SigpipeBlock no_sigpipe;
  httplib::Client cli(ep.scheme_host_port);
  if (!cli.is_valid()) return detail::finish(target, std::move(records), "cannot create HTTP client");
  const auto secs = target.timeout_ms / 1000;
  const auto usecs = (target.timeout_ms % 1000) * 1000;
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  cli.set_keep_alive(true);
  cli.enable_server_certificate_verification(!target.insecure);
  if (!target.ca_file.empty()) cli.set_ca_cert_path(target.ca_file);
  const std::string name = target.server_name();
  const auto authority_end = ep.scheme_host_port.rfind(':');
  const std::string url_host = ep.scheme_host_port.substr(ep.scheme_host_port.find("://") + 3,
                                                          authority_end - ep.scheme_host_port.find("://") - 3);
  if (!target.host.empty() && target.host != url_host) cli.set_hostname_addr_map({{url_host, target.host}});
  const httplib::Headers headers{{"Accept", "application/dns-message"}};

  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto& rec = records[i];
    const auto txn = target.method == HttpMethod::Get ? std::uint16_t{0} : static_cast<std::uint16_t>(kProbeTxnBase + i);
    std::vector<std::uint8_t> query;
    try {
      query = dns::build_query(specs[i], txn);
    } catch (const Error& e) {
      rec.error = e.what();
      continue;
    }
    rec.query_length = query.size();
    httplib::Result res =
        target.method == HttpMethod::Get
            ? cli.Get(detail::expand_template(ep.path_template, dns::base64url(query)), headers)
            : cli.Post(detail::expand_template(ep.path_template, ""), headers,
                       std::string(query.begin(), query.end()), "application/dns-message");
    if (!res) {
      rec.error = "HTTP request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 400) {
      rec.error = "HTTP status " + std::to_string(res->status);
      continue;
    }
    const auto& body = res->body;
    detail::fill_record(rec, std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()), txn);
  }
  return detail::finish(target, std::move(records));
}

inline ProbeResult probe(const ProbeTarget& target, const std::vector<dns::QuerySpec>& specs) {
  return target.protocol == Protocol::DoT ? probe_dot(target, specs) : probe_doh(target, specs);
}

/// Probes targets concurrently, at most `concurrency` at a time; results
/// come back in target order.
inline std::vector<ProbeResult> probe_all(const std::vector<ProbeTarget>& targets,
                                          const std::vector<dns::QuerySpec>& specs, std::size_t concurrency = 8) {
  for (const auto& t : targets) t.validate();
  std::vector<ProbeResult> out(targets.size());
  parallel_for(targets.size(), concurrency, [&](std::size_t i) { out[i] = probe(targets[i], specs); });
  return out;
}

// ---------------------------------------------------------------------------
// Target lists and reports

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cur += '"', ++i;
      else if (c == '"') quoted = false;
      else cur += c;
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  for (auto& f : out) {
    while (!f.empty() && (f.back() == ' ' || f.back() == '\r')) f.pop_back();
    while (!f.empty() && f.front() == ' ') f.erase(f.begin());
  }
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

} // namespace detail

/// Columns resolver_id,protocol,host,port,doh_url,method with optional
/// tls_server_name,timeout_ms,insecure,ca_file. A header row is optional;
/// without one the columns are taken in that order. Blank lines and lines
/// starting with '#' are skipped.
inline std::vector<ProbeTarget> read_targets(std::istream& in) {
  static const std::vector<std::string> default_cols{"resolver_id", "protocol", "host",     "port",      "doh_url",
                                                     "method",      "tls_server_name", "timeout_ms", "insecure", "ca_file"};
  std::vector<std::string> cols = default_cols;
  std::vector<ProbeTarget> out;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = detail::split_csv_line(line);
    if (fields.size() == 1 && fields[0].empty()) continue;
    if (!fields[0].empty() && fields[0][0] == '#') continue;
    if (first && fields[0] == "resolver_id") {
      cols = fields;
      first = false;
      continue;
    }
    first = false;
    if (fields.size() > cols.size()) throw ParseError(line_no, "too many columns");
    ProbeTarget t;
    try {
      for (std::size_t i = 0; i < fields.size(); ++i) {
        const auto& c = cols[i];
        const auto& v = fields[i];
        if (c == "resolver_id") t.resolver_id = v;
        else if (c == "protocol") {
          const auto p = parse_protocol(v);
          if (!p) throw Error("unknown protocol '" + v + "'");
          t.protocol = *p;
        }
        else if (c == "host") t.host = v;
        else if (c == "port") t.port = v.empty() ? 0 : std::stoi(v);
        else if (c == "doh_url") t.url_template = v;
        else if (c == "method") {
          if (v.empty() || v == "POST" || v == "post") t.method = HttpMethod::Post;
          else if (v == "GET" || v == "get") t.method = HttpMethod::Get;
          else throw Error("unknown HTTP method '" + v + "'");
        } else if (c == "tls_server_name") t.tls_server_name = v;
        else if (c == "timeout_ms") t.timeout_ms = v.empty() ? 5000 : std::stoi(v);
        else if (c == "insecure") t.insecure = v == "1" || v == "true" || v == "yes";
        else if (c == "ca_file") t.ca_file = v;
        else throw Error("unknown column '" + c + "'");
      }
      t.validate();
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(line_no, e.what());
    }
    out.push_back(std::move(t));
  }
  return out;
}

inline std::vector<ProbeTarget> read_targets(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open targets file " + path.string());
  return read_targets(in);
}

struct VerdictSummary {
  std::map<Verdict, std::size_t> counts;
  std::size_t total = 0;
  double fraction(Verdict v) const {
    const auto it = counts.find(v);
    return total == 0 || it == counts.end() ? 0.0 : static_cast<double>(it->second) / static_cast<double>(total);
  }
};

/// Per-protocol verdict fractions, plus "all".
inline std::map<std::string, VerdictSummary> summarize(const std::vector<ProbeResult>& results) {
  std::map<std::string, VerdictSummary> out;
  for (const auto& r : results) {
    for (const std::string key : {std::string(to_string(r.target.protocol)), std::string("all")}) {
      auto& s = out[key];
      ++s.counts[r.verdict];
      ++s.total;
    }
  }
  return out;
}

inline nlohmann::json to_json(const QueryRecord& r) {
  nlohmann::json j{{"qname", r.qname},       {"qtype", r.qtype}, {"query_length", r.query_length},
                   {"ok", r.ok},             {"valid", r.valid()}};
  if (r.ok) {
    j["response_length"] = r.response_length;
    j["rcode"] = dns::rcode_name(r.rcode);
    j["padding_present"] = r.padding_present;
    j["padding_length"] = r.padding_length ? nlohmann::json(*r.padding_length) : nlohmann::json(nullptr);
  }
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

inline nlohmann::json to_json(const std::vector<ProbeResult>& results) {
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json q = nlohmann::json::array();
    for (const auto& rec : r.records) q.push_back(to_json(rec));
    targets.push_back({{"resolver_id", r.target.resolver_id},
                       {"protocol", to_string(r.target.protocol)},
                       {"host", r.target.host},
                       {"port", r.target.effective_port()},
                       {"verdict", to_string(r.verdict)},
                       {"diagnostic", r.diagnostic},
                       {"queries", q}});
  }
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& [proto, s] : summarize(results)) {
    nlohmann::json f = nlohmann::json::object();
    for (auto v : {Verdict::NoPadding, Verdict::Custom, Verdict::Edns468, Verdict::Invalid})
      f[std::string(to_string(v))] = s.fraction(v);
    summary[proto] = {{"targets", s.total}, {"fractions", f}};
  }
  return {{"targets", targets}, {"summary", summary}};
}

/// One row per target. response_lengths and padding_lengths list the
/// per-query values separated by ';' ("-" for a failed query or absent option).
inline void write_probe_csv(const std::vector<ProbeResult>& results, std::ostream& out) {
  out << "resolver_id,protocol,host,port,verdict,valid_responses,queries,response_lengths,padding_lengths,diagnostic\n";
  for (const auto& r : results) {
    std::string lens, pads;
    std::size_t valid = 0;
    for (std::size_t i = 0; i < r.records.size(); ++i) {
      const auto& q = r.records[i];
      valid += q.valid();
      if (i) lens += ';', pads += ';';
      lens += q.ok ? std::to_string(q.response_length) : "-";
      pads += q.ok && q.padding_length ? std::to_string(*q.padding_length) : "-";
    }
    out << detail::csv_field(r.target.resolver_id) << ',' << to_string(r.target.protocol) << ','
        << detail::csv_field(r.target.host) << ',' << r.target.effective_port() << ',' << to_string(r.verdict) << ','
        << valid << ',' << r.records.size() << ',' << lens << ',' << pads << ',' << detail::csv_field(r.diagnostic)
        << '\n';
  }
}

} // namespace dnsfp
