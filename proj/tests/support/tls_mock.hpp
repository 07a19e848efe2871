#pragma once

// Test-only helpers: a throwaway self-signed certificate, DNS response
// construction, and a loopback DNS-over-TLS server.

#include <netinet/in.h>
#include <pthread.h>
#include <signal.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/ssl.h>
#include <openssl/x509v3.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace testsupport {

using Bytes = std::vector<std::uint8_t>;

/// Self-signed P-256 certificate for "localhost" and 127.0.0.1, written as
/// PEM files into a fresh temporary directory.
class TestCertificate {
public:
  TestCertificate() {
    dir_ = std::filesystem::temp_directory_path() /
           ("dnsfp-cert-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    std::filesystem::create_directories(dir_);
    EVP_PKEY* key = EVP_EC_gen("P-256");
    if (!key) throw std::runtime_error("key generation failed");
    X509* cert = X509_new();
    X509_set_version(cert, 2);
    ASN1_INTEGER_set(X509_get_serialNumber(cert), 1);
    X509_gmtime_adj(X509_getm_notBefore(cert), -3600);
    X509_gmtime_adj(X509_getm_notAfter(cert), 86400);
    X509_set_pubkey(cert, key);
    X509_NAME* name = X509_get_subject_name(cert);
    X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC, reinterpret_cast<const unsigned char*>("localhost"), -1, -1,
                               0);
    X509_set_issuer_name(cert, name);
    X509V3_CTX ctx;
    X509V3_set_ctx_nodb(&ctx);
    X509V3_set_ctx(&ctx, cert, cert, nullptr, nullptr, 0);
    for (const auto& [nid, value] : {std::pair{NID_subject_alt_name, "DNS:localhost,IP:127.0.0.1"},
                                     std::pair{NID_basic_constraints, "critical,CA:TRUE"}}) {
      X509_EXTENSION* ext = X509V3_EXT_conf_nid(nullptr, &ctx, nid, value);
      X509_add_ext(cert, ext, -1);
      X509_EXTENSION_free(ext);
    }
    X509_sign(cert, key, EVP_sha256());
    FILE* f = std::fopen(cert_path().c_str(), "w");
    PEM_write_X509(f, cert);
    std::fclose(f);
    f = std::fopen(key_path().c_str(), "w");
    PEM_write_PrivateKey(f, key, nullptr, nullptr, 0, nullptr, nullptr);
    std::fclose(f);
    X509_free(cert);
    EVP_PKEY_free(key);
  }
  ~TestCertificate() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  TestCertificate(const TestCertificate&) = delete;
  TestCertificate& operator=(const TestCertificate&) = delete;

  std::string cert_path() const { return (dir_ / "cert.pem").string(); }
  std::string key_path() const { return (dir_ / "key.pem").string(); }

private:
  static std::atomic<int>& counter() {
    static std::atomic<int> c{0};
    return c;
  }
  std::filesystem::path dir_;
};

inline void put16(Bytes& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

struct ResponseShape {
  std::uint16_t rcode = 0;
  bool padding_option = false;
  std::size_t total_length = 0;  // with the option: padded to exactly this (if reachable)
  int answers = 1;               // A records (16 bytes each)
};

/// Response to `query` (its id and question echoed). Without a padding
/// option the message carries a bare OPT record.
inline Bytes dns_response(const Bytes& query, const ResponseShape& shape) {
  std::size_t qend = 12;
  while (query.at(qend) != 0) qend += query[qend] + 1u;
  qend += 1 + 4;
  Bytes b(query.begin(), query.begin() + 2);
  put16(b, static_cast<std::uint16_t>(0x8180 | (shape.rcode & 0x0f)));
  put16(b, 1);
  put16(b, static_cast<std::uint16_t>(shape.answers));
  put16(b, 0);
  put16(b, 1);
  b.insert(b.end(), query.begin() + 12, query.begin() + static_cast<std::ptrdiff_t>(qend));
  for (int i = 0; i < shape.answers; ++i) {
    put16(b, 0xc00c);
    put16(b, 1);
    put16(b, 1);
    put16(b, 0);
    put16(b, 300);
    put16(b, 4);
    b.insert(b.end(), {93, 184, 216, static_cast<std::uint8_t>(34 + i)});
  }
  b.push_back(0);
  put16(b, 41);
  put16(b, 1232);
  put16(b, 0);
  put16(b, 0);
  if (shape.padding_option) {
    const std::size_t base = b.size() + 2 + 4;
    const std::size_t pad = shape.total_length > base ? shape.total_length - base : 0;
    put16(b, static_cast<std::uint16_t>(4 + pad));
    put16(b, 12);
    put16(b, static_cast<std::uint16_t>(pad));
    b.insert(b.end(), pad, 0);
  } else {
    put16(b, 0);
  }
  return b;
}

// Server threads write to clients that may already have hung up.
inline void block_sigpipe_on_this_thread() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGPIPE);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
}

/// Loopback DoT server. The handler maps each query to a response; nullopt
/// closes the connection. With close_immediately the server drops every
/// connection before the TLS handshake.
class DotServer {
public:
  using Handler = std::function<std::optional<Bytes>(const Bytes& query)>;

  DotServer(const TestCertificate& cert, Handler handler, bool close_immediately = false)
      : handler_(std::move(handler)), close_immediately_(close_immediately) {
    ctx_ = SSL_CTX_new(TLS_server_method());
    if (SSL_CTX_use_certificate_file(ctx_, cert.cert_path().c_str(), SSL_FILETYPE_PEM) != 1 ||
        SSL_CTX_use_PrivateKey_file(ctx_, cert.key_path().c_str(), SSL_FILETYPE_PEM) != 1)
      throw std::runtime_error("cannot load test certificate");
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listen_fd_, 16) != 0)
      throw std::runtime_error("cannot listen");
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    thread_ = std::thread([this] { serve(); });
  }

  ~DotServer() {
    stop_ = true;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    thread_.join();
    SSL_CTX_free(ctx_);
  }

  int port() const { return port_; }
  int connections() const { return connections_.load(); }

private:
  void serve() {
    block_sigpipe_on_this_thread();
    while (!stop_) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) return;
      ++connections_;
      if (close_immediately_) {
        ::close(fd);
        continue;
      }
      SSL* ssl = SSL_new(ctx_);
      SSL_set_fd(ssl, fd);
      if (SSL_accept(ssl) == 1) {
        for (;;) {
          std::uint8_t len[2];
          if (!read_exact(ssl, len, 2)) break;
          Bytes q(static_cast<std::size_t>(len[0]) << 8 | len[1]);
          if (!read_exact(ssl, q.data(), q.size())) break;
          const auto resp = handler_(q);
          if (!resp) break;
          Bytes framed;
          put16(framed, static_cast<std::uint16_t>(resp->size()));
          framed.insert(framed.end(), resp->begin(), resp->end());
          if (SSL_write(ssl, framed.data(), static_cast<int>(framed.size())) <= 0) break;
        }
        SSL_shutdown(ssl);
      }
      SSL_free(ssl);
      ::close(fd);
    }
  }

  static bool read_exact(SSL* ssl, std::uint8_t* out, std::size_t n) {
    std::size_t off = 0;
    while (off < n) {
      const int r = SSL_read(ssl, out + off, static_cast<int>(n - off));
      if (r <= 0) return false;
      off += static_cast<std::size_t>(r);
    }
    return true;
  }

  Handler handler_;
  bool close_immediately_;
  SSL_CTX* ctx_ = nullptr;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stop_{false};
  std::atomic<int> connections_{0};
  std::thread thread_;
};

} // namespace testsupport
