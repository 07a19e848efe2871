#pragma once

// Synthetic app-launch DNS traffic with known ground truth.
//
// An app profile is an ordered list of query slots. Each slot resolves one
// domain: a fixed-size request, a response whose size varies slightly from
// launch to launch, a start delay after the previous query and a resolver
// latency. Slots drawn from a shared pool model third-party domains that
// many apps resolve; only those can be answered from a warm cache.
//
// Padding is applied to the modelled DNS message size, which stands in for
// the TLS record size (constant TLS overhead is label-independent).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dnsfp/error.hpp"
#include "dnsfp/rng.hpp"
#include "dnsfp/trace.hpp"

namespace dnsfp {

/// Discretised log-normal: round(median * exp(sigma * N(0,1))), at least `floor`.
struct LogNormal {
  double median = 1.0;
  double sigma = 0.0;

  double sample(Rng& rng) const { return sigma > 0 ? median * std::exp(sigma * rng.normal()) : median; }
  std::int64_t sample_int(Rng& rng, std::int64_t floor = 1) const {
    return std::max<std::int64_t>(floor, std::llround(sample(rng)));
  }
};

/// Message size that varies in whole steps (an extra record, a longer CNAME):
/// median + step * round(spread * N(0,1)), at least 1 byte.
struct SizeDist {
  double median = 1.0;
  double step = 0.0;
  double spread = 0.0;

  std::int64_t sample(Rng& rng) const {
    double v = median;
    if (step > 0 && spread > 0) v += step * std::round(spread * rng.normal());
    return std::max<std::int64_t>(1, std::llround(v));
  }
};

struct QuerySlot {
  std::uint64_t domain_id = 0;
  bool shared = false;     // from the shared third-party pool
  SizeDist request;        // bytes
  SizeDist response;       // bytes
  LogNormal start_delay;   // ms after the previous query's request
  LogNormal latency;       // ms from request to response
};

/// Launch-to-launch variation that is not tied to a single slot.
struct Jitter {
  double swap_probability = 0.0;  // chance each slot trades places with its successor
  double tempo_sigma = 0.0;       // log-normal spread of a per-launch factor on all delays
};

struct AppProfile {
  std::string app_label;
  std::vector<QuerySlot> queries;
  Jitter jitter;
};

struct PaddingMode {
  enum class Kind : std::uint8_t { None, EdnsRecommended, Custom };
  Kind kind = Kind::None;
  std::int64_t block_req = 1;
  std::int64_t block_resp = 1;

  static PaddingMode none() { return {}; }
  /// Requests to multiples of 128 bytes, responses to multiples of 468.
  static PaddingMode edns() { return {Kind::EdnsRecommended, 128, 468}; }
  static PaddingMode custom(std::int64_t req, std::int64_t resp) {
    if (req < 1 || resp < 1) throw Error("padding blocks must be >= 1");
    return {Kind::Custom, req, resp};
  }

  std::int64_t apply(std::int64_t size, Direction d) const noexcept {
    if (kind == Kind::None) return size;
    const std::int64_t block = d == Direction::ClientToResolver ? block_req : block_resp;
    return (size + block - 1) / block * block;
  }
};

struct CacheMode {
  enum class Kind : std::uint8_t { Cold, Warm };
  Kind kind = Kind::Cold;
  double hit_probability = 0.0;  // chance a shared-pool query is answered from cache

  static CacheMode cold() { return {}; }
  static CacheMode warm(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error("cache hit probability must be in [0, 1]");
    return {Kind::Warm, p};
  }
};

/// "none" | "edns" | "custom:<req>,<resp>"
inline PaddingMode parse_padding(std::string_view s) {
  if (s == "none") return PaddingMode::none();
  if (s == "edns") return PaddingMode::edns();
  if (s.starts_with("custom:")) {
    const auto rest = std::string(s.substr(7));
    const auto comma = rest.find(',');
    if (comma != std::string::npos) {
      try {
        return PaddingMode::custom(std::stoll(rest.substr(0, comma)), std::stoll(rest.substr(comma + 1)));
      } catch (const std::logic_error&) {
      }
    }
  }
  throw Error("invalid padding mode '" + std::string(s) + "'");
}

/// "cold" | "warm:<p>"
inline CacheMode parse_cache(std::string_view s) {
  if (s == "cold") return CacheMode::cold();
  if (s.starts_with("warm:")) {
    try {
      return CacheMode::warm(std::stod(std::string(s.substr(5))));
    } catch (const std::logic_error&) {
    }
  }
  throw Error("invalid cache mode '" + std::string(s) + "'");
}

struct ProfileOptions {
  int min_queries = 8;
  int max_queries = 11;
  std::size_t shared_pool_size = 16;
  double request_min = 40, request_max = 100;        // bytes, uniform
  double response_min = 60, response_max = 800;      // bytes, log-uniform medians
  double concurrent_prob = 0.35;                     // start within a few ms of the previous query
  double delay_min = 15, delay_max = 800;            // ms, log-uniform medians
  double latency_min = 8, latency_max = 120;         // ms, log-uniform medians
  double size_step = 16;      // bytes per response-size variant
  double size_spread = 0.5;   // std-dev of the variant index
  double delay_jitter = 0.5;
  double latency_jitter = 0.5;
  double swap_probability = 0.8;  // adjacent queries issued in either order
  double tempo_sigma = 0.8;       // per-trace log-normal time scale
};

namespace detail {
inline double log_uniform(Rng& rng, double lo, double hi) {
  return std::exp(rng.uniform(std::log(lo), std::log(hi)));
}
} // namespace detail

/// Deterministic profiles "A1".."An". A fraction `overlap` of each app's
/// query slots comes from the shared pool, the rest are unique to the app.
inline std::vector<AppProfile> generate_profiles(std::size_t n_apps, std::uint64_t seed, double overlap,
                                                 const ProfileOptions& opt = {}) {
  if (n_apps < 1) throw Error("need at least one app");
  if (!(overlap >= 0.0 && overlap <= 1.0)) throw Error("overlap must be in [0, 1]");
  Rng pool_rng(derive_seed(seed, {0x706f6f6cull}));
  auto size_slot = [&](Rng& rng, QuerySlot& q) {
    q.request = {std::round(rng.uniform(opt.request_min, opt.request_max)), 0.0, 0.0};
    q.response = {std::round(detail::log_uniform(rng, opt.response_min, opt.response_max)), opt.size_step,
                  opt.size_spread};
    q.latency = {detail::log_uniform(rng, opt.latency_min, opt.latency_max), opt.latency_jitter};
  };
  std::vector<QuerySlot> pool(opt.shared_pool_size);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    pool[i].domain_id = i;
    pool[i].shared = true;
    size_slot(pool_rng, pool[i]);
  }

  std::vector<AppProfile> out;
  std::uint64_t next_domain = pool.size();
  for (std::size_t a = 0; a < n_apps; ++a) {
    Rng rng(derive_seed(seed, {0x617070ull, a}));
    AppProfile p;
    p.app_label = "A" + std::to_string(a + 1);
    p.jitter.swap_probability = opt.swap_probability;
    p.jitter.tempo_sigma = opt.tempo_sigma;
    const auto n_q = static_cast<std::size_t>(rng.between(opt.min_queries, opt.max_queries));
    auto n_shared = static_cast<std::size_t>(std::llround(overlap * static_cast<double>(n_q)));
    n_shared = std::min(n_shared, pool.size());
    std::vector<std::size_t> picks(pool.size());
    for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
    rng.shuffle(picks);
    for (std::size_t i = 0; i < n_q; ++i) {
      QuerySlot q;
      if (i < n_shared) {
        q = pool[picks[i]];
      } else {
        q.domain_id = next_domain++;
        size_slot(rng, q);
      }
      const double d = rng.bernoulli(opt.concurrent_prob) ? rng.uniform(0.5, 3.0)
                                                          : detail::log_uniform(rng, opt.delay_min, opt.delay_max);
      q.start_delay = {d, opt.delay_jitter};
      p.queries.push_back(q);
    }
    // Interleave shared and unique slots deterministically.
    rng.shuffle(p.queries);
    out.push_back(std::move(p));
  }
  return out;
}

/// One launch of `p`. Under Cold every slot yields a request and a response;
/// under Warm a shared slot is dropped with the hit probability, leaving the
/// timing of the remaining events unchanged.
inline Trace generate_trace(const AppProfile& p, const PaddingMode& pad, const CacheMode& cache, std::uint64_t seed,
                            std::string trace_id = {}) {
  if (p.queries.empty()) throw Error("profile '" + p.app_label + "' has no queries");
  Rng rng(seed);
  Rng cache_rng(derive_seed(seed, {0x6361636865ull}));  // hits never shift the timing stream
  struct Pending {
    double t;
    int order;
    DnsEvent e;
  };
  std::vector<Pending> pending;
  std::vector<std::size_t> slots(p.queries.size());
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  for (std::size_t i = 0; i + 1 < slots.size(); ++i)
    if (rng.bernoulli(p.jitter.swap_probability)) std::swap(slots[i], slots[i + 1]);
  const double tempo = LogNormal{1.0, p.jitter.tempo_sigma}.sample(rng);
  double start = 0.0;
  int order = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& q = p.queries[slots[i]];
    if (i > 0) start += tempo * q.start_delay.sample(rng);
    const double latency = tempo * q.latency.sample(rng);
    const std::int64_t req = q.request.sample(rng);
    const std::int64_t resp = q.response.sample(rng);
    const bool hit = cache.kind == CacheMode::Kind::Warm && q.shared && cache_rng.bernoulli(cache.hit_probability);
    if (hit) continue;
    pending.push_back({start, order++, {0, Direction::ClientToResolver, pad.apply(req, Direction::ClientToResolver)}});
    pending.push_back({start + latency, order++, {0, Direction::ResolverToClient, pad.apply(resp, Direction::ResolverToClient)}});
  }
  if (pending.empty()) throw Error("every query of '" + p.app_label + "' was a cache hit");
  std::stable_sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) {
    return a.t != b.t ? a.t < b.t : a.order < b.order;
  });
  Trace t;
  t.trace_id = trace_id.empty() ? p.app_label + "-" + std::to_string(seed) : std::move(trace_id);
  t.app_label = p.app_label;
  t.resolver_id = "synthetic";
  t.protocol = Protocol::DoT;
  t.collected_at = "2020-04-28T00:00:00Z";
  const double t0 = pending.front().t;
  for (const auto& pe : pending) {
    DnsEvent e = pe.e;
    e.t_ms = static_cast<std::int64_t>(std::floor(pe.t - t0));
    t.events.push_back(e);
  }
  return t;
}

/// traces_per_app launches of every profile; trace ids are "<app>-<n>".
inline Dataset generate_dataset(const std::vector<AppProfile>& profiles, std::size_t traces_per_app,
                                const PaddingMode& pad, const CacheMode& cache, std::uint64_t seed) {
  std::vector<Trace> traces;
  traces.reserve(profiles.size() * traces_per_app);
  for (std::size_t a = 0; a < profiles.size(); ++a)
    for (std::size_t i = 0; i < traces_per_app; ++i)
      traces.push_back(generate_trace(profiles[a], pad, cache, derive_seed(seed, {0x74726163ull, a, i}),
                                      profiles[a].app_label + "-" + std::to_string(i)));
  return Dataset(std::move(traces));
}

} // namespace dnsfp
