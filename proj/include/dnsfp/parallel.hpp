#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace dnsfp {

namespace detail {
inline std::atomic<unsigned>& thread_cap() {
  static std::atomic<unsigned> cap{0};
  return cap;
}
} // namespace detail

/// Process-wide cap on worker threads; 0 means "all available cores".
inline void set_max_threads(unsigned n) noexcept { detail::thread_cap().store(n); }

inline unsigned max_threads() noexcept {
  const unsigned cap = detail::thread_cap().load();
  if (cap != 0) return cap;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) over up to min(cap, max_threads()) workers.
/// Each index is processed exactly once; callers write results into slot i
/// so the assembled output does not depend on scheduling. The first
/// exception thrown by any task is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t cap, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>({max_threads(), n, std::max<std::size_t>(cap, 1)});
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  parallel_for(n, max_threads(), std::forward<Fn>(fn));
}

} // namespace dnsfp
