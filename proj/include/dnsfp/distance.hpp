#pragma once

// Damerau-Levenshtein distance between DNS sequences (optimal string
// alignment variant: adjacent transpositions, no substring edited twice).
//
// Costs are accepted as decimals but the recurrence runs on integers scaled
// by kCostScale, so distance comparisons in the kNN classifier are exact and
// tie-breaking does not depend on floating-point summation order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dnsfp/features.hpp"
#include "dnsfp/parallel.hpp"

namespace dnsfp {

inline constexpr std::int64_t kCostScale = 1'000'000;

struct CostSchedule {
  double c_ins = 1.0;
  double c_del = 1.0;
  double c_sub = 1.0;
  double c_trans = 1.0;

  /// Non-fatal sanity remarks (a transposition dearer than delete+insert is never used).
  std::vector<std::string> warnings() const {
    std::vector<std::string> w;
    if (c_trans > c_ins + c_del) w.emplace_back("transposition cost exceeds insertion + deletion");
    return w;
  }

  friend bool operator==(const CostSchedule&, const CostSchedule&) = default;
};

struct ScaledCosts {
  std::int64_t ins, del, sub, trans;

  static ScaledCosts from(const CostSchedule& c) {
    auto scale = [](double v, const char* what) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw Error(std::string("invalid ") + what + " cost");
      return static_cast<std::int64_t>(std::llround(v * static_cast<double>(kCostScale)));
    };
    return {scale(c.c_ins, "insertion"), scale(c.c_del, "deletion"), scale(c.c_sub, "substitution"),
            scale(c.c_trans, "transposition")};
  }
};

/// Integer-scaled distance; divide by kCostScale for the cost-unit value.
/// O(|a|·|b|) time, O(|b|) memory (three rolling rows of the memo table).
template <typename T>
std::int64_t dl_distance_scaled(std::span<const T> a, std::span<const T> b, const ScaledCosts& c) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<std::int64_t> prev2(m + 1), prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<std::int64_t>(j) * c.ins;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<std::int64_t>(i) * c.del;
    for (std::size_t j = 1; j <= m; ++j) {
      const bool same = a[i - 1] == b[j - 1];
      std::int64_t best = prev[j - 1] + (same ? 0 : c.sub);
      best = std::min(best, prev[j] + c.del);
      best = std::min(best, cur[j - 1] + c.ins);
      if (i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1])
        best = std::min(best, prev2[j - 2] + c.trans);
      cur[j] = best;
    }
    std::swap(prev2, prev);
    std::swap(prev, cur);
  }
  return prev[m];
}

inline std::int64_t dl_distance_scaled(const DnsSequence& a, const DnsSequence& b, const ScaledCosts& c) {
  return dl_distance_scaled<Token>(a.tokens, b.tokens, c);
}

inline double dl_distance(const DnsSequence& a, const DnsSequence& b, const CostSchedule& costs = {}) {
  return static_cast<double>(dl_distance_scaled(a, b, ScaledCosts::from(costs))) /
         static_cast<double>(kCostScale);
}

/// Row-major |queries| x |refs| matrix.
struct DistanceMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  friend bool operator==(const DistanceMatrix&, const DistanceMatrix&) = default;
};

inline DistanceMatrix dl_distance_matrix(std::span<const DnsSequence> queries,
                                         std::span<const DnsSequence> refs,
                                         const CostSchedule& costs = {}) {
  const auto scaled = ScaledCosts::from(costs);
  DistanceMatrix out{queries.size(), refs.size(), std::vector<double>(queries.size() * refs.size())};
  parallel_for(out.values.size(), [&](std::size_t cell) {
    const std::size_t i = cell / out.cols;
    const std::size_t j = cell % out.cols;
    out.values[cell] = static_cast<double>(dl_distance_scaled(queries[i], refs[j], scaled)) /
                       static_cast<double>(kCostScale);
  });
  return out;
}

} // namespace dnsfp
