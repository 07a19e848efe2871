#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dnsfp/distance.hpp"
#include "dnsfp/error.hpp"
#include "dnsfp/features.hpp"
#include "dnsfp/parallel.hpp"

namespace dnsfp {

/// Instance store for edit-distance kNN. There is no index structure:
/// variable-length sequences rule out metric trees, so every query scans
/// all references.
class KnnModel {
public:
  KnnModel() = default;
  KnnModel(std::vector<DnsSequence> refs, std::vector<std::string> labels, std::size_t k = 1,
           CostSchedule costs = {})
      : refs_(std::move(refs)), labels_(std::move(labels)), k_(k), costs_(costs),
        scaled_(ScaledCosts::from(costs)) {
    if (refs_.size() != labels_.size()) throw Error("reference/label count mismatch");
    if (refs_.empty()) throw DegenerateTraining("kNN model needs at least one reference");
    if (k_ < 1 || k_ > refs_.size()) throw Error("k must be in [1, number of references]");
    classes_ = labels_;
    std::sort(classes_.begin(), classes_.end());
    classes_.erase(std::unique(classes_.begin(), classes_.end()), classes_.end());
    label_ids_.reserve(labels_.size());
    for (const auto& l : labels_)
      label_ids_.push_back(
          static_cast<std::uint32_t>(std::lower_bound(classes_.begin(), classes_.end(), l) - classes_.begin()));
  }

  const std::vector<DnsSequence>& refs() const noexcept { return refs_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<std::string>& classes() const noexcept { return classes_; }
  std::size_t k() const noexcept { return k_; }
  const CostSchedule& costs() const noexcept { return costs_; }
  const ScaledCosts& scaled_costs() const noexcept { return scaled_; }
  std::uint32_t class_of(std::size_t ref) const noexcept { return label_ids_[ref]; }

private:
  std::vector<DnsSequence> refs_;
  std::vector<std::string> labels_;
  std::size_t k_ = 1;
  CostSchedule costs_;
  ScaledCosts scaled_{};
  std::vector<std::string> classes_;
  std::vector<std::uint32_t> label_ids_;
};

struct Neighbor {
  std::size_t ref;
  std::int64_t scaled_distance;
};

/// The k nearest references, nearest first; equal distances keep reference order.
inline std::vector<Neighbor> knn_neighbors(const KnnModel& m, const DnsSequence& q) {
  std::vector<Neighbor> all(m.refs().size());
  parallel_for(all.size(), [&](std::size_t i) {
    all[i] = {i, dl_distance_scaled(q, m.refs()[i], m.scaled_costs())};
  });
  auto closer = [](const Neighbor& a, const Neighbor& b) {
    return a.scaled_distance != b.scaled_distance ? a.scaled_distance < b.scaled_distance : a.ref < b.ref;
  };
  const auto k = static_cast<std::ptrdiff_t>(m.k());
  std::partial_sort(all.begin(), all.begin() + k, all.end(), closer);
  all.resize(m.k());
  return all;
}

namespace detail {
struct Tally {
  std::size_t votes = 0;
  std::int64_t distance_sum = 0;
};

inline std::vector<Tally> tally(const KnnModel& m, std::span<const Neighbor> nn) {
  std::vector<Tally> t(m.classes().size());
  for (const auto& n : nn) {
    auto& c = t[m.class_of(n.ref)];
    ++c.votes;
    c.distance_sum += n.scaled_distance;
  }
  return t;
}
} // namespace detail

/// Majority vote among the k nearest; vote ties go to the smaller summed
/// distance, then to the lexicographically first label.
inline const std::string& knn_classify(const KnnModel& m, const DnsSequence& q) {
  const auto nn = knn_neighbors(m, q);
  const auto t = detail::tally(m, nn);
  std::size_t best = 0;
  for (std::size_t c = 1; c < t.size(); ++c) {
    const bool more_votes = t[c].votes > t[best].votes;
    const bool closer_tie = t[c].votes == t[best].votes && t[c].distance_sum < t[best].distance_sum;
    if (more_votes || closer_tie) best = c;
  }
  return m.classes()[best];
}

/// Vote fractions over m.classes(); used where a score is needed (open world).
inline std::vector<double> knn_proba(const KnnModel& m, const DnsSequence& q) {
  const auto t = detail::tally(m, knn_neighbors(m, q));
  std::vector<double> p(t.size());
  for (std::size_t c = 0; c < t.size(); ++c)
    p[c] = static_cast<double>(t[c].votes) / static_cast<double>(m.k());
  return p;
}

inline constexpr int kKnnFormatVersion = 1;

inline nlohmann::json to_json(const KnnModel& m) {
  nlohmann::json refs = nlohmann::json::array();
  for (std::size_t i = 0; i < m.refs().size(); ++i) {
    nlohmann::json tokens = nlohmann::json::array();
    for (const auto& t : m.refs()[i].tokens) tokens.push_back({t.is_msg() ? "M" : "G", t.value});
    refs.push_back({{"label", m.labels()[i]}, {"tokens", std::move(tokens)}});
  }
  const auto& c = m.costs();
  return {{"format", "dnsfp-knn"}, {"version", kKnnFormatVersion}, {"k", m.k()},
          {"costs", {c.c_ins, c.c_del, c.c_sub, c.c_trans}}, {"refs", std::move(refs)}};
}

inline KnnModel knn_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dnsfp-knn") throw Error("not a kNN model");
  if (j.at("version").get<int>() != kKnnFormatVersion) throw Error("unsupported kNN model version");
  std::vector<DnsSequence> refs;
  std::vector<std::string> labels;
  for (const auto& r : j.at("refs")) {
    DnsSequence s;
    for (const auto& t : r.at("tokens"))
      s.tokens.push_back(t[0].get<std::string>() == "M" ? Token::msg(t[1].get<std::int64_t>())
                                                        : Token::gap(t[1].get<std::int64_t>()));
    refs.push_back(std::move(s));
    labels.push_back(r.at("label").get<std::string>());
  }
  const auto& c = j.at("costs");
  CostSchedule costs{c[0].get<double>(), c[1].get<double>(), c[2].get<double>(), c[3].get<double>()};
  return KnnModel(std::move(refs), std::move(labels), j.at("k").get<std::size_t>(), costs);
}

} // namespace dnsfp
