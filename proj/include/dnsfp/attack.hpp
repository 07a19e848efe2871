#pragma once

// The four traffic-analysis attacks behind one train/predict surface:
//   freq   - record-size frequency distribution  -> random forest
//   ngrams - record and burst uni/bigrams        -> random forest
//   segram - uni/bi/trigrams of the DNS sequence  -> random forest
//   bnr    - DNS sequences of responses           -> edit-distance kNN

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dnsfp/features.hpp"
#include "dnsfp/forest.hpp"
#include "dnsfp/knn.hpp"
#include "dnsfp/parallel.hpp"
#include "dnsfp/trace.hpp"

namespace dnsfp {

enum class Attack : std::uint8_t { FreqDist, NGrams, BnR, Segram };

inline std::string_view to_string(Attack a) noexcept {
  switch (a) {
    case Attack::FreqDist: return "freq";
    case Attack::NGrams: return "ngrams";
    case Attack::BnR: return "bnr";
    case Attack::Segram: return "segram";
  }
  return "?";
}

inline std::optional<Attack> parse_attack(std::string_view s) noexcept {
  if (s == "freq") return Attack::FreqDist;
  if (s == "ngrams") return Attack::NGrams;
  if (s == "bnr") return Attack::BnR;
  if (s == "segram") return Attack::Segram;
  return std::nullopt;
}

struct AttackConfig {
  Attack attack = Attack::Segram;
  ForestParams forest;
  std::size_t k = 1;         // B&R neighbours
  CostSchedule costs;        // B&R edit costs
  int segram_threshold = 5;  // Segram gap inclusion bin

  static AttackConfig of(Attack a) {
    AttackConfig c;
    c.attack = a;
    return c;
  }
};

using TraceRefs = std::vector<const Trace*>;

inline TraceRefs refs_of(const Dataset& ds) {
  TraceRefs out;
  out.reserve(ds.size());
  for (const auto& t : ds.traces()) out.push_back(&t);
  return out;
}

inline TraceRefs refs_of(const Dataset& ds, std::span<const std::size_t> indices) {
  TraceRefs out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(&ds[i]);
  return out;
}

/// A model trained for one attack.
class TrainedAttack {
public:
  static TrainedAttack train(std::span<const Trace* const> traces, std::span<const std::string> labels,
                             const AttackConfig& cfg) {
    if (traces.size() != labels.size()) throw Error("trace/label count mismatch");
    TrainedAttack out;
    out.cfg_ = cfg;
    if (cfg.attack == Attack::BnR) {
      std::vector<DnsSequence> seqs(traces.size());
      for (std::size_t i = 0; i < traces.size(); ++i) seqs[i] = build_dns_sequence(*traces[i], GapPolicy::bnr());
      out.model_ = KnnModel(std::move(seqs), {labels.begin(), labels.end()}, cfg.k, cfg.costs);
      return out;
    }
    VectorModel vm;
    vm.vocab = build_vocabulary(traces, feature_attack(cfg.attack), GapPolicy::segram(cfg.segram_threshold));
    std::vector<FeatureVector> X(traces.size());
    parallel_for(traces.size(), [&](std::size_t i) { X[i] = extract(*traces[i], vm.vocab); });
    vm.forest = train_forest(X, labels, cfg.forest, vm.vocab.size());
    out.model_ = std::move(vm);
    return out;
  }

  Attack attack() const noexcept { return cfg_.attack; }

  const std::vector<std::string>& classes() const {
    if (auto* k = std::get_if<KnnModel>(&model_)) return k->classes();
    return std::get<VectorModel>(model_).forest.classes();
  }

  /// Class scores aligned with classes(): forest probabilities or kNN vote fractions.
  std::vector<double> predict_proba(const Trace& t) const {
    if (auto* k = std::get_if<KnnModel>(&model_)) return knn_proba(*k, build_dns_sequence(t, GapPolicy::bnr()));
    const auto& vm = std::get<VectorModel>(model_);
    return dnsfp::predict_proba(vm.forest, extract(t, vm.vocab));
  }

  std::string predict(const Trace& t) const {
    if (auto* k = std::get_if<KnnModel>(&model_)) return knn_classify(*k, build_dns_sequence(t, GapPolicy::bnr()));
    const auto& vm = std::get<VectorModel>(model_);
    return dnsfp::predict(vm.forest, extract(t, vm.vocab));
  }

  /// Batch prediction. Forest attacks fan out across queries; kNN already
  /// parallelises inside each query.
  std::vector<std::string> predict_all(std::span<const Trace* const> queries) const {
    std::vector<std::string> out(queries.size());
    if (std::holds_alternative<KnnModel>(model_)) {
      for (std::size_t i = 0; i < queries.size(); ++i) out[i] = predict(*queries[i]);
    } else {
      parallel_for(queries.size(), [&](std::size_t i) { out[i] = predict(*queries[i]); });
    }
    return out;
  }

  std::vector<std::vector<double>> predict_proba_all(std::span<const Trace* const> queries) const {
    std::vector<std::vector<double>> out(queries.size());
    if (std::holds_alternative<KnnModel>(model_)) {
      for (std::size_t i = 0; i < queries.size(); ++i) out[i] = predict_proba(*queries[i]);
    } else {
      parallel_for(queries.size(), [&](std::size_t i) { out[i] = predict_proba(*queries[i]); });
    }
    return out;
  }

private:
  struct VectorModel {
    Vocabulary vocab;
    ForestModel forest;
  };

  static FeatureAttack feature_attack(Attack a) {
    switch (a) {
      case Attack::FreqDist: return FeatureAttack::FreqDist;
      case Attack::NGrams: return FeatureAttack::NGrams;
      default: return FeatureAttack::Segram;
    }
  }

  AttackConfig cfg_;
  std::variant<VectorModel, KnnModel> model_;
};

} // namespace dnsfp
