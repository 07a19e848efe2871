#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dnsfp/attack.hpp"
#include "dnsfp/error.hpp"
#include "dnsfp/rng.hpp"
#include "dnsfp/trace.hpp"

namespace dnsfp {

// ---------------------------------------------------------------------------
// Reports

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct FoldMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

struct EvalReport {
  std::string attack;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::string> labels;                  // confusion row/column order
  std::map<std::string, ClassMetrics> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<FoldMetrics> fold_metrics;
  std::uint64_t seed = 0;
};

/// Scores predictions against ground truth. Classes are the sorted union of
/// true and predicted labels; an undefined precision or recall counts as 0.
inline EvalReport score_predictions(std::span<const std::string> truth, std::span<const std::string> predicted) {
  if (truth.size() != predicted.size()) throw Error("truth/prediction count mismatch");
  EvalReport r;
  std::set<std::string> all(truth.begin(), truth.end());
  all.insert(predicted.begin(), predicted.end());
  r.labels.assign(all.begin(), all.end());
  const std::size_t n = r.labels.size();
  auto idx = [&](const std::string& l) {
    return static_cast<std::size_t>(std::lower_bound(r.labels.begin(), r.labels.end(), l) - r.labels.begin());
  };
  r.confusion.assign(n, std::vector<std::size_t>(n, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) ++r.confusion[idx(truth[i])][idx(predicted[i])];

  std::size_t correct = 0;
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row += r.confusion[c][j];
      col += r.confusion[j][c];
    }
    const std::size_t tp = r.confusion[c][c];
    correct += tp;
    ClassMetrics m;
    m.support = row;
    m.precision = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    m.recall = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    m.f1 = (m.precision + m.recall) > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    f1_sum += m.f1;
    r.per_class[r.labels[c]] = m;
  }
  r.accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(truth.size());
  r.macro_f1 = n ? f1_sum / static_cast<double>(n) : 0.0;
  return r;
}

/// Called with exactly the traces a model is built from and the traces it is
/// then asked to classify; tests use it to prove train/test separation.
struct EvalHooks {
  std::function<void(const TraceRefs& train, const TraceRefs& test)> on_split;
};

// ---------------------------------------------------------------------------
// Cross-validation

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified k-fold: each class is shuffled and dealt round-robin, with the
/// starting fold rotated per class so fold sizes stay balanced.
inline std::vector<Fold> stratified_kfold(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error("need at least 2 folds");
  for (const auto& [label, members] : ds.label_index())
    if (members.size() < k) throw ClassTooSmall(label);
  std::vector<std::size_t> fold_of(ds.size(), 0);
  Rng rng(derive_seed(seed, {0x6b666f6c64ull}));
  std::size_t offset = 0;
  for (const auto& [label, members] : ds.label_index()) {
    auto shuffled = members;
    rng.shuffle(shuffled);
    for (std::size_t i = 0; i < shuffled.size(); ++i) fold_of[shuffled[i]] = (offset + i) % k;
    offset = (offset + shuffled.size()) % k;
  }
  std::vector<Fold> folds(k);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t f = 0; f < k; ++f) (f == fold_of[i] ? folds[f].test : folds[f].train).push_back(i);
  return folds;
}

namespace detail {

inline std::vector<std::string> labels_of(const TraceRefs& traces) {
  std::vector<std::string> out;
  out.reserve(traces.size());
  for (const auto* t : traces) out.push_back(t->app_label);
  return out;
}

inline AttackConfig seeded(AttackConfig cfg, std::uint64_t seed, std::uint64_t stream) {
  cfg.forest.seed = derive_seed(seed, {stream});
  return cfg;
}

} // namespace detail

/// Closed world: for every fold, vocabulary and model come from the fold's
/// training part only; predictions on the held-out part are pooled.
inline EvalReport closed_world(const Dataset& ds, const AttackConfig& cfg, std::size_t k, std::uint64_t seed,
                               const EvalHooks& hooks = {}) {
  const auto folds = stratified_kfold(ds, k, seed);
  std::vector<std::string> truth, predicted;
  std::vector<FoldMetrics> fold_metrics;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto train = refs_of(ds, folds[f].train);
    const auto test = refs_of(ds, folds[f].test);
    if (hooks.on_split) hooks.on_split(train, test);
    const auto model = TrainedAttack::train(train, detail::labels_of(train), detail::seeded(cfg, seed, f));
    const auto pred = model.predict_all(test);
    const auto fold_truth = detail::labels_of(test);
    const auto fold_report = score_predictions(fold_truth, pred);
    fold_metrics.push_back({fold_report.accuracy, fold_report.macro_f1, train.size(), test.size()});
    truth.insert(truth.end(), fold_truth.begin(), fold_truth.end());
    predicted.insert(predicted.end(), pred.begin(), pred.end());
  }
  auto report = score_predictions(truth, predicted);
  report.attack = std::string(to_string(cfg.attack));
  report.fold_metrics = std::move(fold_metrics);
  report.seed = seed;
  return report;
}

/// Train on one resolver's traces, classify another's. No folding.
inline EvalReport cross_resolver(const Dataset& train_ds, const Dataset& test_ds, const AttackConfig& cfg,
                                 std::uint64_t seed = 0, const EvalHooks& hooks = {}) {
  const auto a = train_ds.labels();
  const auto b = test_ds.labels();
  std::vector<std::string> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  if (common.empty()) throw NoLabelOverlap("training and test datasets share no app label");
  const auto train = refs_of(train_ds);
  const auto test = refs_of(test_ds);
  if (hooks.on_split) hooks.on_split(train, test);
  const auto model = TrainedAttack::train(train, detail::labels_of(train), detail::seeded(cfg, seed, 0));
  const auto truth = detail::labels_of(test);
  auto report = score_predictions(truth, model.predict_all(test));
  report.attack = std::string(to_string(cfg.attack));
  report.fold_metrics.push_back({report.accuracy, report.macro_f1, train.size(), test.size()});
  report.seed = seed;
  return report;
}

// ---------------------------------------------------------------------------
// Open world

inline const std::string kUnmonitoredLabel = "<unmonitored>";

struct OpenWorldRole {
  std::vector<std::string> apps;  // candidate pool
  std::size_t n_apps = 0;
  std::size_t train_per_app = 0;
  std::size_t test_per_app = 0;
};

struct OpenWorldSplit {
  OpenWorldRole monitored{{}, 10, 30, 10};
  OpenWorldRole unmonitored{{}, 100, 3, 0};
  OpenWorldRole unknown{{}, 100, 0, 12};

  /// 10 monitored (30 train / 10 test), 100 unmonitored (3 train), 100 unknown (12 test).
  static OpenWorldSplit standard() { return {}; }
  /// The smaller caching variant: 20 (8/2), 80 (2), 120 (4).
  static OpenWorldSplit with_caching() {
    OpenWorldSplit s;
    s.monitored = {{}, 20, 8, 2};
    s.unmonitored = {{}, 80, 2, 0};
    s.unknown = {{}, 120, 0, 4};
    return s;
  }

  std::size_t training_size() const {
    return monitored.n_apps * monitored.train_per_app + unmonitored.n_apps * unmonitored.train_per_app;
  }

  void validate() const {
    auto check = [](const OpenWorldRole& r, const char* name) {
      if (r.apps.size() < r.n_apps)
        throw InsufficientData(std::string(name) + " pool has " + std::to_string(r.apps.size()) +
                               " apps, need " + std::to_string(r.n_apps));
    };
    check(monitored, "monitored");
    check(unmonitored, "unmonitored");
    check(unknown, "unknown");
    if (monitored.n_apps == 0) throw InsufficientData("open world needs monitored apps");
    std::set<std::string> seen;
    for (const auto* role : {&monitored, &unmonitored, &unknown})
      for (const auto& a : role->apps)
        if (!seen.insert(a).second) throw Error("app '" + a + "' appears in more than one open-world role");
  }
};

struct OpenWorldSample {
  TraceRefs train;
  std::vector<std::string> train_labels;
  TraceRefs test;
  std::vector<std::string> test_labels;   // monitored app or kUnmonitoredLabel
  std::vector<bool> test_monitored;
  std::vector<std::string> monitored_apps;
};

namespace detail {

inline std::vector<std::string> choose_apps(const OpenWorldRole& role, Rng& rng) {
  auto pool = role.apps;
  std::sort(pool.begin(), pool.end());
  rng.shuffle(pool);
  pool.resize(role.n_apps);
  std::sort(pool.begin(), pool.end());
  return pool;
}

inline std::vector<std::size_t> choose_traces(const Dataset& ds, const std::string& app, std::size_t n, Rng& rng) {
  auto it = ds.label_index().find(app);
  if (it == ds.label_index().end() || it->second.size() < n)
    throw InsufficientData("app '" + app + "' has fewer than " + std::to_string(n) + " traces");
  auto idx = it->second;
  rng.shuffle(idx);
  idx.resize(n);
  return idx;
}

} // namespace detail

/// Draws one open-world train/test sample. Unmonitored and unknown sets are
/// fixed by the seed; monitored apps and their traces are redrawn per iteration.
inline OpenWorldSample sample_open_world(const OpenWorldSplit& split, const Dataset& ds, std::uint64_t seed,
                                         std::uint64_t iteration) {
  split.validate();
  OpenWorldSample s;
  Rng fixed(derive_seed(seed, {0x6f70656eull}));
  const auto unmon = detail::choose_apps(split.unmonitored, fixed);
  const auto unknown = detail::choose_apps(split.unknown, fixed);
  for (const auto& app : unmon)
    for (auto i : detail::choose_traces(ds, app, split.unmonitored.train_per_app, fixed)) {
      s.train.push_back(&ds[i]);
      s.train_labels.push_back(kUnmonitoredLabel);
    }
  std::vector<const Trace*> unknown_test;
  for (const auto& app : unknown)
    for (auto i : detail::choose_traces(ds, app, split.unknown.test_per_app, fixed)) unknown_test.push_back(&ds[i]);

  Rng per_iter(derive_seed(seed, {0x6d6f6eull, iteration}));
  s.monitored_apps = detail::choose_apps(split.monitored, per_iter);
  for (const auto& app : s.monitored_apps) {
    const auto idx =
        detail::choose_traces(ds, app, split.monitored.train_per_app + split.monitored.test_per_app, per_iter);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (j < split.monitored.train_per_app) {
        s.train.push_back(&ds[idx[j]]);
        s.train_labels.push_back(app);
      } else {
        s.test.push_back(&ds[idx[j]]);
        s.test_labels.push_back(app);
        s.test_monitored.push_back(true);
      }
    }
  }
  for (const auto* t : unknown_test) {
    s.test.push_back(t);
    s.test_labels.push_back(kUnmonitoredLabel);
    s.test_monitored.push_back(false);
  }
  return s;
}

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct PrCurve {
  std::vector<PrPoint> points;    // thresholds strictly increasing
  PrPoint best;                   // max F1, first on ties
  std::vector<PrPoint> baseline;  // random classifier at the monitored test fraction
  double monitored_fraction = 0.0;
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  std::string attack;
};

inline std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 100; ++i) t.push_back(i / 100.0);
  return t;
}

namespace detail {
inline double f1_of(double p, double r) { return (p + r) > 0 ? 2 * p * r / (p + r) : 0.0; }
} // namespace detail

/// Binary open world: a trace is flagged "monitored" when the summed
/// probability of the monitored classes reaches the threshold. Precision and
/// recall are averaged over `iterations` monitored-set draws; a threshold at
/// which no iteration flags anything has no precision and is left out.
inline PrCurve open_world_binary(const OpenWorldSplit& split, const Dataset& ds, const AttackConfig& cfg,
                                 std::span<const double> thresholds, std::size_t iterations, std::uint64_t seed,
                                 const EvalHooks& hooks = {}) {
  if (iterations < 1) throw Error("need at least one iteration");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] > thresholds[i - 1])) throw Error("thresholds must be strictly increasing");
  const std::size_t nt = thresholds.size();
  std::vector<double> precision_sum(nt, 0.0), recall_sum(nt, 0.0);
  std::vector<std::size_t> precision_n(nt, 0);
  double fraction_sum = 0.0;

  for (std::size_t it = 0; it < iterations; ++it) {
    const auto s = sample_open_world(split, ds, seed, it);
    if (hooks.on_split) hooks.on_split(s.train, s.test);
    const auto model = TrainedAttack::train(s.train, s.train_labels, detail::seeded(cfg, seed, it));
    const auto probs = model.predict_proba_all(s.test);
    const auto& classes = model.classes();
    std::vector<double> score(s.test.size(), 0.0);
    for (std::size_t q = 0; q < s.test.size(); ++q)
      for (std::size_t c = 0; c < classes.size(); ++c)
        if (classes[c] != kUnmonitoredLabel) score[q] += probs[q][c];
    const auto positives = static_cast<std::size_t>(std::count(s.test_monitored.begin(), s.test_monitored.end(), true));
    fraction_sum += static_cast<double>(positives) / static_cast<double>(s.test.size());
    for (std::size_t ti = 0; ti < nt; ++ti) {
      std::size_t flagged = 0, tp = 0;
      for (std::size_t q = 0; q < score.size(); ++q) {
        // Scores are sums of doubles; the tolerance keeps exact-threshold hits flagged.
        if (score[q] >= thresholds[ti] - 1e-12) {
          ++flagged;
          if (s.test_monitored[q]) ++tp;
        }
      }
      if (flagged) {
        precision_sum[ti] += static_cast<double>(tp) / static_cast<double>(flagged);
        ++precision_n[ti];
      }
      recall_sum[ti] += positives ? static_cast<double>(tp) / static_cast<double>(positives) : 0.0;
    }
  }

  PrCurve curve;
  curve.iterations = iterations;
  curve.seed = seed;
  curve.attack = std::string(to_string(cfg.attack));
  curve.monitored_fraction = fraction_sum / static_cast<double>(iterations);
  for (std::size_t ti = 0; ti < nt; ++ti) {
    if (precision_n[ti] > 0) {
      PrPoint p;
      p.threshold = thresholds[ti];
      p.precision = precision_sum[ti] / static_cast<double>(precision_n[ti]);
      p.recall = recall_sum[ti] / static_cast<double>(iterations);
      p.f1 = detail::f1_of(p.precision, p.recall);
      if (curve.points.empty() || p.f1 > curve.best.f1) curve.best = p;
      curve.points.push_back(p);
    }
    // A uniform random score flags a fraction (1 - t) of traces; its precision
    // is the monitored fraction regardless of the threshold.
    const double recall = 1.0 - thresholds[ti];
    if (recall > 0.0) {
      PrPoint b{thresholds[ti], curve.monitored_fraction, recall, 0.0};
      b.f1 = detail::f1_of(b.precision, b.recall);
      curve.baseline.push_back(b);
    }
  }
  return curve;
}

/// Multi-class open world: monitored apps plus one aggregate class that
/// covers unmonitored training apps and unknown test apps. Macro-F1 is the
/// headline figure because the test set is imbalanced.
inline EvalReport open_world_multiclass(const OpenWorldSplit& split, const Dataset& ds, const AttackConfig& cfg,
                                        std::uint64_t seed, const EvalHooks& hooks = {}) {
  const auto s = sample_open_world(split, ds, seed, 0);
  if (hooks.on_split) hooks.on_split(s.train, s.test);
  const auto model = TrainedAttack::train(s.train, s.train_labels, detail::seeded(cfg, seed, 0));
  auto report = score_predictions(s.test_labels, model.predict_all(s.test));
  report.attack = std::string(to_string(cfg.attack));
  report.fold_metrics.push_back({report.accuracy, report.macro_f1, s.train.size(), s.test.size()});
  report.seed = seed;
  return report;
}

// ---------------------------------------------------------------------------
// Runtime benchmark

struct BenchmarkEntry {
  std::string attack;
  std::string protocol;
  std::string resolver;
  std::size_t n_queries = 0;
  std::size_t n_train = 0;
  std::size_t repeats = 0;
  double mean_seconds = 0.0;
  double stddev_seconds = 0.0;
  double relative_stddev = 0.0;
  double train_seconds = 0.0;
};

struct BenchmarkReport {
  std::vector<BenchmarkEntry> entries;
  std::uint64_t seed = 0;
};

/// Per (protocol, resolver) group: holds out one trace from each of
/// n_queries distinct apps, trains on the rest, and times classification of
/// the held-out traces (feature extraction or sequence construction
/// included) `repeats` times. Training time is reported separately.
inline BenchmarkReport benchmark(const Dataset& ds, std::span<const AttackConfig> attacks, std::size_t n_queries,
                                 std::size_t repeats, std::uint64_t seed) {
  if (repeats < 1) throw Error("repeats must be >= 1");
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ds.size(); ++i)
    groups[{std::string(to_string(ds[i].protocol)), ds[i].resolver_id}].push_back(i);

  using clock = std::chrono::steady_clock;
  BenchmarkReport report;
  report.seed = seed;
  for (const auto& [key, members] : groups) {
    std::map<std::string, std::vector<std::size_t>> by_app;
    for (auto i : members) by_app[ds[i].app_label].push_back(i);
    if (by_app.size() < n_queries)
      throw InsufficientData("group " + key.first + "/" + key.second + " has " + std::to_string(by_app.size()) +
                             " apps, need " + std::to_string(n_queries) + " distinct apps");
    Rng rng(derive_seed(seed, {fnv1a(key.first + "/" + key.second)}));
    std::vector<std::string> apps;
    for (const auto& [app, _] : by_app) apps.push_back(app);
    rng.shuffle(apps);
    apps.resize(n_queries);
    std::set<std::size_t> held;
    for (const auto& app : apps) {
      const auto& idx = by_app[app];
      held.insert(idx[rng.below(idx.size())]);
    }
    TraceRefs train, queries;
    for (auto i : members) (held.count(i) ? queries : train).push_back(&ds[i]);
    const auto train_labels = detail::labels_of(train);

    for (const auto& cfg : attacks) {
      BenchmarkEntry e;
      e.attack = std::string(to_string(cfg.attack));
      e.protocol = key.first;
      e.resolver = key.second;
      e.n_queries = queries.size();
      e.n_train = train.size();
      e.repeats = repeats;
      const auto t0 = clock::now();
      const auto model = TrainedAttack::train(train, train_labels, detail::seeded(cfg, seed, 0));
      e.train_seconds = std::chrono::duration<double>(clock::now() - t0).count();
      std::vector<double> times;
      std::size_t sink = 0;
      for (std::size_t r = 0; r < repeats; ++r) {
        const auto start = clock::now();
        const auto pred = model.predict_all(queries);
        times.push_back(std::chrono::duration<double>(clock::now() - start).count());
        sink += pred.size();
      }
      if (sink != repeats * queries.size()) throw Error("benchmark lost predictions");
      double mean = 0.0;
      for (double t : times) mean += t;
      mean /= static_cast<double>(times.size());
      double var = 0.0;
      for (double t : times) var += (t - mean) * (t - mean);
      e.mean_seconds = mean;
      e.stddev_seconds = times.size() > 1 ? std::sqrt(var / static_cast<double>(times.size() - 1)) : 0.0;
      e.relative_stddev = mean > 0 ? e.stddev_seconds / mean : 0.0;
      report.entries.push_back(e);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [label, m] : r.per_class)
    per_class[label] = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
  nlohmann::json folds = nlohmann::json::array();
  for (std::size_t i = 0; i < r.fold_metrics.size(); ++i) {
    const auto& f = r.fold_metrics[i];
    folds.push_back({{"fold", i}, {"accuracy", f.accuracy}, {"macro_f1", f.macro_f1}, {"n_train", f.n_train},
                     {"n_test", f.n_test}});
  }
  return {{"attack", r.attack}, {"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}, {"labels", r.labels},
          {"per_class", per_class}, {"confusion", r.confusion}, {"fold_metrics", folds}, {"seed", r.seed}};
}

inline nlohmann::json to_json(const PrPoint& p) {
  return {{"threshold", p.threshold}, {"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
}

inline nlohmann::json to_json(const PrCurve& c) {
  nlohmann::json points = nlohmann::json::array(), baseline = nlohmann::json::array();
  for (const auto& p : c.points) points.push_back(to_json(p));
  for (const auto& p : c.baseline) baseline.push_back(to_json(p));
  return {{"attack", c.attack}, {"best", to_json(c.best)}, {"points", points}, {"baseline", baseline},
          {"monitored_fraction", c.monitored_fraction}, {"iterations", c.iterations}, {"seed", c.seed}};
}

/// threshold,precision,recall,f1 rows.
inline void write_pr_csv(std::ostream& out, std::span<const PrPoint> points) {
  out << "threshold,precision,recall,f1\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.2f,%.6f,%.6f,%.6f\n", p.threshold, p.precision, p.recall, p.f1);
    out << buf;
  }
}

inline nlohmann::json to_json(const BenchmarkReport& r) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"attack", e.attack}, {"protocol", e.protocol}, {"resolver", e.resolver},
                       {"n_queries", e.n_queries}, {"n_train", e.n_train}, {"repeats", e.repeats},
                       {"mean_seconds", e.mean_seconds}, {"stddev_seconds", e.stddev_seconds},
                       {"relative_stddev", e.relative_stddev}, {"train_seconds", e.train_seconds}});
  return {{"entries", entries}, {"seed", r.seed}};
}

} // namespace dnsfp
