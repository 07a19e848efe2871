#include <gtest/gtest.h>

#include <set>

#include "dnsfp/eval.hpp"
#include "dnsfp/synth.hpp"

using namespace dnsfp;

namespace {

Dataset small_synthetic(std::size_t apps, std::size_t per_app, std::uint64_t seed = 3) {
  return generate_dataset(generate_profiles(apps, seed, 0.2), per_app, PaddingMode::none(), CacheMode::cold(), seed);
}

std::vector<std::string> app_names(std::size_t from, std::size_t to) {
  std::vector<std::string> out;
  for (std::size_t i = from; i <= to; ++i) out.push_back("A" + std::to_string(i));
  return out;
}

std::set<const Trace*> as_set(const TraceRefs& r) { return {r.begin(), r.end()}; }

} // namespace

TEST(ScorePredictions, HandComputedMacroF1) {
  const std::vector<std::string> truth{"a", "a", "b", "b"}, pred{"a", "b", "b", "b"};
  const auto r = score_predictions(truth, pred);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
  // a: p=1 r=.5 f1=2/3; b: p=2/3 r=1 f1=.8
  EXPECT_NEAR(r.macro_f1, (2.0 / 3.0 + 0.8) / 2, 1e-12);
  EXPECT_EQ(r.confusion, (std::vector<std::vector<std::size_t>>{{1, 1}, {0, 2}}));
  // A label that is only ever predicted still counts in the macro average.
  const std::vector<std::string> t2{"a"}, p2{"z"};
  EXPECT_EQ(score_predictions(t2, p2).macro_f1, 0.0);
}

TEST(StratifiedKfold, PartitionAndBalance) {
  const auto ds = small_synthetic(7, 13);
  const auto folds = stratified_kfold(ds, 5, 9);
  ASSERT_EQ(folds.size(), 5u);
  std::vector<int> seen(ds.size(), 0);
  std::size_t min_size = ds.size(), max_size = 0;
  for (const auto& f : folds) {
    EXPECT_EQ(f.train.size() + f.test.size(), ds.size());
    for (auto i : f.test) ++seen[i];
    min_size = std::min(min_size, f.test.size());
    max_size = std::max(max_size, f.test.size());
    std::map<std::string, std::size_t> per_class;
    for (auto i : f.test) ++per_class[ds[i].app_label];
    for (const auto& [_, n] : per_class) EXPECT_TRUE(n == 2 || n == 3);
  }
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_LE(max_size - min_size, 1u);
  EXPECT_EQ(stratified_kfold(ds, 5, 9)[2].test, folds[2].test);
  EXPECT_THROW(stratified_kfold(small_synthetic(2, 3), 5, 0), ClassTooSmall);
}

TEST(ClosedWorld, ModelsNeverSeeTheirTestTraces) {
  const auto ds = small_synthetic(4, 10);
  for (auto a : {Attack::FreqDist, Attack::BnR}) {
    auto cfg = AttackConfig::of(a);
    cfg.forest.n_trees = 10;
    int calls = 0;
    std::set<const Trace*> tested;
    EvalHooks hooks{[&](const TraceRefs& train, const TraceRefs& test) {
      ++calls;
      const auto tr = as_set(train);
      for (const auto* t : test) {
        EXPECT_FALSE(tr.count(t));
        EXPECT_TRUE(tested.insert(t).second);
      }
      EXPECT_EQ(train.size() + test.size(), ds.size());
    }};
    const auto r = closed_world(ds, cfg, 5, 1, hooks);
    EXPECT_EQ(calls, 5);
    EXPECT_EQ(tested.size(), ds.size());
    EXPECT_EQ(r.fold_metrics.size(), 5u);
    std::size_t total = 0;
    for (const auto& row : r.confusion)
      for (auto c : row) total += c;
    EXPECT_EQ(total, ds.size());
  }
}

TEST(ClosedWorld, SeedDeterminism) {
  const auto ds = small_synthetic(5, 10);
  auto cfg = AttackConfig::of(Attack::Segram);
  cfg.forest.n_trees = 20;
  EXPECT_EQ(to_json(closed_world(ds, cfg, 5, 4)), to_json(closed_world(ds, cfg, 5, 4)));
}

TEST(CrossResolver, NeedsSharedLabels) {
  const auto a = small_synthetic(3, 4, 1);
  auto other = generate_profiles(3, 1, 0.2);
  for (auto& p : other) p.app_label = "X" + p.app_label;
  const auto b = generate_dataset(other, 4, PaddingMode::none(), CacheMode::cold(), 2);
  EXPECT_THROW(cross_resolver(a, b, AttackConfig::of(Attack::FreqDist)), NoLabelOverlap);
  const auto r = cross_resolver(a, small_synthetic(3, 4, 1), AttackConfig::of(Attack::BnR));
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST(OpenWorld, StandardSplitShapes) {
  const auto ds = small_synthetic(215, 40);
  OpenWorldSplit split = OpenWorldSplit::standard();
  split.monitored.apps = app_names(1, 15);
  split.unmonitored.apps = app_names(16, 115);
  split.unknown.apps = app_names(116, 215);
  EXPECT_EQ(split.training_size(), 600u);

  const auto s0 = sample_open_world(split, ds, 7, 0);
  const auto s1 = sample_open_world(split, ds, 7, 1);
  EXPECT_EQ(s0.train.size(), 600u);
  EXPECT_EQ(s0.test.size(), 100u + 1200u);
  EXPECT_EQ(std::count(s0.test_monitored.begin(), s0.test_monitored.end(), true), 100);
  EXPECT_EQ(std::count(s0.train_labels.begin(), s0.train_labels.end(), kUnmonitoredLabel), 300);
  for (std::size_t i = 0; i < s0.test.size(); ++i)
    EXPECT_EQ(s0.test_labels[i] == kUnmonitoredLabel, !s0.test_monitored[i]);
  EXPECT_TRUE(std::all_of(s0.train.begin(), s0.train.end(), [&](const Trace* t) { return !as_set(s0.test).count(t); }));

  // Unmonitored and unknown draws stay fixed; the monitored set is redrawn.
  TraceRefs un0, un1;
  for (std::size_t i = 0; i < s0.train.size(); ++i)
    if (s0.train_labels[i] == kUnmonitoredLabel) un0.push_back(s0.train[i]);
  for (std::size_t i = 0; i < s1.train.size(); ++i)
    if (s1.train_labels[i] == kUnmonitoredLabel) un1.push_back(s1.train[i]);
  EXPECT_EQ(un0, un1);
  EXPECT_EQ(TraceRefs(s0.test.begin() + 100, s0.test.end()), TraceRefs(s1.test.begin() + 100, s1.test.end()));
  EXPECT_NE(s0.monitored_apps, s1.monitored_apps);

  auto cached = OpenWorldSplit::with_caching();
  cached.monitored.apps = app_names(1, 20);
  cached.unmonitored.apps = app_names(21, 100);
  cached.unknown.apps = app_names(101, 215);
  EXPECT_THROW(sample_open_world(cached, ds, 1, 0), InsufficientData);
  cached.unknown.n_apps = 100;
  cached.unknown.apps.push_back("A1");
  EXPECT_THROW(cached.validate(), Error);
}

TEST(OpenWorld, BinaryCurveAndBaseline) {
  const auto ds = small_synthetic(40, 12);
  OpenWorldSplit split;
  split.monitored = {app_names(1, 8), 5, 8, 4};
  split.unmonitored = {app_names(9, 24), 16, 3, 0};
  split.unknown = {app_names(25, 40), 16, 0, 4};
  auto cfg = AttackConfig::of(Attack::Segram);
  cfg.forest.n_trees = 30;
  const auto thresholds = default_thresholds();
  int calls = 0;
  EvalHooks hooks{[&](const TraceRefs& train, const TraceRefs& test) {
    ++calls;
    const auto tr = as_set(train);
    for (const auto* t : test) EXPECT_FALSE(tr.count(t));
  }};
  const auto c = open_world_binary(split, ds, cfg, thresholds, 3, 5, hooks);
  EXPECT_EQ(calls, 3);
  EXPECT_NEAR(c.monitored_fraction, 20.0 / 84.0, 1e-12);
  ASSERT_FALSE(c.points.empty());
  EXPECT_EQ(c.points.front().threshold, 0.0);
  EXPECT_NEAR(c.points.front().recall, 1.0, 1e-12);
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    EXPECT_GT(c.points[i].threshold, c.points[i - 1].threshold);
    EXPECT_LE(c.points[i].recall, c.points[i - 1].recall + 1e-12);
  }
  EXPECT_GE(c.best.f1, 0.8);
  EXPECT_EQ(c.baseline.size(), 100u);  // t = 1 has zero baseline recall
  for (const auto& b : c.baseline) EXPECT_NEAR(b.precision, c.monitored_fraction, 1e-12);
  EXPECT_THROW(open_world_binary(split, ds, cfg, std::vector<double>{0.5, 0.5}, 1, 5), Error);
}

TEST(OpenWorld, MulticlassUsesAggregateClass) {
  const auto ds = small_synthetic(30, 10);
  OpenWorldSplit split;
  split.monitored = {app_names(1, 5), 5, 6, 4};
  split.unmonitored = {app_names(6, 17), 12, 3, 0};
  split.unknown = {app_names(18, 30), 13, 0, 3};
  const auto r = open_world_multiclass(split, ds, AttackConfig::of(Attack::FreqDist), 2);
  EXPECT_TRUE(r.per_class.count(kUnmonitoredLabel));
  EXPECT_EQ(r.per_class.at(kUnmonitoredLabel).support, 39u);
  EXPECT_EQ(r.fold_metrics.at(0).n_train, 5u * 6 + 12 * 3);
}

TEST(Benchmark, OneRepeatReportsEveryAttack) {
  const auto ds = small_synthetic(6, 5);
  const std::vector<AttackConfig> cfgs{AttackConfig::of(Attack::Segram), AttackConfig::of(Attack::BnR)};
  const auto r = benchmark(ds, cfgs, 4, 1, 3);
  ASSERT_EQ(r.entries.size(), 2u);
  for (const auto& e : r.entries) {
    EXPECT_EQ(e.n_queries, 4u);
    EXPECT_EQ(e.n_train, 26u);
    EXPECT_EQ(e.stddev_seconds, 0.0);
    EXPECT_GT(e.mean_seconds, 0.0);
  }
  EXPECT_THROW(benchmark(ds, cfgs, 7, 1, 3), InsufficientData);
  EXPECT_THROW(benchmark(ds, cfgs, 4, 0, 3), Error);
}

TEST(PrCsv, Format) {
  std::ostringstream out;
  const std::vector<PrPoint> pts{{0.5, 0.25, 1.0, 0.4}};
  write_pr_csv(out, pts);
  EXPECT_EQ(out.str(), "threshold,precision,recall,f1\n0.50,0.250000,1.000000,0.400000\n");
}
