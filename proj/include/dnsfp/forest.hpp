#pragma once

// Random forest over sparse count vectors.
//
// Trees are grown greedily on Gini impurity from bootstrap resamples of the
// training set. At each node a random subset of features is examined;
// features that are constant within the node (including all-zero ones) do
// not count toward the per-split quota, so sparse n-gram vocabularies with
// tens of thousands of columns still get informative candidate splits.
//
// Randomness: tree i draws from Rng(derive_seed(params.seed, {i})), so the
// model is identical regardless of how many threads train it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dnsfp/error.hpp"
#include "dnsfp/features.hpp"
#include "dnsfp/parallel.hpp"
#include "dnsfp/rng.hpp"

namespace dnsfp {

struct ForestParams {
  int n_trees = 100;
  std::optional<int> max_depth;          // unbounded when empty
  int min_samples_leaf = 1;
  std::optional<int> features_per_split;  // floor(sqrt(n_features)) when empty
  std::uint64_t seed = 0;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // go left iff x[feature] <= threshold
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::uint32_t leaf_begin = 0;  // leaf class distribution, slice of DecisionTree::leaf_probs
  std::uint32_t leaf_end = 0;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  std::vector<std::pair<std::uint32_t, double>> leaf_probs;

  const TreeNode& leaf_for(const FeatureVector& x) const {
    const TreeNode* node = &nodes.front();
    while (node->feature >= 0) {
      const double v = x.at(static_cast<std::uint32_t>(node->feature));
      node = &nodes[static_cast<std::size_t>(v <= node->threshold ? node->left : node->right)];
    }
    return *node;
  }

  const TreeNode& leaf_for(std::span<const std::uint32_t> dense) const {
    const TreeNode* node = &nodes.front();
    while (node->feature >= 0) {
      const double v = dense[static_cast<std::size_t>(node->feature)];
      node = &nodes[static_cast<std::size_t>(v <= node->threshold ? node->left : node->right)];
    }
    return *node;
  }
};

class ForestModel {
public:
  ForestModel() = default;
  ForestModel(std::vector<std::string> classes, std::uint64_t vocab_id, std::size_t n_features,
              std::vector<DecisionTree> trees)
      : classes_(std::move(classes)), vocab_id_(vocab_id), n_features_(n_features), trees_(std::move(trees)) {}

  const std::vector<std::string>& classes() const noexcept { return classes_; }
  std::uint64_t vocab_id() const noexcept { return vocab_id_; }
  std::size_t n_features() const noexcept { return n_features_; }
  const std::vector<DecisionTree>& trees() const noexcept { return trees_; }

private:
  std::vector<std::string> classes_;
  std::uint64_t vocab_id_ = 0;
  std::size_t n_features_ = 0;
  std::vector<DecisionTree> trees_;
};

namespace detail {

struct SplitEntry {
  std::uint32_t value;
  std::uint32_t sample;
};

class TreeBuilder {
public:
  TreeBuilder(std::span<const FeatureVector> X, std::span<const std::uint32_t> y, std::size_t n_classes,
              std::size_t n_features, const ForestParams& p, std::uint64_t tree_seed)
      : X_(X), y_(y), n_classes_(n_classes), n_features_(n_features), params_(p), rng_(tree_seed),
        buckets_(n_features), sample_weight_(X.size(), 0), node_value_(X.size(), 0) {
    const std::size_t nf = std::max<std::size_t>(1, n_features);
    mtry_ = p.features_per_split ? static_cast<std::size_t>(std::max(1, *p.features_per_split))
                                 : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(nf))));
  }

  DecisionTree build() {
    const std::size_t n = X_.size();
    for (std::size_t i = 0; i < n; ++i) ++sample_weight_[rng_.below(n)];
    std::vector<std::uint32_t> root;
    for (std::uint32_t i = 0; i < n; ++i)
      if (sample_weight_[i] > 0) root.push_back(i);

    tree_.nodes.emplace_back();
    struct Pending {
      std::int32_t node;
      std::vector<std::uint32_t> samples;
      int depth;
    };
    std::vector<Pending> stack;
    stack.push_back({0, std::move(root), 0});
    while (!stack.empty()) {
      Pending cur = std::move(stack.back());
      stack.pop_back();
      auto children = split_node(cur.node, cur.samples, cur.depth);
      if (children) {
        stack.push_back({tree_.nodes[cur.node].right, std::move(children->second), cur.depth + 1});
        stack.push_back({tree_.nodes[cur.node].left, std::move(children->first), cur.depth + 1});
      }
    }
    return std::move(tree_);
  }

private:
  using Hist = std::vector<double>;

  Hist class_hist(std::span<const std::uint32_t> samples) const {
    Hist h(n_classes_, 0.0);
    for (auto s : samples) h[y_[s]] += sample_weight_[s];
    return h;
  }

  void make_leaf(std::int32_t node, const Hist& h) {
    const double total = std::accumulate(h.begin(), h.end(), 0.0);
    auto& nd = tree_.nodes[static_cast<std::size_t>(node)];
    nd.feature = -1;
    nd.leaf_begin = static_cast<std::uint32_t>(tree_.leaf_probs.size());
    for (std::uint32_t c = 0; c < h.size(); ++c)
      if (h[c] > 0) tree_.leaf_probs.emplace_back(c, h[c] / total);
    nd.leaf_end = static_cast<std::uint32_t>(tree_.leaf_probs.size());
  }

  struct Candidate {
    double impurity;
    std::uint32_t feature;
    double threshold;
  };

  // Best split of one feature; nullopt when the feature is constant in the node.
  std::optional<Candidate> evaluate(std::uint32_t f, const Hist& node_hist, double node_weight, bool& constant) {
    auto& entries = buckets_[f];
    std::sort(entries.begin(), entries.end(), [](const SplitEntry& a, const SplitEntry& b) {
      return a.value != b.value ? a.value < b.value : a.sample < b.sample;
    });
    Hist nz(n_classes_, 0.0);
    double nz_weight = 0.0;
    for (const auto& e : entries) {
      nz[y_[e.sample]] += sample_weight_[e.sample];
      nz_weight += sample_weight_[e.sample];
    }
    const double zero_weight = node_weight - nz_weight;
    const bool has_zero = zero_weight > 0.5;
    constant = entries.front().value == entries.back().value && !has_zero;
    if (constant) return std::nullopt;

    const double min_leaf = static_cast<double>(params_.min_samples_leaf);
    Hist left(n_classes_, 0.0);
    double wl = 0.0, sq_left = 0.0;
    double sq_right = 0.0;
    for (double v : node_hist) sq_right += v * v;
    auto move_left = [&](std::uint32_t cls, double w) {
      const double l = left[cls];
      const double r = node_hist[cls] - l;
      sq_left += (l + w) * (l + w) - l * l;
      sq_right += (r - w) * (r - w) - r * r;
      left[cls] += w;
      wl += w;
    };
    if (has_zero)
      for (std::uint32_t c = 0; c < n_classes_; ++c)
        if (node_hist[c] - nz[c] > 0) move_left(c, node_hist[c] - nz[c]);

    std::optional<Candidate> best;
    auto consider = [&](double lo, double hi) {
      const double wr = node_weight - wl;
      if (wl < min_leaf || wr < min_leaf) return;
      const double impurity = (wl - sq_left / wl) + (wr - sq_right / wr);
      if (!best || impurity < best->impurity) best = Candidate{impurity, f, (lo + hi) / 2.0};
    };
    double prev_value = 0.0;
    bool have_prev = has_zero;
    for (std::size_t i = 0; i < entries.size();) {
      const std::uint32_t v = entries[i].value;
      if (have_prev) consider(prev_value, v);
      while (i < entries.size() && entries[i].value == v) {
        move_left(y_[entries[i].sample], sample_weight_[entries[i].sample]);
        ++i;
      }
      prev_value = v;
      have_prev = true;
    }
    return best;
  }

  std::optional<std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>>>
  split_node(std::int32_t node, const std::vector<std::uint32_t>& samples, int depth) {
    const Hist h = class_hist(samples);
    const double weight = std::accumulate(h.begin(), h.end(), 0.0);
    const bool pure = std::count_if(h.begin(), h.end(), [](double v) { return v > 0; }) <= 1;
    const bool depth_cap = params_.max_depth && depth >= *params_.max_depth;
    if (pure || depth_cap || weight < 2.0 * params_.min_samples_leaf) {
      make_leaf(node, h);
      return std::nullopt;
    }

    std::vector<std::uint32_t> active;
    for (auto s : samples)
      for (const auto& [f, c] : X_[s].counts) {
        if (f >= buckets_.size()) continue;
        if (buckets_[f].empty()) active.push_back(f);
        buckets_[f].push_back({c, s});
      }
    std::sort(active.begin(), active.end());

    std::optional<Candidate> best;
    std::size_t informative = 0;
    for (std::size_t i = 0; i < active.size() && informative < mtry_; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng_.below(active.size() - i));
      std::swap(active[i], active[j]);
      bool constant = false;
      auto cand = evaluate(active[i], h, weight, constant);
      if (constant) continue;
      ++informative;
      if (cand && (!best || cand->impurity < best->impurity)) best = cand;
    }

    std::optional<std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>>> result;
    if (best) {
      for (const auto& e : buckets_[best->feature]) node_value_[e.sample] = e.value;
      std::vector<std::uint32_t> left, right;
      for (auto s : samples) (node_value_[s] <= best->threshold ? left : right).push_back(s);
      for (const auto& e : buckets_[best->feature]) node_value_[e.sample] = 0;

      auto& nd = tree_.nodes[static_cast<std::size_t>(node)];
      nd.feature = static_cast<std::int32_t>(best->feature);
      nd.threshold = best->threshold;
      const auto l = static_cast<std::int32_t>(tree_.nodes.size());
      tree_.nodes.emplace_back();
      tree_.nodes.emplace_back();
      tree_.nodes[static_cast<std::size_t>(node)].left = l;
      tree_.nodes[static_cast<std::size_t>(node)].right = l + 1;
      result.emplace(std::move(left), std::move(right));
    } else {
      make_leaf(node, h);
    }
    for (auto f : active) buckets_[f].clear();
    return result;
  }

  std::span<const FeatureVector> X_;
  std::span<const std::uint32_t> y_;
  std::size_t n_classes_;
  std::size_t n_features_;
  const ForestParams& params_;
  Rng rng_;
  std::size_t mtry_ = 1;
  std::vector<std::vector<SplitEntry>> buckets_;
  std::vector<std::uint32_t> sample_weight_;
  std::vector<std::uint32_t> node_value_;
  DecisionTree tree_;
};

} // namespace detail

/// n_features = vocabulary size; 0 infers it from the largest position seen.
inline ForestModel train_forest(std::span<const FeatureVector> X, std::span<const std::string> y,
                                const ForestParams& params, std::size_t n_features = 0) {
  if (X.size() != y.size()) throw Error("feature/label count mismatch");
  if (X.size() < 2) throw DegenerateTraining("need at least two training vectors");
  if (params.n_trees < 1) throw Error("n_trees must be >= 1");
  if (params.min_samples_leaf < 1) throw Error("min_samples_leaf must be >= 1");
  const std::set<std::string> distinct(y.begin(), y.end());
  if (distinct.size() < 2) throw DegenerateTraining("need at least two distinct labels");
  const std::uint64_t vocab_id = X.front().vocab_id;
  std::size_t inferred = 0;
  for (const auto& x : X) {
    if (x.vocab_id != vocab_id) throw VocabularyMismatch("training vectors come from different vocabularies");
    if (!x.counts.empty()) inferred = std::max<std::size_t>(inferred, x.counts.back().first + 1);
  }
  if (n_features == 0) n_features = inferred;
  if (inferred > n_features) throw VocabularyMismatch("feature position beyond vocabulary size");

  std::vector<std::string> classes(distinct.begin(), distinct.end());
  std::vector<std::uint32_t> yi(y.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    yi[i] = static_cast<std::uint32_t>(std::lower_bound(classes.begin(), classes.end(), y[i]) - classes.begin());

  std::vector<DecisionTree> trees(static_cast<std::size_t>(params.n_trees));
  parallel_for(trees.size(), [&](std::size_t t) {
    detail::TreeBuilder builder(X, yi, classes.size(), n_features, params, derive_seed(params.seed, {t}));
    trees[t] = builder.build();
  });
  return ForestModel(std::move(classes), vocab_id, n_features, std::move(trees));
}

/// Mean of per-tree leaf distributions, indexed like m.classes().
inline std::vector<double> predict_proba(const ForestModel& m, const FeatureVector& x) {
  if (x.vocab_id != m.vocab_id()) throw VocabularyMismatch("feature vector built from a different vocabulary");
  std::vector<double> p(m.classes().size(), 0.0);
  // Scattered once so each split is a direct load; cleared again before returning.
  thread_local std::vector<std::uint32_t> dense;
  if (dense.size() < m.n_features()) dense.resize(m.n_features(), 0);
  for (const auto& [pos, c] : x.counts)
    if (pos < dense.size()) dense[pos] = c;
  for (const auto& tree : m.trees()) {
    const auto& leaf = tree.leaf_for(std::span<const std::uint32_t>(dense));
    for (auto i = leaf.leaf_begin; i < leaf.leaf_end; ++i) p[tree.leaf_probs[i].first] += tree.leaf_probs[i].second;
  }
  for (const auto& [pos, c] : x.counts)
    if (pos < dense.size()) dense[pos] = 0;
  const double n = static_cast<double>(m.trees().size());
  for (auto& v : p) v /= n;
  return p;
}

/// Index of the largest entry; the first wins ties.
inline std::size_t argmax(std::span<const double> p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

inline const std::string& predict(const ForestModel& m, const FeatureVector& x) {
  return m.classes()[argmax(predict_proba(m, x))];
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kForestFormatVersion = 1;

inline nlohmann::json to_json(const ForestModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees()) {
    nlohmann::json feature = nlohmann::json::array(), threshold = nlohmann::json::array(),
                   left = nlohmann::json::array(), right = nlohmann::json::array(),
                   leaves = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      nlohmann::json dist = nlohmann::json::array();
      for (auto i = n.leaf_begin; i < n.leaf_end; ++i) dist.push_back({t.leaf_probs[i].first, t.leaf_probs[i].second});
      leaves.push_back(std::move(dist));
    }
    trees.push_back({{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"leaf", leaves}});
  }
  return {{"format", "dnsfp-forest"}, {"version", kForestFormatVersion}, {"classes", m.classes()},
          {"vocab_id", m.vocab_id()}, {"n_features", m.n_features()}, {"trees", std::move(trees)}};
}

inline ForestModel forest_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dnsfp-forest") throw Error("not a forest model");
  if (j.at("version").get<int>() != kForestFormatVersion)
    throw Error("unsupported forest model version " + j.at("version").dump());
  std::vector<DecisionTree> trees;
  for (const auto& jt : j.at("trees")) {
    DecisionTree t;
    const auto& feature = jt.at("feature");
    for (std::size_t i = 0; i < feature.size(); ++i) {
      TreeNode n;
      n.feature = feature[i].get<std::int32_t>();
      n.threshold = jt.at("threshold")[i].get<double>();
      n.left = jt.at("left")[i].get<std::int32_t>();
      n.right = jt.at("right")[i].get<std::int32_t>();
      n.leaf_begin = static_cast<std::uint32_t>(t.leaf_probs.size());
      for (const auto& e : jt.at("leaf")[i]) t.leaf_probs.emplace_back(e[0].get<std::uint32_t>(), e[1].get<double>());
      n.leaf_end = static_cast<std::uint32_t>(t.leaf_probs.size());
      t.nodes.push_back(n);
    }
    trees.push_back(std::move(t));
  }
  auto classes = j.at("classes").get<std::vector<std::string>>();
  const auto n_features = j.at("n_features").get<std::size_t>();
  for (const auto& t : trees) {
    if (t.nodes.empty()) throw Error("forest model has an empty tree");
    const auto n = static_cast<std::int64_t>(t.nodes.size());
    for (std::int64_t i = 0; i < n; ++i) {
      const auto& node = t.nodes[static_cast<std::size_t>(i)];
      if (node.feature < 0) continue;
      // Children after their parent rules out cycles.
      if (static_cast<std::size_t>(node.feature) >= n_features || node.left <= i || node.left >= n ||
          node.right <= i || node.right >= n)
        throw Error("forest model has a malformed split node");
    }
    for (const auto& [c, _] : t.leaf_probs)
      if (c >= classes.size()) throw Error("forest model leaf names an unknown class");
  }
  return ForestModel(std::move(classes), j.at("vocab_id").get<std::uint64_t>(), n_features, std::move(trees));
}

} // namespace dnsfp
