#include "mergecast/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "mergecast/error.hpp"

namespace mergecast::forest {

using nlohmann::json;

namespace {

constexpr std::array<const char*, 6> kSlotNames{"dx", "dy", "v", "u", "a", "e"};
constexpr std::array<const char*, 6> kCentralNames{"x", "y", "v", "u", "a", "e"};
constexpr double kGridTol = 1e-6;

}  // namespace

std::string feature_name(std::size_t i) {
  if (i >= kNumFeatures) return "?";
  if (i < 36) return std::string(kSlotNames[i % 6]) + "_" + std::string(role_name(kAllRoles[i / 6]));
  return std::string(kCentralNames[i - 36]) + "_i";
}

FeatureVector build_feature_vector(const Scene& scene, std::size_t anchor_step) {
  if (anchor_step >= scene.central.size() || anchor_step >= scene.neighbors.size()) {
    throw ParameterError("anchor step outside the scene");
  }
  const auto& me = scene.central.states[anchor_step];
  FeatureVector f{};
  for (auto role : kAllRoles) {
    const auto& n = scene.neighbors[anchor_step][role_index(role)].state;
    const std::size_t o = 6 * role_index(role);
    f[o + 0] = std::abs(n.x - me.x);
    f[o + 1] = n.y - me.y;
    f[o + 2] = n.v;
    f[o + 3] = n.u;
    f[o + 4] = n.a;
    f[o + 5] = n.e;
  }
  f[36] = me.x;
  f[37] = me.y;
  f[38] = me.v;
  f[39] = me.u;
  f[40] = me.a;
  f[41] = me.e;
  return f;
}

std::string_view kind_name(Kind k) noexcept { return k == Kind::kCumulative ? "cumulative" : "exact"; }

std::optional<Kind> kind_from_name(std::string_view s) noexcept {
  if (s == "cumulative") return Kind::kCumulative;
  if (s == "exact") return Kind::kExact;
  return std::nullopt;
}

std::optional<int> anchor_label(std::optional<double> ttl, Kind kind, double t, double dt) {
  if (!ttl) return 0;
  const double d = *ttl;
  if (d < -kGridTol) return std::nullopt;  // lane already changed
  if (kind == Kind::kCumulative) {
    if (d <= t + kGridTol) return 1;
    return 0;
  }
  if (std::abs(d - t) <= 0.5 * dt + kGridTol) return 1;
  if (d > t + 0.5 * dt + kGridTol) return 0;
  return std::nullopt;
}

TrainingSet build_training_sets(std::span<const Scene> scenes, Kind kind, int t, std::uint64_t seed,
                                bool allow_empty) {
  TrainingSet out;
  std::vector<std::size_t> pos, neg;
  const auto tag = static_cast<std::int64_t>(kind) * 1000 + t;
  for (const auto& sc : scenes) {
    pos.clear();
    neg.clear();
    const double dt = sc.central.dt;
    for (std::size_t k = 0; k < sc.central.size(); ++k) {
      std::optional<double> ttl;
      if (sc.lc_time) ttl = *sc.lc_time - static_cast<double>(k) * dt;
      const auto label = anchor_label(ttl, kind, static_cast<double>(t), dt);
      if (!label) continue;
      (*label == 1 ? pos : neg).push_back(k);
    }
    Rng rng(derive_seed(seed, "anchors", tag * 1000003 + sc.central.vehicle_id));
    auto draw = [&](const std::vector<std::size_t>& pool, int label) {
      const auto k = pool[rng.index(pool.size())];
      out.samples.push_back(Sample{build_feature_vector(sc, k), label, sc.central.vehicle_id, k});
    };
    if (pos.empty()) ++out.skipped_positive;
    else draw(pos, 1);
    if (neg.empty()) ++out.skipped_negative;
    else draw(neg, 0);
  }
  if (!allow_empty) {
    const auto n_pos = std::count_if(out.samples.begin(), out.samples.end(), [](const Sample& s) { return s.label == 1; });
    const auto n_neg = static_cast<long>(out.samples.size()) - n_pos;
    if (n_pos == 0 || n_neg == 0) {
      throw TrainingError(std::string("empty ") + (n_pos == 0 ? "positive" : "negative") + " pool for " +
                          std::string(kind_name(kind)) + " t=" + std::to_string(t));
    }
  }
  return out;
}

double gini(std::size_t positives, std::size_t total) noexcept {
  if (total == 0) return 0.0;
  const double p = static_cast<double>(positives) / static_cast<double>(total);
  return 2.0 * p * (1.0 - p);
}

SplitCandidate best_split(std::span<const FeatureVector> x, std::span<const int> y, std::span<const std::size_t> rows,
                          std::span<const std::size_t> features, std::size_t min_samples_leaf) {
  SplitCandidate best;
  const std::size_t n = rows.size();
  const std::size_t min_leaf = std::max<std::size_t>(min_samples_leaf, 1);
  if (n < 2 * min_leaf) return best;

  std::size_t total_pos = 0;
  for (auto r : rows) total_pos += static_cast<std::size_t>(y[r] == 1);
  const double parent = static_cast<double>(n) * gini(total_pos, n);

  std::vector<std::size_t> sorted(rows.begin(), rows.end());
  std::vector<std::size_t> feats(features.begin(), features.end());
  std::sort(feats.begin(), feats.end());
  for (auto f : feats) {
    std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
      if (x[a][f] != x[b][f]) return x[a][f] < x[b][f];
      return a < b;
    });
    std::size_t left_pos = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      left_pos += static_cast<std::size_t>(y[sorted[i]] == 1);
      const double lo = x[sorted[i]][f], hi = x[sorted[i + 1]][f];
      if (!(lo < hi)) continue;
      const std::size_t n_left = i + 1, n_right = n - n_left;
      if (n_left < min_leaf || n_right < min_leaf) continue;
      const double child = static_cast<double>(n_left) * gini(left_pos, n_left) +
                           static_cast<double>(n_right) * gini(total_pos - left_pos, n_right);
      const double decrease = parent - child;
      if (decrease > best.impurity_decrease + 1e-12) {
        double thr = 0.5 * (lo + hi);
        if (!(thr > lo)) thr = hi;
        best = SplitCandidate{static_cast<int>(f), thr, decrease};
      }
    }
  }
  return best;
}

namespace {

struct TreeBuilder {
  std::span<const FeatureVector> x;
  std::span<const int> y;
  const TreeConfig& cfg;
  Rng& rng;
  std::span<double> importance;
  DecisionTree tree;
  std::vector<std::size_t> all_features;

  int build(std::vector<std::size_t>& rows, int depth) {
    const auto idx = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    std::size_t pos = 0;
    for (auto r : rows) pos += static_cast<std::size_t>(y[r] == 1);
    {
      auto& node = tree.nodes[static_cast<std::size_t>(idx)];
      node.samples = rows.size();
      node.p_positive = rows.empty() ? 0.0 : static_cast<double>(pos) / static_cast<double>(rows.size());
    }
    if (depth >= cfg.max_depth || pos == 0 || pos == rows.size()) return idx;

    // Random feature subset: partial Fisher-Yates over all feature indices.
    const std::size_t m = std::clamp<std::size_t>(cfg.feature_subset_size, 1, kNumFeatures);
    for (std::size_t i = 0; i < m; ++i) {
      const auto j = i + rng.index(kNumFeatures - i);
      std::swap(all_features[i], all_features[j]);
    }
    const std::vector<std::size_t> subset(all_features.begin(), all_features.begin() + static_cast<long>(m));
    const auto split = best_split(x, y, rows, subset, cfg.min_samples_leaf);
    if (split.feature < 0) return idx;

    if (!importance.empty()) importance[static_cast<std::size_t>(split.feature)] += split.impurity_decrease;
    std::vector<std::size_t> left, right;
    for (auto r : rows) (x[r][static_cast<std::size_t>(split.feature)] < split.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    const int l = build(left, depth + 1);
    const int r = build(right, depth + 1);
    auto& node = tree.nodes[static_cast<std::size_t>(idx)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = r;
    return idx;
  }
};

}  // namespace

DecisionTree train_tree(std::span<const FeatureVector> x, std::span<const int> y, std::span<const std::size_t> rows,
                        const TreeConfig& cfg, Rng& rng, std::span<double> importance) {
  if (x.size() != y.size()) throw ParameterError("feature and label counts differ");
  if (rows.empty()) throw ParameterError("cannot grow a tree on zero samples");
  TreeBuilder b{x, y, cfg, rng, importance, {}, std::vector<std::size_t>(kNumFeatures)};
  std::iota(b.all_features.begin(), b.all_features.end(), 0);
  std::vector<std::size_t> r(rows.begin(), rows.end());
  b.build(r, 0);
  return std::move(b.tree);
}

double DecisionTree::predict(std::span<const double> x) const {
  if (nodes.empty()) throw ParameterError("empty decision tree");
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    const auto& n = nodes[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right);
  }
  return nodes[i].p_positive;
}

std::size_t DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::size_t best = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [i, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    if (nodes[i].feature >= 0) {
      stack.emplace_back(static_cast<std::size_t>(nodes[i].left), d + 1);
      stack.emplace_back(static_cast<std::size_t>(nodes[i].right), d + 1);
    }
  }
  return best;
}

double Forest::predict_proba(std::span<const double> x) const {
  if (trees.empty()) throw ParameterError("forest has no trees");
  if (x.size() != kNumFeatures) throw ParameterError("feature vector must have 42 entries");
  double s = 0.0;
  for (const auto& t : trees) s += t.predict(x);
  return s / static_cast<double>(trees.size());
}

Forest train_forest(std::span<const Sample> samples, Kind kind, int t, const ForestConfig& cfg) {
  if (samples.empty()) throw TrainingError("no samples to train a forest");
  if (cfg.n_trees == 0) throw ParameterError("forest needs at least one tree");
  std::vector<FeatureVector> x(samples.size());
  std::vector<int> y(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    x[i] = samples[i].features;
    y[i] = samples[i].label;
  }

  Forest f;
  f.kind = kind;
  f.horizon = t;
  f.config = cfg;
  f.trees.reserve(cfg.n_trees);
  const std::size_t n = samples.size();
  std::vector<double> oob_sum(n, 0.0);
  std::vector<std::size_t> oob_count(n, 0);
  std::vector<double> importance(kNumFeatures, 0.0), tree_imp(kNumFeatures);
  std::vector<std::size_t> rows(n);
  std::vector<char> in_bag(n);

  for (std::size_t k = 0; k < cfg.n_trees; ++k) {
    Rng rng(derive_seed(cfg.seed, "tree", static_cast<std::int64_t>(k)));
    std::fill(in_bag.begin(), in_bag.end(), 0);
    for (auto& r : rows) {
      r = rng.index(n);
      in_bag[r] = 1;
    }
    std::fill(tree_imp.begin(), tree_imp.end(), 0.0);
    auto tree = train_tree(x, y, rows, cfg.tree, rng, tree_imp);
    for (std::size_t j = 0; j < kNumFeatures; ++j) importance[j] += tree_imp[j] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (in_bag[i]) continue;
      oob_sum[i] += tree.predict(x[i]);
      ++oob_count[i];
    }
    f.trees.push_back(std::move(tree));
  }

  const double total = std::accumulate(importance.begin(), importance.end(), 0.0);
  for (std::size_t j = 0; j < kNumFeatures; ++j) f.importance[j] = total > 0.0 ? importance[j] / total : 0.0;

  std::size_t scored = 0, correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (oob_count[i] == 0) continue;
    ++scored;
    const bool pred = oob_sum[i] / static_cast<double>(oob_count[i]) >= 0.5;
    correct += static_cast<std::size_t>(pred == (y[i] == 1));
  }
  if (scored > 0) f.oob_accuracy = static_cast<double>(correct) / static_cast<double>(scored);
  return f;
}

Prediction predict_lc(const Forest& forest, std::span<const double> features) {
  const double p = forest.predict_proba(features);
  return {p, p >= 0.5};
}

ImportanceReport importance_report(const Forest& forest) {
  ImportanceReport r;
  for (std::size_t i = 0; i < kNumFeatures; ++i) {
    const double w = forest.importance[i];
    r.by_channel[i % 6] += w;
    std::size_t group = 0;
    if (i < 36) group = is_same_lane_role(kAllRoles[i / 6]) ? 1 : 2;
    r.by_vehicle[group] += w;
  }
  return r;
}

void save_forest(std::ostream& out, const Forest& f) {
  json trees = json::array();
  for (const auto& t : f.trees) {
    std::vector<int> feat, left, right;
    std::vector<double> thr, p;
    std::vector<std::size_t> cnt;
    for (const auto& n : t.nodes) {
      feat.push_back(n.feature);
      thr.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      p.push_back(n.p_positive);
      cnt.push_back(n.samples);
    }
    trees.push_back(json{{"feature", feat}, {"threshold", thr}, {"left", left}, {"right", right}, {"p", p}, {"n", cnt}});
  }
  json j{{"kind", kind_name(f.kind)},
         {"horizon", f.horizon},
         {"n_trees", f.config.n_trees},
         {"max_depth", f.config.tree.max_depth},
         {"feature_subset_size", f.config.tree.feature_subset_size},
         {"min_samples_leaf", f.config.tree.min_samples_leaf},
         {"seed", f.config.seed},
         {"importance", std::vector<double>(f.importance.begin(), f.importance.end())},
         {"oob_accuracy", f.oob_accuracy ? json(*f.oob_accuracy) : json(nullptr)},
         {"trees", trees}};
  out << j.dump() << '\n';
}

Forest load_forest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("no forest record");
  try {
    const auto j = json::parse(line);
    Forest f;
    auto kind = kind_from_name(j.at("kind").get<std::string>());
    if (!kind) throw Error("unknown classifier kind");
    f.kind = *kind;
    f.horizon = j.at("horizon").get<int>();
    f.config.n_trees = j.at("n_trees").get<std::size_t>();
    f.config.tree.max_depth = j.at("max_depth").get<int>();
    f.config.tree.feature_subset_size = j.at("feature_subset_size").get<std::size_t>();
    f.config.tree.min_samples_leaf = j.at("min_samples_leaf").get<std::size_t>();
    f.config.seed = j.at("seed").get<std::uint64_t>();
    const auto imp = j.at("importance").get<std::vector<double>>();
    if (imp.size() != kNumFeatures) throw Error("importance vector has the wrong length");
    std::copy(imp.begin(), imp.end(), f.importance.begin());
    if (!j.at("oob_accuracy").is_null()) f.oob_accuracy = j.at("oob_accuracy").get<double>();
    for (const auto& jt : j.at("trees")) {
      const auto feat = jt.at("feature").get<std::vector<int>>();
      const auto thr = jt.at("threshold").get<std::vector<double>>();
      const auto left = jt.at("left").get<std::vector<int>>();
      const auto right = jt.at("right").get<std::vector<int>>();
      const auto p = jt.at("p").get<std::vector<double>>();
      const auto cnt = jt.at("n").get<std::vector<std::size_t>>();
      DecisionTree t;
      for (std::size_t i = 0; i < feat.size(); ++i) {
        t.nodes.push_back(Node{feat[i], thr[i], left[i], right[i], p[i], cnt[i]});
        const bool internal = feat[i] >= 0;
        if (internal && (left[i] < 0 || right[i] < 0 || static_cast<std::size_t>(std::max(left[i], right[i])) >= feat.size())) {
          throw Error("tree node has a missing child");
        }
      }
      f.trees.push_back(std::move(t));
    }
    return f;
  } catch (const json::exception& ex) {
    throw Error(std::string("malformed forest record: ") + ex.what());
  }
}

void save_registry(const std::filesystem::path& path, const Registry& registry) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write forest registry " + path.string());
  for (const auto& [key, f] : registry) save_forest(out, f);
}

Registry load_registry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open forest registry " + path.string());
  Registry reg;
  while (in.peek() != std::char_traits<char>::eof()) {
    auto f = load_forest(in);
    const auto key = std::make_pair(f.kind, f.horizon);
    reg.emplace(key, std::move(f));
  }
  return reg;
}

}  // namespace mergecast::forest
