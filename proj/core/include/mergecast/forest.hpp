#pragma once

// Lane-change classification: feature extraction around the central vehicle,
// balanced anchor sampling, Gini decision trees and bagged forests.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mergecast/rng.hpp"
#include "mergecast/scene.hpp"

namespace mergecast::forest {

inline constexpr std::size_t kNumFeatures = 42;
using FeatureVector = std::array<double, kNumFeatures>;

/// Name of feature i, e.g. "dx_l1", "v_f", "y_i".
std::string feature_name(std::size_t i);

/// Six values per neighbor in role order (|dx|, dy, v, u, a, e), then the
/// central vehicle's own x, y, v, u, a, e.
FeatureVector build_feature_vector(const Scene& scene, std::size_t anchor_step);

enum class Kind : std::uint8_t { kCumulative, kExact };
std::string_view kind_name(Kind k) noexcept;
std::optional<Kind> kind_from_name(std::string_view s) noexcept;

inline constexpr int kMaxHorizon = 15;  ///< classifiers for t = 0..15 s

struct Sample {
  FeatureVector features{};
  int label = 0;
  int vehicle_id = 0;
  std::size_t step = 0;
};

struct TrainingSet {
  std::vector<Sample> samples;
  std::size_t skipped_positive = 0;  ///< vehicles without a positive anchor
  std::size_t skipped_negative = 0;
};

/// Label of an anchor with the given time to lane change: 1, 0, or empty
/// when the anchor qualifies for neither class.
std::optional<int> anchor_label(std::optional<double> time_to_lc, Kind kind, double t, double dt);

/// One positive and one negative anchor per vehicle, each drawn uniformly
/// among its qualifying steps. Throws TrainingError when either class is
/// empty across the corpus (unless allow_empty).
TrainingSet build_training_sets(std::span<const Scene> scenes, Kind kind, int t, std::uint64_t seed,
                                bool allow_empty = false);

/// Flat binary tree. Internal nodes send x[feature] < threshold to the left.
struct Node {
  int feature = -1;  ///< -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double p_positive = 0.0;  ///< leaf probability of class 1
  std::size_t samples = 0;
};

struct DecisionTree {
  std::vector<Node> nodes;  ///< nodes[0] is the root

  double predict(std::span<const double> x) const;
  std::size_t depth() const;
};

struct TreeConfig {
  int max_depth = 12;
  std::size_t feature_subset_size = 7;
  std::size_t min_samples_leaf = 2;
};

struct SplitCandidate {
  int feature = -1;
  double threshold = 0.0;
  double impurity_decrease = 0.0;  ///< weighted by node size
};

double gini(std::size_t positives, std::size_t total) noexcept;

/// Best split among `features` for the given rows (ties: lower feature, then
/// lower threshold). feature == -1 when no split is admissible.
SplitCandidate best_split(std::span<const FeatureVector> x, std::span<const int> y, std::span<const std::size_t> rows,
                          std::span<const std::size_t> features, std::size_t min_samples_leaf);

/// Greedy Gini tree. `importance` (size kNumFeatures) accumulates the
/// impurity decrease of every split when non-null.
DecisionTree train_tree(std::span<const FeatureVector> x, std::span<const int> y, std::span<const std::size_t> rows,
                        const TreeConfig& cfg, Rng& rng, std::span<double> importance = {});

struct ForestConfig {
  std::size_t n_trees = 100;
  TreeConfig tree;
  std::uint64_t seed = 11;
};

struct Forest {
  Kind kind = Kind::kCumulative;
  int horizon = 0;
  ForestConfig config;
  std::vector<DecisionTree> trees;
  FeatureVector importance{};           ///< normalized to sum 1 when any split exists
  std::optional<double> oob_accuracy;

  double predict_proba(std::span<const double> x) const;
};

struct Prediction {
  double probability = 0.0;
  bool lane_change = false;  ///< probability >= 0.5
};

Forest train_forest(std::span<const Sample> samples, Kind kind, int t, const ForestConfig& cfg);
Prediction predict_lc(const Forest& forest, std::span<const double> features);

struct ImportanceReport {
  /// Longitudinal/lateral position, velocity, acceleration.
  std::array<double, 6> by_channel{};
  /// Central vehicle, on-ramp neighbors {l, f}, adjacent-lane {l1, l2, f1, f2}.
  std::array<double, 3> by_vehicle{};
};
inline constexpr std::array<std::string_view, 6> kChannelNames{
    "longitudinal_position", "lateral_position", "longitudinal_velocity",
    "lateral_velocity",      "longitudinal_acceleration", "lateral_acceleration"};
inline constexpr std::array<std::string_view, 3> kVehicleGroupNames{"central", "ramp_neighbors", "adjacent_neighbors"};

ImportanceReport importance_report(const Forest& forest);

/// All classifiers keyed by (kind, horizon).
using Registry = std::map<std::pair<Kind, int>, Forest>;

void save_forest(std::ostream& out, const Forest& forest);
Forest load_forest(std::istream& in);
void save_registry(const std::filesystem::path& path, const Registry& registry);
Registry load_registry(const std::filesystem::path& path);

}  // namespace mergecast::forest
