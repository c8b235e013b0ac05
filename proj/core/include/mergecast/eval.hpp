#pragma once

// Forecast and classification scoring.

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mergecast/forest.hpp"

namespace mergecast::eval {

/// One forecast with its ground truth. Truth is empty (or holds NaN) when the
/// central vehicle's future is not observed.
struct ScoredForecast {
  int scene_id = 0;
  std::vector<double> predicted;  ///< x at steps 1..75 after the anchor
  std::vector<double> truth;
};

struct HorizonScore {
  int second = 0;
  std::size_t count = 0;
  double within_5m = 0.0;
  double within_10m = 0.0;
  double mean_abs_error = 0.0;
};

struct ForecastScore {
  std::vector<HorizonScore> horizons;  ///< seconds 1..15
  std::size_t excluded = 0;
};

/// Per-second accuracy at steps 5, 10, ..., 75.
ForecastScore score_forecast(std::span<const ScoredForecast> results, double dt = kTrackDt, int seconds = 15);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const noexcept { return tp + fp + tn + fn; }
};

/// Metrics with undefined ratios left empty.
struct ClassMetrics {
  Confusion counts;
  std::optional<double> accuracy;
  std::optional<double> tnr;  ///< TN / (TN + FP)
  std::optional<double> ppv;  ///< TP / (TP + FP)
};

ClassMetrics metrics_from_confusion(const Confusion& c);

/// Raw output of one classifier on one test anchor.
struct ClassificationRecord {
  forest::Kind kind = forest::Kind::kCumulative;
  int horizon = 0;
  int vehicle_id = 0;
  std::size_t step = 0;
  int label = 0;
  double probability = 0.0;
  bool decision = false;
};

using ClassificationScore = std::map<std::pair<forest::Kind, int>, ClassMetrics>;
using TestSets = std::map<std::pair<forest::Kind, int>, forest::TrainingSet>;

/// Runs every classifier on its test set. Keys without a classifier or with
/// an empty test set are reported with empty metrics.
ClassificationScore score_classification(const forest::Registry& registry, const TestSets& test_sets,
                                         std::vector<ClassificationRecord>* records = nullptr);

/// Recomputes the scores from stored raw outputs.
ClassificationScore score_classification_records(std::span<const ClassificationRecord> records);

void write_forecast_score(std::ostream& out, const ForecastScore& s);
void write_classification_score(std::ostream& out, const ClassificationScore& s);
void write_classification_records(std::ostream& out, std::span<const ClassificationRecord> records);
std::vector<ClassificationRecord> read_classification_records(std::istream& in);

}  // namespace mergecast::eval
