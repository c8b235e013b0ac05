#pragma once

// End-to-end pipeline: stage functions over a report bundle directory and
// the JSON configuration that drives them.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mergecast/cf.hpp"
#include "mergecast/forest.hpp"
#include "mergecast/ingest.hpp"
#include "mergecast/lstm.hpp"
#include "mergecast/scene.hpp"
#include "mergecast/synth.hpp"

namespace mergecast {

inline constexpr std::string_view kVersion = "0.3.0";

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "mergecast-bundle";
  SceneGeometry geometry;

  // Data source. Window paths may contain "{out}", replaced by output_dir;
  // other relative paths resolve against the config file's directory.
  ingest::Schema schema = ingest::Schema::canonical();
  double native_dt = 0.1;
  std::map<int, std::string> windows;
  std::filesystem::path config_dir = ".";
  std::vector<int> train_windows{1, 3};
  int test_window = 2;

  /// Present when the `synth` stage should generate the window files.
  std::optional<synth::MergeTrafficConfig> synthetic;

  ingest::SmoothingConfig smoothing;
  double window_len = 19.0;
  std::size_t samples_per_vehicle = 2;

  lstm::NetworkShape lstm_shape;
  lstm::Normalization lstm_norm;
  lstm::TrainConfig lstm_train;
  std::size_t lstm_max_windows = 0;  ///< 0 uses every window

  std::vector<cf::Family> families{cf::Family::kIdm, cf::Family::kGipps, cf::Family::kGhr};
  cf::FitOptions fit;

  forest::ForestConfig forest;
  double horizon = 15.0;  ///< forecast length in seconds

  std::string source;  ///< canonical JSON text of the parsed config
};

/// Parses a JSON config. Unknown keys are rejected.
PipelineConfig parse_pipeline_config(std::string_view json_text,
                                     const std::filesystem::path& config_dir = ".");
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

enum class Stage : std::uint8_t {
  kSynth,
  kIngest,
  kScenes,
  kPretrain,
  kFit,
  kForecast,
  kClassifyTrain,
  kEvaluate,
  kReport,
};
std::string_view stage_name(Stage s) noexcept;
std::optional<Stage> stage_from_name(std::string_view name) noexcept;

/// Runs one stage against the bundle directory. Any failure is rethrown as a
/// StageError tagged with the stage name.
void run_stage(Stage stage, const PipelineConfig& cfg);

/// synth (when configured), then ingest through report.
void run_pipeline(const PipelineConfig& cfg);

/// Location of a window's raw trajectory file.
std::filesystem::path resolve_window(const PipelineConfig& cfg, int window);

/// Recomputes every metric file from the raw outputs stored in the bundle.
void write_metrics(const PipelineConfig& cfg);

/// 64-bit FNV-1a digest of a file's bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

}  // namespace mergecast
