#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mergecast/error.hpp"
#include "mergecast/pipeline.hpp"
#include "small_config.hpp"

using namespace mergecast;
namespace fs = std::filesystem;

namespace {

const std::string kData = R"("data": {"windows": {"1": "a.csv", "2": "b.csv", "3": "c.csv"}})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mergecast-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  const auto c = parse_pipeline_config(R"({"seed": 3, "lstm": {"hidden": 8}, "forest": {"n_trees": 4}, )" + kData + "}");
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.lstm_shape.hidden, 8u);
  EXPECT_EQ(c.lstm_shape.layers, 4u);
  EXPECT_EQ(c.forest.n_trees, 4u);
  EXPECT_EQ(c.families.size(), 3u);
  EXPECT_DOUBLE_EQ(c.horizon, 15.0);
  EXPECT_FALSE(c.synthetic.has_value());
}

TEST(Config, UnknownKeysAndMissingDataAreRejected) {
  EXPECT_THROW(parse_pipeline_config(R"({"sede": 3, )" + kData + "}"), ParameterError);
  EXPECT_THROW(parse_pipeline_config(R"({"seed": 3})"), ParameterError);
  EXPECT_THROW(parse_pipeline_config(R"({"lstm": {"hiden": 3}, )" + kData + "}"), ParameterError);
  EXPECT_THROW(parse_pipeline_config("{not json"), ParameterError);
  EXPECT_THROW(parse_pipeline_config(R"({"cf": {"families": ["ovm"]}, )" + kData + "}"), ParameterError);
}

TEST(Config, WindowResolution) {
  auto c = parse_pipeline_config(
      R"({"output_dir": "out", "data": {"windows": {"1": "{out}/a.csv", "2": "b.csv", "3": "/abs/c.csv"}}})", "/cfg");
  EXPECT_EQ(resolve_window(c, 1), fs::path("out/a.csv"));
  EXPECT_EQ(resolve_window(c, 2), fs::path("/cfg/b.csv"));
  EXPECT_EQ(resolve_window(c, 3), fs::path("/abs/c.csv"));
  EXPECT_THROW(resolve_window(c, 5), Error);
}

TEST(Config, WhitespaceSchema) {
  const auto c = parse_pipeline_config(R"({"data": {"schema": {"delimiter": "whitespace", "has_header": false,
      "columns": {"vehicle_id": 0, "timestamp": 1, "x": 5, "y": 4, "lane_id": 13, "v": 11, "a": 12},
      "time_scale": 0.1, "length_scale": 0.3048},
      "windows": {"1": "a.txt", "2": "b.txt", "3": "c.txt"}}})");
  EXPECT_EQ(c.schema.delimiter, ' ');
  EXPECT_FALSE(c.schema.has_header);
  EXPECT_DOUBLE_EQ(c.schema.length_scale, 0.3048);
}

TEST(Stages, NamesRoundTrip) {
  for (auto s : {Stage::kSynth, Stage::kIngest, Stage::kScenes, Stage::kPretrain, Stage::kFit, Stage::kForecast,
                 Stage::kClassifyTrain, Stage::kEvaluate, Stage::kReport}) {
    EXPECT_EQ(stage_from_name(stage_name(s)), s);
  }
  EXPECT_FALSE(stage_from_name("train").has_value());
}

TEST(Stages, MissingInputRaisesStageError) {
  const auto dir = scratch("missing");
  auto c = parse_pipeline_config(testcfg::small_pipeline_json(dir.string()));
  try {
    run_stage(Stage::kIngest, c);
    FAIL() << "ingest without raw files should fail";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "ingest");
  }
  fs::remove_all(dir);
}

class SmallPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch("pipeline");
    cfg_ = parse_pipeline_config(testcfg::small_pipeline_json(dir_.string()));
    run_pipeline(cfg_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static inline fs::path dir_;
  static inline PipelineConfig cfg_;
};

TEST_F(SmallPipeline, BundleHasEveryArtifact) {
  for (const char* rel : {"tracks/window_1.csv", "scenes/test_scenes.jsonl", "models/lstm_ramp.json",
                          "models/lstm_adjacent.json", "predictions/neighbors.csv", "fits/cf_idm.csv",
                          "forecasts/forecast_ghr.csv", "forests/registry.jsonl", "classifications/predictions.csv",
                          "metrics/forecast_summary.csv", "metrics/classification.csv", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / rel)) << rel;
  }
  EXPECT_FALSE(fs::exists(dir_ / "fits/cf_gipps.csv"));
}

TEST_F(SmallPipeline, ManifestDigestsMatchFiles) {
  const auto m = nlohmann::json::parse(slurp(dir_ / "manifest.json"));
  EXPECT_EQ(m.at("seed").get<int>(), 7);
  ASSERT_FALSE(m.at("files").empty());
  for (const auto& [rel, info] : m.at("files").items()) {
    EXPECT_EQ(info.at("fnv1a64").get<std::string>(), file_digest(dir_ / rel)) << rel;
    EXPECT_EQ(info.at("bytes").get<std::uintmax_t>(), fs::file_size(dir_ / rel)) << rel;
  }
}

TEST_F(SmallPipeline, ClassificationTableCoversAllKeys) {
  std::istringstream in(slurp(dir_ / "metrics/classification.csv"));
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  EXPECT_EQ(line, "kind,t,tp,fp,tn,fn,accuracy,tnr,ppv");
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 32u);
}

TEST_F(SmallPipeline, RescoringStoredOutputsIsBitIdentical) {
  std::map<fs::path, std::string> before;
  for (const auto& e : fs::directory_iterator(dir_ / "metrics")) before[e.path()] = slurp(e.path());
  write_metrics(cfg_);
  for (const auto& [p, text] : before) EXPECT_EQ(slurp(p), text) << p;
}

TEST_F(SmallPipeline, ReportStageIsIdempotent) {
  const auto before = slurp(dir_ / "manifest.json");
  run_stage(Stage::kReport, cfg_);
  EXPECT_EQ(slurp(dir_ / "manifest.json"), before);
}
