#pragma once

// A pipeline config small enough to run end to end in a few seconds.

#include <string>

namespace testcfg {

inline std::string small_pipeline_json(const std::string& out_dir, unsigned seed = 7) {
  return R"({
  "seed": )" + std::to_string(seed) + R"(,
  "output_dir": ")" + out_dir + R"(",
  "data": {
    "schema": "canonical",
    "native_dt": 0.1,
    "windows": {"1": "{out}/raw/window_1.csv", "2": "{out}/raw/window_2.csv", "3": "{out}/raw/window_3.csv"},
    "train_windows": [1, 3],
    "test_window": 2
  },
  "synthetic": {"duration": 90, "ramp_headway": 6, "adjacent_headway": 4},
  "lstm": {"layers": 1, "hidden": 4, "epochs": 1, "batch_size": 32, "max_windows": 300},
  "cf": {"families": ["idm", "ghr"], "starts": 1, "max_evals_per_start": 150},
  "forest": {"n_trees": 3},
  "forecast": {"horizon": 15}
})";
}

}  // namespace testcfg
