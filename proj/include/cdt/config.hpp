#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cdt/cdnet.hpp"
#include "cdt/denoiser.hpp"
#include "cdt/fdaf.hpp"
#include "cdt/synthdata.hpp"

namespace cdt {

struct ScheduleConfig {
  int T = 100;
  double beta_start = 1e-4;
  double beta_end = 0.05;
};

struct TrainConfig {
  double lr = 1e-3;
  int batch = 8;
  int steps = 300;
  std::uint64_t seed = 1;
};

struct FeatureConfig {
  std::vector<int> timesteps = {5, 50}; // noise levels tapped for features
  std::uint64_t seed = 1234;            // stream for the extraction noise
};

struct DataConfig {
  std::string train_dir = "data/train";
  std::string val_dir = "data/val";
  std::string test_dir = "data/test";
  SceneConfig scene;
};

struct RunConfig {
  ScheduleConfig schedule;
  UNetConfig unet;
  FdafConfig fdaf;
  CdConfig cd;
  TrainConfig train;
  FeatureConfig features;
  DataConfig data;

  void validate() const; // sub-configs plus cross-field checks
};

// Strict parsing: every key must be known (unknown keys fail with the full
// offending path), missing keys keep their defaults, type errors carry the
// path too. All failures throw config_error.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json run_config_to_json(const RunConfig& cfg); // full echo

} // namespace cdt
