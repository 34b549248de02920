#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "cdt/rng.hpp"
#include "cdt/tensor.hpp"

namespace cdt {

// Synthetic bi-temporal scene generator: anti-aliased rectangles and disks on
// a smooth background gradient. Between time A and time B each object may be
// added, removed, or moved; the change mask is stamped before any nuisance
// factor (illumination shift, pixel noise, global translation) touches the
// images, so nuisances never leak into the ground truth.

struct SceneConfig {
  int size = 32;
  int n_objects_min = 2;
  int n_objects_max = 4;
  double change_rate = 0.5;
  double illum_delta = 0.1;
  double noise_sigma = 0.02;
  double misreg_max = 0.0;
  std::uint64_t seed = 1;

  void validate() const; // config_error on bad field
};

void to_json(nlohmann::json& j, const SceneConfig& cfg);
void from_json(const nlohmann::json& j, SceneConfig& cfg);

struct PairMeta {
  std::uint64_t index = 0;
  int n_objects = 0;
  int n_changed = 0;
  double illum_shift = 0.0;
  double tx = 0.0; // translation applied to imgB, bilinear_warp convention
  double ty = 0.0;
};

struct SamplePair {
  Tensor imgA; // 1 x size x size in [-1, 1]
  Tensor imgB;
  Tensor mask; // size x size in {0, 1}
  PairMeta meta;
};

// Deterministic per (cfg.seed, index): the sample stream is
// Rng(cfg.seed).fork(index) and the draw order is a frozen contract --
//   base, gx, gy                          background gradient
//   n = uniform_int(min, max)             object count
//   per object: kind, cx, cy, radius | half_w half_h, magnitude, sign
//   per object: change?, [op, [move: sign/mag per axis]]
//   illum_shift, tx, ty, noiseA, noiseB   nuisance draws (always made)
// Tests replay this stream to recover geometry for footprint oracles.
SamplePair generate_pair(const SceneConfig& cfg, std::uint64_t index);

// Writes A_{i}.pgm / B_{i}.pgm / M_{i}.pgm plus manifest.json; returns the
// manifest. read_dataset is the inverse up to pixel quantization.
nlohmann::json write_dataset(const SceneConfig& cfg, int count,
                             const std::filesystem::path& dir);
std::vector<SamplePair> read_dataset(const std::filesystem::path& dir);

} // namespace cdt
