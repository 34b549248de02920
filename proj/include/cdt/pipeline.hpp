#pragma once

#include <filesystem>
#include <iosfwd>
#include <utility>
#include <vector>

#include "cdt/config.hpp"
#include "cdt/diffusion.hpp"
#include "cdt/synthdata.hpp"

namespace cdt {

// End-to-end plumbing shared by the CLI and the acceptance harness. Every
// routine is deterministic given (config, data): training batches, noise
// draws, and feature extraction all run on seeded streams.

ParamMap detach_params(const ParamMap& params);

// Per-level channel count of an extracted feature pyramid (coarse -> fine).
std::vector<int> pyramid_channels(const UNetConfig& ucfg, int n_timesteps);

// ---- diffusion pretraining -------------------------------------------------
//
// Trains the denoiser on the pool [A_0, B_0, A_1, B_1, ...]. Per step the
// batch indices are drawn first (train.batch draws of uniform_int over the
// pool), then denoise_loss consumes its documented per-element draws.
struct DiffusionTrainResult {
  ParamMap params;
  std::vector<double> losses; // one entry per optimizer step
};

DiffusionTrainResult train_diffusion(const RunConfig& cfg,
                                     const std::vector<SamplePair>& data,
                                     std::ostream* log = nullptr);

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& losses);

// ---- feature extraction ----------------------------------------------------
//
// Pure function of (backbone params, image, feature seed, sample index).
// Both images of sample i draw their extraction noise from stream fork(i),
// so identical images produce identical pyramids (common random numbers).
std::pair<FeaturePyramid, FeaturePyramid> extract_pair_features(
    const UNetConfig& ucfg, const ParamMap& backbone, const NoiseSchedule& s,
    const Tensor& imgA, const Tensor& imgB, const FeatureConfig& fcfg,
    std::uint64_t sample_index);

struct FeatureCache {
  std::vector<FeaturePyramid> a, b;
};

FeatureCache extract_all_features(const UNetConfig& ucfg, const ParamMap& backbone,
                                  const NoiseSchedule& s,
                                  const std::vector<SamplePair>& data,
                                  const FeatureConfig& fcfg);

// ---- change-detection training ---------------------------------------------
//
// Trains the FDAF flow heads and the classifier with BCE; the diffusion
// backbone stays frozen unless `unfreeze` is set (then its parameters join
// the optimizer and features are recomputed inside the graph each step).
// An epoch is ceil(n_train / batch) optimizer steps; after each epoch the
// val split is scored (micro-averaged F1 at cd.tau).
struct CdEpochStat {
  int epoch = 0;
  double train_loss = 0.0; // mean step loss within the epoch
  double val_f1 = 0.0;
};

struct CdTrainResult {
  ParamMap head_params; // flow heads + classifier
  ParamMap backbone_params; // updated when unfrozen, input echo otherwise
  std::vector<CdEpochStat> epochs;
};

// The optional caches must hold features extracted with the same backbone,
// feature config, and datasets (what extract_all_features returns); they only
// skip recomputation and are rejected when unfreezing.
CdTrainResult train_cd(const RunConfig& cfg, bool unfreeze, const ParamMap& backbone,
                       const std::vector<SamplePair>& train_data,
                       const std::vector<SamplePair>& val_data,
                       std::ostream* log = nullptr,
                       const FeatureCache* shared_train = nullptr,
                       const FeatureCache* shared_val = nullptr);

// ---- inference & evaluation --------------------------------------------------
Tensor predict_prob(const RunConfig& cfg, const ParamMap& backbone, const ParamMap& head,
                    const Tensor& imgA, const Tensor& imgB, std::uint64_t sample_index);

struct EvalResult {
  MetricsReport aggregate; // micro-average over all pixels at cd.tau
  std::vector<MetricsReport> per_sample;
  double best_tau = 0.5; // argmax micro F1 over the 0.05..0.95 grid
  double best_tau_f1 = 0.0;
  std::vector<Tensor> probs; // per-sample probability maps
};

EvalResult evaluate_dataset(const RunConfig& cfg, const ParamMap& backbone,
                            const ParamMap& head, const std::vector<SamplePair>& data,
                            const FeatureCache* shared = nullptr);

} // namespace cdt
