#pragma once

#include <vector>

#include "cdt/adam.hpp"
#include "cdt/fdaf.hpp"
#include "cdt/rng.hpp"
#include "cdt/tensor.hpp"

#include <json.hpp>

namespace cdt {

struct CdConfig {
    int head_channels = 16;
    double tau = 0.5;

    void validate() const;
};

// Pixel confusion counts and the usual change-detection ratios. Ratios with a
// zero denominator are reported as 0 with `degenerate` set.
struct MetricsReport {
    long long tp = 0, fp = 0, fn = 0, tn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0, iou = 0.0, oa = 0.0;
    double tau = 0.5;
    bool degenerate = false;
};

nlohmann::json metrics_to_json(const MetricsReport& r);

// Per fused level: 3x3 conv to head_channels + ReLU, nearest upsample to the
// full resolution, elementwise sum over levels, 1x1 conv to 1-channel logits.
ParamMap init_cd_params(const CdConfig& cfg, const std::vector<int>& fused_channels, Rng& rng);

Tensor classify(const FusedFeatures& fused, const ParamMap& params, const CdConfig& cfg,
                int out_h, int out_w);

// Mean over pixels of the stable binary cross entropy; mask values must be
// exactly 0 or 1.
Tensor bce_loss(const Tensor& logits, const Tensor& mask);

// prob >= tau maps to 1 (inclusive boundary). Requires 0 < tau < 1.
Tensor threshold(const Tensor& prob_map, double tau);

MetricsReport evaluate(const Tensor& pred_mask, const Tensor& truth_mask);

// Ratios from raw confusion counts; used directly when micro-averaging
// across samples.
MetricsReport metrics_from_counts(long long tp, long long fp, long long fn, long long tn,
                                  double tau);

} // namespace cdt
