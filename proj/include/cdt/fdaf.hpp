#pragma once

#include <string>
#include <vector>

#include "cdt/adam.hpp"
#include "cdt/denoiser.hpp"
#include "cdt/rng.hpp"
#include "cdt/tensor.hpp"

namespace cdt {

enum class AlignMode { dual, off };

AlignMode parse_align_mode(const std::string& s); // "dual" | "off"
std::string align_mode_name(AlignMode m);

struct FdafConfig {
    AlignMode mode = AlignMode::dual;
    double max_flow = 8.0; // pixels at the finest level, halved per coarser level
    int hidden = 32;       // flow head width

    void validate() const;
    // Flow bound for pyramid level `li` of `nlevels` (coarse -> fine order).
    double level_max_flow(int li, int nlevels) const;
};

struct FlowPair {
    Tensor ab; // displacement applied to B to align it toward A (2-by-H-by-W)
    Tensor ba; // and the reverse direction; ba == -ab by construction
};

struct FusedFeatures {
    std::vector<FeatureLevel> levels;
    AlignMode mode = AlignMode::dual;
};

// One flow head per pyramid level (levels differ in channel count); names are
// prefixed "flow<li>.". Hidden convs use He init, the output conv starts at
// zero so training begins from the identity alignment.
ParamMap init_fdaf_params(const FdafConfig& cfg, const std::vector<int>& level_channels,
                          Rng& rng);

// Flow estimation on one level. A 3-layer conv head reads concat(A, B); its
// four output channels are antisymmetrized over the two input orders (the
// channel-swapped evaluations of concat(A,B) and concat(B,A)), so identical
// inputs and zero parameters both give exactly zero flow, and swapping the
// inputs swaps (and negates) the flows. The result is bounded by
// max_flow * tanh(raw).
FlowPair estimate_flows(const Tensor& featA, const Tensor& featB, const ParamMap& params,
                        const std::string& prefix, double max_flow, int hidden);

// Backward warping with zero padding; flow channel 0 = dx, 1 = dy.
Tensor bilinear_warp(const Tensor& feat, const Tensor& flow);

// Per level: estimate flows, warp each side toward the other, and emit
//   dual: concat(|warp(A, ba) - B|, |A - warp(B, ab)|)
//   off:  concat(|A - B|, |A - B|)       (flow parameters unused)
// Channel count is 2x the level width in both modes.
FusedFeatures fdaf_fuse(const FeaturePyramid& pyrA, const FeaturePyramid& pyrB,
                        const ParamMap& params, const FdafConfig& cfg);

} // namespace cdt
