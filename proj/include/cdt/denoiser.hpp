#pragma once

#include <vector>

#include "cdt/adam.hpp"
#include "cdt/rng.hpp"
#include "cdt/tensor.hpp"

namespace cdt {

// Multi-resolution feature stack, coarsest level first.
struct FeatureLevel {
    int h = 0, w = 0;
    Tensor feat; // C-by-h-by-w
};

struct FeaturePyramid {
    std::vector<FeatureLevel> levels;
    std::vector<int> timesteps; // noise levels the features were taken at
};

struct DenoiserOutput {
    Tensor eps_hat;      // predicted noise, same shape as the input
    FeaturePyramid taps; // registered decoder activations, coarse to fine
};

// Noise-prediction network interface: eps_hat = M(u_k, k).
class Denoiser {
  public:
    virtual ~Denoiser() = default;
    virtual DenoiserOutput forward(const Tensor& u_k, int k) const = 0;
    Tensor predict(const Tensor& u_k, int k) const { return forward(u_k, k).eps_hat; }
};

struct UNetConfig {
    int in_channels = 1;
    int base_channels = 8;
    int depth = 2;                    // number of down/up stages
    int time_embed_dim = 32;
    std::vector<int> tap_layers = {0, 1}; // decoder stages; 0 = coarsest
    int norm_groups = 4;

    void validate() const;
    // Channels of decoder stage `i`'s activation (the tap source).
    int tap_channels(int i) const;
};

// Sinusoidal embedding: element 2i = sin(k / 10000^(2i/dim)), 2i+1 = cos(same).
Tensor time_embedding(int k, int dim);

// He fan-in normal weights, zero biases, unit norm scales. Deterministic in rng.
ParamMap init_unet_params(const UNetConfig& cfg, Rng& rng);

// Forward pass; taps collect the activation entering each decoder upsample:
// stage 0 is the bottleneck output, stage i>0 the i-th decoder stage output.
DenoiserOutput unet_forward(const UNetConfig& cfg, const ParamMap& params, const Tensor& u_k,
                            int k);

class UNet : public Denoiser {
  public:
    UNet(UNetConfig cfg, ParamMap params);
    static UNet make(const UNetConfig& cfg, Rng& rng);

    const UNetConfig& config() const { return cfg_; }
    const ParamMap& params() const { return params_; }
    ParamMap& params_mut() { return params_; }

    DenoiserOutput forward(const Tensor& u_k, int k) const override {
        return unet_forward(cfg_, params_, u_k, k);
    }

  private:
    UNetConfig cfg_;
    ParamMap params_;
};

} // namespace cdt
