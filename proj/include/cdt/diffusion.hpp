#pragma once

#include <vector>

#include "cdt/denoiser.hpp"
#include "cdt/rng.hpp"
#include "cdt/schedule.hpp"
#include "cdt/tensor.hpp"

namespace cdt {

// Forward noising: sqrt(alpha_bar_k) * u0 + sqrt(1 - alpha_bar_k) * eps.
Tensor forward_diffuse(const Tensor& u0, int k, const Tensor& eps, const NoiseSchedule& s);

// Monte Carlo noise-prediction objective: for each batch element draw
// k ~ uniform{1..T} then eps ~ N(0, I) — exactly one uniform_int and one
// gaussian per element, in batch order; tests replay this draw protocol.
// Returns mean over batch and pixels of (M(u_k, k) - eps)^2; differentiable.
Tensor denoise_loss(const Denoiser& model, const std::vector<Tensor>& u0_batch, Rng& rng,
                    const NoiseSchedule& s);

// One reverse-chain step:
//   (u_k - (1-alpha_k)/sqrt(1-alpha_bar_k) * M(u_k,k)) / sqrt(alpha_k) + sigma_k * q
// q must be all-zero when k == 1 (no noise on the final step).
Tensor reverse_step(const Denoiser& model, const Tensor& u_k, int k, const Tensor& q,
                    const NoiseSchedule& s);

// Ancestral sampling k = T..1 from pure Gaussian noise; the result is clamped
// to [-1, 1] once, after the final step only.
Tensor sample(const Denoiser& model, const Shape& shape, Rng& rng, const NoiseSchedule& s);

// Feature extraction for change detection: per requested timestep, noise the
// image with a fresh eps (one gaussian per timestep, in order), run the
// denoiser, collect its taps; levels are concatenated channel-wise across
// timesteps at matching resolutions.
FeaturePyramid extract_features(const Denoiser& model, const Tensor& image,
                                const std::vector<int>& timesteps, Rng& rng,
                                const NoiseSchedule& s);

} // namespace cdt
