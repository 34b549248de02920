#include "cdt/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "cdt/autodiff.hpp"

namespace cdt {

Tensor forward_diffuse(const Tensor& u0, int k, const Tensor& eps, const NoiseSchedule& s) {
    if (!u0.same_shape(eps)) {
        throw contract_error("forward_diffuse: u0 " + shape_str(u0.shape()) + " vs eps " +
                             shape_str(eps.shape()));
    }
    const double ab = s.alpha_bar_at(k);
    return add(mul_scalar(u0, std::sqrt(ab)), mul_scalar(eps, std::sqrt(1.0 - ab)));
}

Tensor denoise_loss(const Denoiser& model, const std::vector<Tensor>& u0_batch, Rng& rng,
                    const NoiseSchedule& s) {
    if (u0_batch.empty()) throw contract_error("denoise_loss: empty batch");
    Tensor total;
    for (const Tensor& u0 : u0_batch) {
        const int k = static_cast<int>(rng.uniform_int(1, s.T));
        const Tensor eps = gaussian(rng, u0.shape());
        const Tensor u_k = forward_diffuse(u0, k, eps, s);
        const Tensor diff = sub(model.predict(u_k, k), eps);
        const Tensor term = mean(mul(diff, diff));
        total = total.defined() ? add(total, term) : term;
    }
    return mul_scalar(total, 1.0 / static_cast<double>(u0_batch.size()));
}

Tensor reverse_step(const Denoiser& model, const Tensor& u_k, int k, const Tensor& q,
                    const NoiseSchedule& s) {
    if (!s.valid_k(k)) {
        throw contract_error("reverse_step: timestep " + std::to_string(k) + " outside [1, " +
                             std::to_string(s.T) + "]");
    }
    if (!u_k.same_shape(q)) {
        throw contract_error("reverse_step: q shape " + shape_str(q.shape()) +
                             " does not match u_k " + shape_str(u_k.shape()));
    }
    if (k == 1) {
        for (std::size_t i = 0; i < q.size(); ++i) {
            if (q[i] != 0.0) throw contract_error("reverse_step: q must be zero at k = 1");
        }
    }
    const double a = s.alpha_at(k);
    const double ab = s.alpha_bar_at(k);
    const double coef = (1.0 - a) / std::sqrt(1.0 - ab);
    Tensor out = mul_scalar(sub(u_k, mul_scalar(model.predict(u_k, k), coef)),
                            1.0 / std::sqrt(a));
    if (k > 1) out = add(out, mul_scalar(q, s.sigma_at(k)));
    return out;
}

Tensor sample(const Denoiser& model, const Shape& shape, Rng& rng, const NoiseSchedule& s) {
    Tensor u = gaussian(rng, shape);
    for (int k = s.T; k >= 1; --k) {
        const Tensor q = k > 1 ? gaussian(rng, shape) : Tensor::zeros(shape);
        u = reverse_step(model, u, k, q, s);
    }
    std::vector<double> clamped(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) clamped[i] = std::clamp(u[i], -1.0, 1.0);
    return Tensor::from_data(shape, std::move(clamped));
}

FeaturePyramid extract_features(const Denoiser& model, const Tensor& image,
                                const std::vector<int>& timesteps, Rng& rng,
                                const NoiseSchedule& s) {
    if (timesteps.empty()) throw contract_error("extract_features: no timesteps");
    for (int k : timesteps) {
        if (!s.valid_k(k)) {
            throw contract_error("extract_features: timestep " + std::to_string(k) +
                                 " outside [1, " + std::to_string(s.T) + "]");
        }
    }
    std::vector<FeaturePyramid> per_step;
    per_step.reserve(timesteps.size());
    for (int k : timesteps) {
        const Tensor eps = gaussian(rng, image.shape());
        const Tensor u_k = forward_diffuse(image, k, eps, s);
        per_step.push_back(model.forward(u_k, k).taps);
    }
    const std::size_t nlevels = per_step.front().levels.size();
    for (const auto& p : per_step) {
        if (p.levels.size() != nlevels) {
            throw contract_error("extract_features: inconsistent tap count across timesteps");
        }
    }
    FeaturePyramid out;
    out.timesteps = timesteps;
    for (std::size_t li = 0; li < nlevels; ++li) {
        std::vector<Tensor> parts;
        parts.reserve(per_step.size());
        for (const auto& p : per_step) parts.push_back(p.levels[li].feat);
        Tensor cat = parts.size() == 1
                         ? parts.front()
                         : concat_channels(std::span<const Tensor>(parts.data(), parts.size()));
        out.levels.push_back({per_step.front().levels[li].h, per_step.front().levels[li].w,
                              std::move(cat)});
    }
    return out;
}

} // namespace cdt
