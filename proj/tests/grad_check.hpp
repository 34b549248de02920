#pragma once

// Shared gradient-check harness: wraps inputs as parameters, builds a scalar
// loss, and compares backward() against central finite differences. Relative
// error uses max(|fd|, |bp|, 1) in the denominator so near-zero gradients
// compare absolutely.

#include <functional>
#include <vector>

#include "cdt/autodiff.hpp"
#include "cdt/rng.hpp"
#include "cdt/tensor.hpp"

namespace gradcheck {

using BuildFn = std::function<cdt::Tensor(const std::vector<cdt::Tensor>&)>;

inline double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1.0});
    return std::abs(a - b) / denom;
}

// Worst relative error across all elements of all inputs.
inline double max_grad_error(const std::vector<cdt::Tensor>& inputs, const BuildFn& build,
                             double h = 1e-5) {
    using cdt::Tensor;
    std::vector<Tensor> params;
    params.reserve(inputs.size());
    for (const auto& t : inputs) params.push_back(Tensor::parameter(t));
    const Tensor loss = build(params);
    const cdt::GradMap grads = cdt::backward(loss);

    double worst = 0.0;
    for (std::size_t pi = 0; pi < inputs.size(); ++pi) {
        const Tensor fd = cdt::finite_diff_grad(
            [&](const Tensor& x) {
                std::vector<Tensor> probe = inputs;
                probe[pi] = x;
                return build(probe).scalar_value();
            },
            inputs[pi], h);
        auto it = grads.find(params[pi].param_id());
        const Tensor bp = it != grads.end() ? it->second : Tensor::zeros(inputs[pi].shape());
        for (std::size_t i = 0; i < fd.size(); ++i) {
            worst = std::max(worst, rel_err(fd[i], bp[i]));
        }
    }
    return worst;
}

// Uniform values in [lo, hi].
inline cdt::Tensor rand_tensor(cdt::Rng& rng, const cdt::Shape& shape, double lo = -1.0,
                               double hi = 1.0) {
    std::vector<double> v(cdt::shape_size(shape));
    for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
    return cdt::Tensor::from_data(shape, std::move(v));
}

// Values bounded away from zero (for relu/abs kinks).
inline cdt::Tensor rand_tensor_no_kink(cdt::Rng& rng, const cdt::Shape& shape,
                                       double margin = 0.05) {
    std::vector<double> v(cdt::shape_size(shape));
    for (auto& x : v) {
        const double mag = margin + (1.0 - margin) * rng.uniform();
        x = rng.uniform() < 0.5 ? -mag : mag;
    }
    return cdt::Tensor::from_data(shape, std::move(v));
}

// Flow values whose fractional parts stay away from the bilinear lattice.
inline cdt::Tensor rand_flow(cdt::Rng& rng, int h, int w, double max_mag = 2.0) {
    cdt::Shape shape{2, h, w};
    std::vector<double> v(cdt::shape_size(shape));
    for (auto& x : v) {
        const double whole = std::floor((2.0 * rng.uniform() - 1.0) * max_mag);
        x = whole + 0.1 + 0.8 * rng.uniform();
    }
    return cdt::Tensor::from_data(shape, std::move(v));
}

} // namespace gradcheck
