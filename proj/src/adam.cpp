#include "cdt/adam.hpp"

#include <cmath>

namespace cdt {

void Adam::step(ParamMap& params, const GradMap& grads) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));

    for (auto& [name, param] : params) {
        if (param.param_id() == 0) {
            throw contract_error("Adam: '" + name + "' is not a parameter leaf");
        }
        const std::size_t n = param.size();
        auto& mom = moments_[name];
        if (mom.m.empty()) {
            mom.m.assign(n, 0.0);
            mom.v.assign(n, 0.0);
        } else if (mom.m.size() != n) {
            throw contract_error("Adam: parameter '" + name + "' changed size");
        }

        auto git = grads.find(param.param_id());
        const std::vector<double>* g = git != grads.end() ? &git->second.values() : nullptr;

        std::vector<double> next(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = g ? (*g)[i] : 0.0;
            mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * gi;
            mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            next[i] = param[i] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            if (!std::isfinite(next[i])) {
                throw numeric_error("Adam: non-finite update for '" + name + "'");
            }
        }
        param = Tensor::parameter(Tensor::from_data(param.shape(), std::move(next)));
    }
}

} // namespace cdt
