#pragma once

#include <vector>

#include "cdt/error.hpp"

namespace cdt {

// DDPM noise schedule over timesteps k = 1..T. Index 0 of each vector holds
// k = 1. alpha_bar is the running product of alpha and drives both the
// forward-noising scale and the reverse-step denominator; sigma = sqrt(beta)
// scales the noise injected on each reverse step.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha;      // 1 - beta
    std::vector<double> alpha_bar;  // prod_{j<=k} alpha_j
    std::vector<double> sigma;      // sqrt(beta)

    double beta_at(int k) const { return at(beta, k); }
    double alpha_at(int k) const { return at(alpha, k); }
    double alpha_bar_at(int k) const { return at(alpha_bar, k); }
    double sigma_at(int k) const { return at(sigma, k); }

    bool valid_k(int k) const { return k >= 1 && k <= T; }

  private:
    double at(const std::vector<double>& v, int k) const {
        if (!valid_k(k)) {
            throw contract_error("timestep " + std::to_string(k) + " outside [1, " +
                                 std::to_string(T) + "]");
        }
        return v[static_cast<std::size_t>(k - 1)];
    }
};

// Linear beta schedule inclusive of both endpoints (T=1 uses beta_start).
// Requires T >= 1 and 0 < beta_start <= beta_end < 1.
NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end);

} // namespace cdt
