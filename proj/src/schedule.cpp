#include "cdt/schedule.hpp"

#include <cmath>
#include <string>

namespace cdt {

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 1) throw config_error("schedule: T must be >= 1, got " + std::to_string(T));
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
        throw config_error("schedule: need 0 < beta_start <= beta_end < 1, got [" +
                           std::to_string(beta_start) + ", " + std::to_string(beta_end) + "]");
    }
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.sigma.resize(T);
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        const double frac = T > 1 ? static_cast<double>(i) / (T - 1) : 0.0;
        s.beta[i] = beta_start + (beta_end - beta_start) * frac;
        s.alpha[i] = 1.0 - s.beta[i];
        prod *= s.alpha[i];
        s.alpha_bar[i] = prod;
        s.sigma[i] = std::sqrt(s.beta[i]);
        if (i > 0 && !(s.alpha_bar[i] < s.alpha_bar[i - 1])) {
            throw config_error("schedule: alpha_bar not strictly decreasing");
        }
    }
    if (!(s.alpha_bar[T - 1] > 0.0)) {
        throw config_error("schedule: alpha_bar underflowed to zero; T too large");
    }
    return s;
}

} // namespace cdt
