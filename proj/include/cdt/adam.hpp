#pragma once

#include <map>
#include <string>

#include "cdt/autodiff.hpp"
#include "cdt/tensor.hpp"

namespace cdt {

// Named parameter set. std::map keeps iteration order stable (sorted by name)
// so serialization and update order are deterministic.
using ParamMap = std::map<std::string, Tensor>;

// Adam with bias correction (Kingma & Ba defaults except lr).
struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
  public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    long step_count() const { return step_; }

    // Applies one update in-place over `params` using grads keyed by param id.
    // Parameters without a gradient entry (or with an all-zero one) still tick
    // the shared step counter but keep their moment estimates consistent.
    void step(ParamMap& params, const GradMap& grads);

  private:
    struct Moments {
        std::vector<double> m, v;
    };

    AdamConfig cfg_;
    long step_ = 0;
    std::map<std::string, Moments> moments_;
};

} // namespace cdt
