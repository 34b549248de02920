#include "cdt/cdnet.hpp"

#include <cmath>

#include "cdt/autodiff.hpp"

namespace cdt {

void CdConfig::validate() const {
    if (head_channels < 1) throw config_error("cd: head_channels must be positive");
    if (!(tau > 0.0 && tau < 1.0)) throw config_error("cd: tau must lie in (0, 1)");
}

nlohmann::json metrics_to_json(const MetricsReport& r) {
    return nlohmann::json{{"tp", r.tp},
                          {"fp", r.fp},
                          {"fn", r.fn},
                          {"tn", r.tn},
                          {"precision", r.precision},
                          {"recall", r.recall},
                          {"f1", r.f1},
                          {"iou", r.iou},
                          {"oa", r.oa},
                          {"tau", r.tau},
                          {"degenerate", r.degenerate}};
}

namespace {

const Tensor& P(const ParamMap& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw contract_error("cd: missing parameter '" + name + "'");
    return it->second;
}

Tensor scaled_gaussian(Rng& rng, const Shape& shape, double std) {
    Tensor g = gaussian(rng, shape);
    std::vector<double> v(g.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = g[i] * std;
    return Tensor::from_data(shape, std::move(v));
}

} // namespace

ParamMap init_cd_params(const CdConfig& cfg, const std::vector<int>& fused_channels, Rng& rng) {
    cfg.validate();
    if (fused_channels.empty()) throw config_error("cd: no pyramid levels");
    ParamMap out;
    for (std::size_t li = 0; li < fused_channels.size(); ++li) {
        const int cin = fused_channels[li];
        if (cin < 1) throw config_error("cd: non-positive fused channel count");
        const std::string p = "cd" + std::to_string(li);
        out[p + ".w"] = Tensor::parameter(
            scaled_gaussian(rng, {cfg.head_channels, cin, 3, 3}, std::sqrt(2.0 / (cin * 9))));
        out[p + ".b"] = Tensor::parameter(Tensor::zeros({cfg.head_channels}));
    }
    out["out.w"] = Tensor::parameter(
        scaled_gaussian(rng, {1, cfg.head_channels, 1, 1}, std::sqrt(2.0 / cfg.head_channels)));
    out["out.b"] = Tensor::parameter(Tensor::zeros({1}));
    return out;
}

Tensor classify(const FusedFeatures& fused, const ParamMap& params, const CdConfig& cfg,
                int out_h, int out_w) {
    cfg.validate();
    if (fused.levels.empty()) throw contract_error("cd: no fused levels");
    if (out_h < 1 || out_w < 1) throw contract_error("cd: bad output extents");
    Tensor acc;
    for (std::size_t li = 0; li < fused.levels.size(); ++li) {
        const Tensor& f = fused.levels[li].feat;
        const std::string p = "cd" + std::to_string(li);
        Tensor y = relu(conv2d(f, P(params, p + ".w"), P(params, p + ".b"), 1, 1));
        int h = y.shape()[1], w = y.shape()[2];
        while (h < out_h || w < out_w) {
            y = upsample_nearest2(y);
            h = y.shape()[1];
            w = y.shape()[2];
        }
        if (h != out_h || w != out_w) {
            throw contract_error("cd: level " + std::to_string(li) +
                                 " does not upsample to the output extents");
        }
        acc = acc.defined() ? add(acc, y) : y;
    }
    return conv2d(acc, P(params, "out.w"), P(params, "out.b"), 1, 0);
}

Tensor bce_loss(const Tensor& logits, const Tensor& mask) {
    return mean(bce_with_logits(logits, mask));
}

Tensor threshold(const Tensor& prob_map, double tau) {
    if (!(tau > 0.0 && tau < 1.0)) throw config_error("threshold: tau must lie in (0, 1)");
    std::vector<double> out(prob_map.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = prob_map[i] >= tau ? 1.0 : 0.0;
    return Tensor::from_data(prob_map.shape(), std::move(out));
}

MetricsReport evaluate(const Tensor& pred_mask, const Tensor& truth_mask) {
    if (!pred_mask.same_shape(truth_mask)) {
        throw contract_error("evaluate: shape mismatch " + shape_str(pred_mask.shape()) +
                             " vs " + shape_str(truth_mask.shape()));
    }
    long long tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < pred_mask.size(); ++i) {
        const double p = pred_mask[i], t = truth_mask[i];
        if ((p != 0.0 && p != 1.0) || (t != 0.0 && t != 1.0)) {
            throw contract_error("evaluate: masks must be exactly binary");
        }
        if (p == 1.0 && t == 1.0)
            ++tp;
        else if (p == 1.0)
            ++fp;
        else if (t == 1.0)
            ++fn;
        else
            ++tn;
    }
    return metrics_from_counts(tp, fp, fn, tn, 0.5);
}

MetricsReport metrics_from_counts(long long tp, long long fp, long long fn, long long tn,
                                  double tau) {
    MetricsReport r;
    r.tp = tp;
    r.fp = fp;
    r.fn = fn;
    r.tn = tn;
    r.tau = tau;
    auto ratio = [&r](long long num, long long den) {
        if (den == 0) {
            r.degenerate = true;
            return 0.0;
        }
        return static_cast<double>(num) / static_cast<double>(den);
    };
    r.precision = ratio(r.tp, r.tp + r.fp);
    r.recall = ratio(r.tp, r.tp + r.fn);
    const double pr = r.precision + r.recall;
    if (pr > 0.0) {
        r.f1 = 2.0 * r.precision * r.recall / pr;
    } else {
        r.f1 = 0.0;
        r.degenerate = true;
    }
    r.iou = ratio(r.tp, r.tp + r.fp + r.fn);
    r.oa = ratio(r.tp + r.tn, r.tp + r.fp + r.fn + r.tn);
    return r;
}

} // namespace cdt
