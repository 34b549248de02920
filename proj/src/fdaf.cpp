#include "cdt/fdaf.hpp"

#include <cmath>

#include "cdt/autodiff.hpp"

namespace cdt {

AlignMode parse_align_mode(const std::string& s) {
    if (s == "dual") return AlignMode::dual;
    if (s == "off") return AlignMode::off;
    throw config_error("fdaf: unknown mode '" + s + "' (expected \"dual\" or \"off\")");
}

std::string align_mode_name(AlignMode m) {
    return m == AlignMode::dual ? "dual" : "off";
}

void FdafConfig::validate() const {
    if (!(max_flow > 0.0)) throw config_error("fdaf: max_flow must be positive");
    if (hidden < 1) throw config_error("fdaf: hidden width must be positive");
}

double FdafConfig::level_max_flow(int li, int nlevels) const {
    if (li < 0 || li >= nlevels) throw contract_error("fdaf: bad level index");
    return max_flow / static_cast<double>(1 << (nlevels - 1 - li));
}

namespace {

const Tensor& P(const ParamMap& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw contract_error("fdaf: missing parameter '" + name + "'");
    return it->second;
}

Tensor scaled_gaussian(Rng& rng, const Shape& shape, double std) {
    Tensor g = gaussian(rng, shape);
    std::vector<double> v(g.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = g[i] * std;
    return Tensor::from_data(shape, std::move(v));
}

// Raw 4-channel head output for one input order.
Tensor head_raw(const Tensor& a, const Tensor& b, const ParamMap& params,
                const std::string& prefix) {
    Tensor x = concat_channels(a, b);
    x = relu(conv2d(x, P(params, prefix + ".c1.w"), P(params, prefix + ".c1.b"), 1, 1));
    x = relu(conv2d(x, P(params, prefix + ".c2.w"), P(params, prefix + ".c2.b"), 1, 1));
    return conv2d(x, P(params, prefix + ".c3.w"), P(params, prefix + ".c3.b"), 1, 1);
}

} // namespace

ParamMap init_fdaf_params(const FdafConfig& cfg, const std::vector<int>& level_channels,
                          Rng& rng) {
    cfg.validate();
    if (level_channels.empty()) throw config_error("fdaf: no pyramid levels");
    ParamMap out;
    for (std::size_t li = 0; li < level_channels.size(); ++li) {
        const int c = level_channels[li];
        if (c < 1) throw config_error("fdaf: non-positive level channel count");
        const std::string p = "flow" + std::to_string(li);
        const int cin = 2 * c;
        out[p + ".c1.w"] = Tensor::parameter(
            scaled_gaussian(rng, {cfg.hidden, cin, 3, 3}, std::sqrt(2.0 / (cin * 9))));
        out[p + ".c1.b"] = Tensor::parameter(Tensor::zeros({cfg.hidden}));
        out[p + ".c2.w"] = Tensor::parameter(scaled_gaussian(
            rng, {cfg.hidden, cfg.hidden, 3, 3}, std::sqrt(2.0 / (cfg.hidden * 9))));
        out[p + ".c2.b"] = Tensor::parameter(Tensor::zeros({cfg.hidden}));
        out[p + ".c3.w"] = Tensor::parameter(Tensor::zeros({4, cfg.hidden, 3, 3}));
        out[p + ".c3.b"] = Tensor::parameter(Tensor::zeros({4}));
    }
    return out;
}

FlowPair estimate_flows(const Tensor& featA, const Tensor& featB, const ParamMap& params,
                        const std::string& prefix, double max_flow, int hidden) {
    if (!featA.same_shape(featB)) {
        throw contract_error("fdaf: feature shapes differ, " + shape_str(featA.shape()) +
                             " vs " + shape_str(featB.shape()));
    }
    if (featA.shape().size() != 3) throw contract_error("fdaf: features must be CHW");
    (void)hidden; // width is fixed by the parameter shapes

    const Tensor hab = head_raw(featA, featB, params, prefix);
    const Tensor hba = head_raw(featB, featA, params, prefix);
    // Average the two input orders with their flow channels swapped, then keep
    // only the order-antisymmetric part: identical inputs (hab == hba) and
    // zero parameters both land exactly on zero flow, and swapping A and B
    // negates the result.
    const Tensor sym1 = mul_scalar(add(channels(hab, 0, 2), channels(hba, 2, 2)), 0.5);
    const Tensor sym2 = mul_scalar(add(channels(hab, 2, 2), channels(hba, 0, 2)), 0.5);
    const Tensor raw = mul_scalar(sub(sym1, sym2), 0.5);
    FlowPair flows;
    flows.ab = mul_scalar(tanh_act(raw), max_flow);
    flows.ba = mul_scalar(flows.ab, -1.0);
    return flows;
}

Tensor bilinear_warp(const Tensor& feat, const Tensor& flow) {
    if (feat.shape().size() != 3 || flow.shape().size() != 3 || flow.shape()[0] != 2 ||
        flow.shape()[1] != feat.shape()[1] || flow.shape()[2] != feat.shape()[2]) {
        throw contract_error("fdaf: warp needs CHW features and a matching 2-channel flow, got " +
                             shape_str(feat.shape()) + " / " + shape_str(flow.shape()));
    }
    return bilinear_sample(feat, flow);
}

FusedFeatures fdaf_fuse(const FeaturePyramid& pyrA, const FeaturePyramid& pyrB,
                        const ParamMap& params, const FdafConfig& cfg) {
    cfg.validate();
    if (pyrA.levels.empty() || pyrA.levels.size() != pyrB.levels.size()) {
        throw contract_error("fdaf: pyramids have incompatible level counts");
    }
    const int nlevels = static_cast<int>(pyrA.levels.size());
    FusedFeatures out;
    out.mode = cfg.mode;
    for (int li = 0; li < nlevels; ++li) {
        const Tensor& a = pyrA.levels[static_cast<std::size_t>(li)].feat;
        const Tensor& b = pyrB.levels[static_cast<std::size_t>(li)].feat;
        if (!a.same_shape(b)) {
            throw contract_error("fdaf: level " + std::to_string(li) + " shapes differ");
        }
        Tensor fused;
        if (cfg.mode == AlignMode::off) {
            const Tensor d = abs_val(sub(a, b));
            fused = concat_channels(d, d);
        } else {
            const FlowPair flows =
                estimate_flows(a, b, params, "flow" + std::to_string(li),
                               cfg.level_max_flow(li, nlevels), cfg.hidden);
            const Tensor a_warp = bilinear_warp(a, flows.ba);
            const Tensor b_warp = bilinear_warp(b, flows.ab);
            fused = concat_channels(abs_val(sub(a_warp, b)), abs_val(sub(a, b_warp)));
        }
        out.levels.push_back({pyrA.levels[static_cast<std::size_t>(li)].h,
                              pyrA.levels[static_cast<std::size_t>(li)].w, std::move(fused)});
    }
    return out;
}

} // namespace cdt
