#include "cdt/denoiser.hpp"

#include <cmath>
#include <string>

#include "cdt/autodiff.hpp"

namespace cdt {

void UNetConfig::validate() const {
    if (in_channels < 1 || base_channels < 1 || depth < 1 || norm_groups < 1) {
        throw config_error("unet: channels/depth/groups must be positive");
    }
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
        throw config_error("unet: time_embed_dim must be even and >= 2");
    }
    if (base_channels % norm_groups != 0) {
        throw config_error("unet: norm_groups must divide base_channels");
    }
    if (tap_layers.empty()) throw config_error("unet: tap_layers must not be empty");
    int prev = -1;
    for (int t : tap_layers) {
        if (t < 0 || t >= depth) {
            throw config_error("unet: tap layer " + std::to_string(t) +
                               " outside decoder stages [0, " + std::to_string(depth - 1) + "]");
        }
        if (t <= prev) throw config_error("unet: tap_layers must be strictly increasing");
        prev = t;
    }
}

int UNetConfig::tap_channels(int i) const {
    if (i < 0 || i >= depth) throw config_error("unet: bad tap index");
    return base_channels << (depth - i);
}

Tensor time_embedding(int k, int dim) {
    if (dim < 2 || dim % 2 != 0) throw config_error("time_embedding: dim must be even");
    if (k < 0) throw contract_error("time_embedding: negative timestep");
    std::vector<double> v(dim);
    for (int i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / dim);
        v[2 * i] = std::sin(k * freq);
        v[2 * i + 1] = std::cos(k * freq);
    }
    return Tensor::from_data({dim}, std::move(v));
}

namespace {

const Tensor& P(const ParamMap& params, const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw contract_error("unet: missing parameter '" + name + "'");
    return it->second;
}

// Encoder/decoder channel widths: stage i outputs base * 2^i.
int width(const UNetConfig& cfg, int i) {
    return cfg.base_channels << i;
}

void init_stage(ParamMap& out, Rng& rng, const std::string& name, int cin, int cout, int dim) {
    const double wstd = std::sqrt(2.0 / (cin * 9));
    std::vector<double> w(static_cast<std::size_t>(cout) * cin * 9);
    Tensor g = gaussian(rng, {cout, cin, 3, 3});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = g[i] * wstd;
    out[name + ".w"] = Tensor::parameter(Tensor::from_data({cout, cin, 3, 3}, std::move(w)));
    out[name + ".b"] = Tensor::parameter(Tensor::zeros({cout}));
    out[name + ".gn_g"] = Tensor::parameter(Tensor::full({cout}, 1.0));
    out[name + ".gn_b"] = Tensor::parameter(Tensor::zeros({cout}));
    const double tstd = std::sqrt(2.0 / dim);
    Tensor tg = gaussian(rng, {cout, dim});
    std::vector<double> tw(tg.size());
    for (std::size_t i = 0; i < tw.size(); ++i) tw[i] = tg[i] * tstd;
    out[name + ".time_w"] = Tensor::parameter(Tensor::from_data({cout, dim}, std::move(tw)));
    out[name + ".time_b"] = Tensor::parameter(Tensor::zeros({cout}));
}

} // namespace

ParamMap init_unet_params(const UNetConfig& cfg, Rng& rng) {
    cfg.validate();
    ParamMap out;
    init_stage(out, rng, "stem", cfg.in_channels, width(cfg, 0), cfg.time_embed_dim);
    for (int i = 1; i <= cfg.depth; ++i) {
        init_stage(out, rng, "down" + std::to_string(i), width(cfg, i - 1), width(cfg, i),
                   cfg.time_embed_dim);
    }
    init_stage(out, rng, "mid", width(cfg, cfg.depth), width(cfg, cfg.depth),
               cfg.time_embed_dim);
    for (int j = 1; j <= cfg.depth; ++j) {
        const int skip = width(cfg, cfg.depth - j);
        const int cin = width(cfg, cfg.depth - j + 1) + skip;
        init_stage(out, rng, "up" + std::to_string(j), cin, skip, cfg.time_embed_dim);
    }
    const int hin = width(cfg, 0);
    const double hstd = std::sqrt(2.0 / (hin * 9));
    Tensor hg = gaussian(rng, {cfg.in_channels, hin, 3, 3});
    std::vector<double> hw(hg.size());
    for (std::size_t i = 0; i < hw.size(); ++i) hw[i] = hg[i] * hstd;
    out["head.w"] =
        Tensor::parameter(Tensor::from_data({cfg.in_channels, hin, 3, 3}, std::move(hw)));
    out["head.b"] = Tensor::parameter(Tensor::zeros({cfg.in_channels}));
    return out;
}

DenoiserOutput unet_forward(const UNetConfig& cfg, const ParamMap& params, const Tensor& u_k,
                            int k) {
    cfg.validate();
    if (u_k.shape().size() != 3 || u_k.shape()[0] != cfg.in_channels) {
        throw contract_error("unet: expected " + std::to_string(cfg.in_channels) +
                             "-channel CHW input, got " + shape_str(u_k.shape()));
    }
    const int h = u_k.shape()[1], w = u_k.shape()[2];
    const int div = 1 << cfg.depth;
    if (h % div != 0 || w % div != 0 || h < div || w < div) {
        throw contract_error("unet: spatial extents " + shape_str({h, w}) +
                             " must be positive multiples of " + std::to_string(div));
    }

    const Tensor emb_col = reshape(time_embedding(k, cfg.time_embed_dim),
                                   {cfg.time_embed_dim, 1});
    auto stage = [&](const Tensor& x, const std::string& name, int stride) {
        Tensor y = conv2d(x, P(params, name + ".w"), P(params, name + ".b"), stride, 1);
        y = group_norm(y, cfg.norm_groups, P(params, name + ".gn_g"),
                       P(params, name + ".gn_b"));
        y = relu(y);
        const int c = y.shape()[0];
        Tensor t = add(reshape(matmul(P(params, name + ".time_w"), emb_col), {c}),
                       P(params, name + ".time_b"));
        return add_channel_bias(y, t);
    };

    std::vector<Tensor> enc;
    enc.push_back(stage(u_k, "stem", 1));
    for (int i = 1; i <= cfg.depth; ++i) {
        enc.push_back(stage(enc.back(), "down" + std::to_string(i), 2));
    }
    Tensor x = stage(enc.back(), "mid", 1);

    FeaturePyramid taps;
    taps.timesteps = {k};
    auto maybe_tap = [&](int stage_idx, const Tensor& act) {
        for (int t : cfg.tap_layers) {
            if (t == stage_idx) {
                taps.levels.push_back({act.shape()[1], act.shape()[2], act});
            }
        }
    };
    maybe_tap(0, x);
    for (int j = 1; j <= cfg.depth; ++j) {
        x = upsample_nearest2(x);
        x = concat_channels(x, enc[static_cast<std::size_t>(cfg.depth - j)]);
        x = stage(x, "up" + std::to_string(j), 1);
        if (j < cfg.depth) maybe_tap(j, x);
    }
    Tensor eps_hat = conv2d(x, P(params, "head.w"), P(params, "head.b"), 1, 1);
    return {eps_hat, std::move(taps)};
}

UNet::UNet(UNetConfig cfg, ParamMap params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
}

UNet UNet::make(const UNetConfig& cfg, Rng& rng) {
    return UNet(cfg, init_unet_params(cfg, rng));
}

} // namespace cdt
