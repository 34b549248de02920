#include "cdt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "cdt/node.hpp"

namespace cdt {

namespace {

using detail::GradSink;
using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using BackpropFn = std::function<void(const std::vector<double>&, GradSink&)>;

int ceil_div(int a, int b) {
    return a >= 0 ? (a + b - 1) / b : a / b;
}

int floor_div(int a, int b) {
    return a >= 0 ? a / b : -((-a + b - 1) / b);
}

double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

} // namespace

class OpBuilder {
  public:
    static const NodePtr& node(const Tensor& t) { return t.node_; }
    static const std::shared_ptr<const std::vector<double>>& data(const Tensor& t) {
        return t.data_;
    }

    static Tensor make(Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
                       BackpropFn fn) {
        for (double v : data) {
            if (!std::isfinite(v)) throw numeric_error("non-finite value in op result");
        }
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<const std::vector<double>>(std::move(data));
        bool any = false;
        for (const auto& p : parents) any = any || (p != nullptr);
        if (any) {
            auto n = std::make_shared<Node>();
            n->shape = t.shape_;
            for (auto& p : parents) {
                if (p) n->parents.push_back(p);
            }
            n->backprop = std::move(fn);
            t.node_ = std::move(n);
        }
        return t;
    }
};

const std::shared_ptr<detail::Node>& node_of(const Tensor& t) {
    return OpBuilder::node(t);
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw contract_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

// Tensors are immutable, so closures can share the forward buffers directly.
const std::shared_ptr<const std::vector<double>>& data_ptr(const Tensor& t) {
    return OpBuilder::data(t);
}

// Adds up * coeff into the parent buffer when the parent records gradients.
void axpy_into(GradSink& sink, const NodePtr& parent, std::size_t size,
               const std::vector<double>& up, double coeff) {
    if (!parent) return;
    auto& buf = sink.buffer(parent.get(), size);
    for (std::size_t i = 0; i < size; ++i) buf[i] += coeff * up[i];
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const std::size_t n = a.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
    NodePtr na = node_of(a), nb = node_of(b);
    return OpBuilder::make(a.shape(), std::move(out), {na, nb},
                           [na, nb, n](const std::vector<double>& up, GradSink& sink) {
                               axpy_into(sink, na, n, up, 1.0);
                               axpy_into(sink, nb, n, up, 1.0);
                           });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    const std::size_t n = a.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
    NodePtr na = node_of(a), nb = node_of(b);
    return OpBuilder::make(a.shape(), std::move(out), {na, nb},
                           [na, nb, n](const std::vector<double>& up, GradSink& sink) {
                               axpy_into(sink, na, n, up, 1.0);
                               axpy_into(sink, nb, n, up, -1.0);
                           });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const std::size_t n = a.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
    NodePtr na = node_of(a), nb = node_of(b);
    auto ad = data_ptr(a);
    auto bd = data_ptr(b);
    return OpBuilder::make(a.shape(), std::move(out), {na, nb},
                           [na, nb, ad, bd, n](const std::vector<double>& up, GradSink& sink) {
                               if (na) {
                                   auto& g = sink.buffer(na.get(), n);
                                   for (std::size_t i = 0; i < n; ++i) g[i] += up[i] * (*bd)[i];
                               }
                               if (nb) {
                                   auto& g = sink.buffer(nb.get(), n);
                                   for (std::size_t i = 0; i < n; ++i) g[i] += up[i] * (*ad)[i];
                               }
                           });
}

Tensor add_scalar(const Tensor& a, double c) {
    const std::size_t n = a.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + c;
    NodePtr na = node_of(a);
    return OpBuilder::make(a.shape(), std::move(out), {na},
                           [na, n](const std::vector<double>& up, GradSink& sink) {
                               axpy_into(sink, na, n, up, 1.0);
                           });
}

Tensor mul_scalar(const Tensor& a, double c) {
    const std::size_t n = a.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * c;
    NodePtr na = node_of(a);
    return OpBuilder::make(a.shape(), std::move(out), {na},
                           [na, n, c](const std::vector<double>& up, GradSink& sink) {
                               axpy_into(sink, na, n, up, c);
                           });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0]) {
        throw contract_error("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const int m = a.shape()[0], k = a.shape()[1], nn = b.shape()[1];
    std::vector<double> out(static_cast<std::size_t>(m) * nn, 0.0);
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<std::size_t>(i) * k + p];
            const std::size_t bo = static_cast<std::size_t>(p) * nn;
            const std::size_t oo = static_cast<std::size_t>(i) * nn;
            for (int j = 0; j < nn; ++j) out[oo + j] += av * b[bo + j];
        }
    }
    NodePtr na = node_of(a), nb = node_of(b);
    auto ad = data_ptr(a);
    auto bd = data_ptr(b);
    return OpBuilder::make(
        {m, nn}, std::move(out), {na, nb},
        [na, nb, ad, bd, m, k, nn](const std::vector<double>& up, GradSink& sink) {
            if (na) {
                auto& g = sink.buffer(na.get(), static_cast<std::size_t>(m) * k);
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (int j = 0; j < nn; ++j)
                            acc += up[static_cast<std::size_t>(i) * nn + j] *
                                   (*bd)[static_cast<std::size_t>(p) * nn + j];
                        g[static_cast<std::size_t>(i) * k + p] += acc;
                    }
            }
            if (nb) {
                auto& g = sink.buffer(nb.get(), static_cast<std::size_t>(k) * nn);
                for (int p = 0; p < k; ++p)
                    for (int i = 0; i < m; ++i) {
                        const double av = (*ad)[static_cast<std::size_t>(i) * k + p];
                        const std::size_t uo = static_cast<std::size_t>(i) * nn;
                        const std::size_t go = static_cast<std::size_t>(p) * nn;
                        for (int j = 0; j < nn; ++j) g[go + j] += av * up[uo + j];
                    }
            }
        });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    if (x.shape().size() != 3 || w.shape().size() != 4) {
        throw contract_error("conv2d: expected CHW input and OIHW weights");
    }
    const int ci = x.shape()[0], h = x.shape()[1], ww = x.shape()[2];
    const int co = w.shape()[0], kci = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
    if (kci != ci) {
        throw contract_error("conv2d: input channels " + std::to_string(ci) +
                             " vs weight channels " + std::to_string(kci));
    }
    if (bias.defined() && (bias.shape().size() != 1 || bias.shape()[0] != co)) {
        throw contract_error("conv2d: bias shape mismatch");
    }
    if (stride < 1 || pad < 0) throw contract_error("conv2d: bad stride/pad");
    if (h + 2 * pad < kh || ww + 2 * pad < kw) {
        throw contract_error("conv2d: kernel larger than padded input");
    }
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (ww + 2 * pad - kw) / stride + 1;

    std::vector<double> out(static_cast<std::size_t>(co) * oh * ow, 0.0);
    if (bias.defined()) {
        for (int o = 0; o < co; ++o) {
            const double bv = bias[static_cast<std::size_t>(o)];
            std::fill(out.begin() + static_cast<std::size_t>(o) * oh * ow,
                      out.begin() + static_cast<std::size_t>(o + 1) * oh * ow, bv);
        }
    }
    const auto& xd = x.values();
    const auto& wd = w.values();
    for (int o = 0; o < co; ++o) {
        for (int c = 0; c < ci; ++c) {
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const double wv =
                        wd[((static_cast<std::size_t>(o) * ci + c) * kh + ky) * kw + kx];
                    if (wv == 0.0) continue;
                    const int oy_lo = std::max(0, ceil_div(pad - ky, stride));
                    const int oy_hi = std::min(oh - 1, floor_div(h - 1 - ky + pad, stride));
                    const int ox_lo = std::max(0, ceil_div(pad - kx, stride));
                    const int ox_hi = std::min(ow - 1, floor_div(ww - 1 - kx + pad, stride));
                    for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        const double* xrow = &xd[(static_cast<std::size_t>(c) * h + iy) * ww];
                        double* orow = &out[(static_cast<std::size_t>(o) * oh + oy) * ow];
                        for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                            orow[ox] += wv * xrow[ox * stride + kx - pad];
                        }
                    }
                }
            }
        }
    }

    NodePtr nx = node_of(x), nw = node_of(w), nb = node_of(bias);
    auto xp = data_ptr(x);
    auto wp = data_ptr(w);
    return OpBuilder::make(
        {co, oh, ow}, std::move(out), {nx, nw, nb},
        [=](const std::vector<double>& up, GradSink& sink) {
            if (nx) {
                auto& gx = sink.buffer(nx.get(), static_cast<std::size_t>(ci) * h * ww);
                for (int o = 0; o < co; ++o)
                    for (int c = 0; c < ci; ++c)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const double wv =
                                    (*wp)[((static_cast<std::size_t>(o) * ci + c) * kh + ky) * kw +
                                          kx];
                                if (wv == 0.0) continue;
                                const int oy_lo = std::max(0, ceil_div(pad - ky, stride));
                                const int oy_hi =
                                    std::min(oh - 1, floor_div(h - 1 - ky + pad, stride));
                                const int ox_lo = std::max(0, ceil_div(pad - kx, stride));
                                const int ox_hi =
                                    std::min(ow - 1, floor_div(ww - 1 - kx + pad, stride));
                                for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                                    const int iy = oy * stride + ky - pad;
                                    double* grow = &gx[(static_cast<std::size_t>(c) * h + iy) * ww];
                                    const double* urow =
                                        &up[(static_cast<std::size_t>(o) * oh + oy) * ow];
                                    for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                        grow[ox * stride + kx - pad] += wv * urow[ox];
                                    }
                                }
                            }
            }
            if (nw) {
                auto& gw =
                    sink.buffer(nw.get(), static_cast<std::size_t>(co) * ci * kh * kw);
                for (int o = 0; o < co; ++o)
                    for (int c = 0; c < ci; ++c)
                        for (int ky = 0; ky < kh; ++ky)
                            for (int kx = 0; kx < kw; ++kx) {
                                const int oy_lo = std::max(0, ceil_div(pad - ky, stride));
                                const int oy_hi =
                                    std::min(oh - 1, floor_div(h - 1 - ky + pad, stride));
                                const int ox_lo = std::max(0, ceil_div(pad - kx, stride));
                                const int ox_hi =
                                    std::min(ow - 1, floor_div(ww - 1 - kx + pad, stride));
                                double acc = 0.0;
                                for (int oy = oy_lo; oy <= oy_hi; ++oy) {
                                    const int iy = oy * stride + ky - pad;
                                    const double* xrow =
                                        &(*xp)[(static_cast<std::size_t>(c) * h + iy) * ww];
                                    const double* urow =
                                        &up[(static_cast<std::size_t>(o) * oh + oy) * ow];
                                    for (int ox = ox_lo; ox <= ox_hi; ++ox) {
                                        acc += xrow[ox * stride + kx - pad] * urow[ox];
                                    }
                                }
                                gw[((static_cast<std::size_t>(o) * ci + c) * kh + ky) * kw + kx] +=
                                    acc;
                            }
            }
            if (nb) {
                auto& gb = sink.buffer(nb.get(), static_cast<std::size_t>(co));
                for (int o = 0; o < co; ++o) {
                    double acc = 0.0;
                    const std::size_t base = static_cast<std::size_t>(o) * oh * ow;
                    for (int i = 0; i < oh * ow; ++i) acc += up[base + i];
                    gb[o] += acc;
                }
            }
        });
}

Tensor upsample_nearest2(const Tensor& x) {
    if (x.shape().size() != 3) throw contract_error("upsample_nearest2: expected CHW");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    std::vector<double> out(static_cast<std::size_t>(c) * 4 * h * w);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y) {
            const double* irow = &x.values()[(static_cast<std::size_t>(ch) * h + y / 2) * w];
            double* orow = &out[(static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w];
            for (int xx = 0; xx < 2 * w; ++xx) orow[xx] = irow[xx / 2];
        }
    NodePtr nx = node_of(x);
    return OpBuilder::make({c, 2 * h, 2 * w}, std::move(out), {nx},
                           [nx, c, h, w](const std::vector<double>& up, GradSink& sink) {
                               if (!nx) return;
                               auto& g = sink.buffer(nx.get(),
                                                     static_cast<std::size_t>(c) * h * w);
                               for (int ch = 0; ch < c; ++ch)
                                   for (int y = 0; y < 2 * h; ++y) {
                                       const double* urow =
                                           &up[(static_cast<std::size_t>(ch) * 2 * h + y) * 2 * w];
                                       double* grow =
                                           &g[(static_cast<std::size_t>(ch) * h + y / 2) * w];
                                       for (int xx = 0; xx < 2 * w; ++xx)
                                           grow[xx / 2] += urow[xx];
                                   }
                           });
}

namespace {

Tensor unary_op(const Tensor& x, const std::function<double(double)>& f,
                std::function<void(const std::vector<double>&, const std::vector<double>&,
                                   const std::vector<double>&, std::vector<double>&)>
                    dfn) {
    const std::size_t n = x.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i]);
    NodePtr nx = node_of(x);
    auto xd = data_ptr(x);
    auto yd = std::make_shared<std::vector<double>>(out);
    return OpBuilder::make(x.shape(), std::move(out), {nx},
                           [nx, xd, yd, dfn, n](const std::vector<double>& up, GradSink& sink) {
                               if (!nx) return;
                               auto& g = sink.buffer(nx.get(), n);
                               dfn(up, *xd, *yd, g);
                           });
}

} // namespace

Tensor relu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](const std::vector<double>& up, const std::vector<double>& xd,
           const std::vector<double>&, std::vector<double>& g) {
            for (std::size_t i = 0; i < up.size(); ++i)
                if (xd[i] > 0.0) g[i] += up[i];
        });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op(
        x, [](double v) { return stable_sigmoid(v); },
        [](const std::vector<double>& up, const std::vector<double>&,
           const std::vector<double>& yd, std::vector<double>& g) {
            for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i] * yd[i] * (1.0 - yd[i]);
        });
}

Tensor tanh_act(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::tanh(v); },
        [](const std::vector<double>& up, const std::vector<double>&,
           const std::vector<double>& yd, std::vector<double>& g) {
            for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i] * (1.0 - yd[i] * yd[i]);
        });
}

Tensor abs_val(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::abs(v); },
        [](const std::vector<double>& up, const std::vector<double>& xd,
           const std::vector<double>&, std::vector<double>& g) {
            for (std::size_t i = 0; i < up.size(); ++i) {
                if (xd[i] > 0.0)
                    g[i] += up[i];
                else if (xd[i] < 0.0)
                    g[i] -= up[i];
            }
        });
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps) {
    if (x.shape().size() != 3) throw contract_error("group_norm: expected CHW");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    if (groups < 1 || c % groups != 0) {
        throw contract_error("group_norm: groups " + std::to_string(groups) +
                             " must divide channels " + std::to_string(c));
    }
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw contract_error("group_norm: gamma/beta must have shape [C]");
    }
    const int cpg = c / groups;
    const std::size_t gsize = static_cast<std::size_t>(cpg) * h * w;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const auto& xd = x.values();

    std::vector<double> mu(groups), inv(groups);
    for (int g = 0; g < groups; ++g) {
        const std::size_t base = static_cast<std::size_t>(g) * gsize;
        double s = 0.0;
        for (std::size_t i = 0; i < gsize; ++i) s += xd[base + i];
        const double m = s / static_cast<double>(gsize);
        double v = 0.0;
        for (std::size_t i = 0; i < gsize; ++i) {
            const double d = xd[base + i] - m;
            v += d * d;
        }
        mu[g] = m;
        inv[g] = 1.0 / std::sqrt(v / static_cast<double>(gsize) + eps);
    }

    std::vector<double> out(xd.size());
    for (int ch = 0; ch < c; ++ch) {
        const int g = ch / cpg;
        const double gm = gamma[static_cast<std::size_t>(ch)];
        const double bt = beta[static_cast<std::size_t>(ch)];
        const std::size_t base = static_cast<std::size_t>(ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
            out[base + i] = gm * (xd[base + i] - mu[g]) * inv[g] + bt;
        }
    }

    NodePtr nx = node_of(x), ng = node_of(gamma), nb = node_of(beta);
    auto xp = data_ptr(x);
    auto gp = data_ptr(gamma);
    auto mup = std::make_shared<std::vector<double>>(std::move(mu));
    auto invp = std::make_shared<std::vector<double>>(std::move(inv));
    return OpBuilder::make(
        x.shape(), std::move(out), {nx, ng, nb},
        [=](const std::vector<double>& up, GradSink& sink) {
            const std::size_t n = xp->size();
            // dxhat for every element, reused by all three grads
            std::vector<double> dxhat(n);
            for (int ch = 0; ch < c; ++ch) {
                const double gm = (*gp)[static_cast<std::size_t>(ch)];
                const std::size_t base = static_cast<std::size_t>(ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) dxhat[base + i] = up[base + i] * gm;
            }
            if (nx) {
                auto& gx = sink.buffer(nx.get(), n);
                for (int g = 0; g < groups; ++g) {
                    const std::size_t base = static_cast<std::size_t>(g) * gsize;
                    const double m = (*mup)[g];
                    const double iv = (*invp)[g];
                    double dvar = 0.0, dmu1 = 0.0, xsum = 0.0;
                    for (std::size_t i = 0; i < gsize; ++i) {
                        const double xc = (*xp)[base + i] - m;
                        dvar += dxhat[base + i] * xc;
                        dmu1 += dxhat[base + i];
                        xsum += xc;
                    }
                    dvar *= -0.5 * iv * iv * iv;
                    const double gn = static_cast<double>(gsize);
                    const double dmu = -dmu1 * iv + dvar * (-2.0 / gn) * xsum;
                    for (std::size_t i = 0; i < gsize; ++i) {
                        const double xc = (*xp)[base + i] - m;
                        gx[base + i] +=
                            dxhat[base + i] * iv + dvar * 2.0 * xc / gn + dmu / gn;
                    }
                }
            }
            if (ng) {
                auto& gg = sink.buffer(ng.get(), static_cast<std::size_t>(c));
                for (int ch = 0; ch < c; ++ch) {
                    const int g = ch / cpg;
                    const std::size_t base = static_cast<std::size_t>(ch) * hw;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < hw; ++i) {
                        acc += up[base + i] * ((*xp)[base + i] - (*mup)[g]) * (*invp)[g];
                    }
                    gg[ch] += acc;
                }
            }
            if (nb) {
                auto& gb = sink.buffer(nb.get(), static_cast<std::size_t>(c));
                for (int ch = 0; ch < c; ++ch) {
                    const std::size_t base = static_cast<std::size_t>(ch) * hw;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < hw; ++i) acc += up[base + i];
                    gb[ch] += acc;
                }
            }
        });
}

Tensor bilinear_sample(const Tensor& feat, const Tensor& flow) {
    if (feat.shape().size() != 3) throw contract_error("bilinear_sample: feat must be CHW");
    const int c = feat.shape()[0], h = feat.shape()[1], w = feat.shape()[2];
    if (flow.shape() != Shape{2, h, w}) {
        throw contract_error("bilinear_sample: flow must be 2x" + std::to_string(h) + "x" +
                             std::to_string(w) + ", got " + shape_str(flow.shape()));
    }
    const auto& fd = feat.values();
    const auto& fl = flow.values();
    const std::size_t hw = static_cast<std::size_t>(h) * w;

    auto at = [&](int ch, int y, int x) -> double {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
        return fd[(static_cast<std::size_t>(ch) * h + y) * w + x];
    };

    std::vector<double> out(static_cast<std::size_t>(c) * hw, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t pix = static_cast<std::size_t>(y) * w + x;
            const double sx = x + fl[pix];
            const double sy = y + fl[hw + pix];
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0;
            const double fy = sy - y0;
            const double w00 = (1.0 - fy) * (1.0 - fx);
            const double w01 = (1.0 - fy) * fx;
            const double w10 = fy * (1.0 - fx);
            const double w11 = fy * fx;
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                if (w00 != 0.0) acc += w00 * at(ch, y0, x0);
                if (w01 != 0.0) acc += w01 * at(ch, y0, x0 + 1);
                if (w10 != 0.0) acc += w10 * at(ch, y0 + 1, x0);
                if (w11 != 0.0) acc += w11 * at(ch, y0 + 1, x0 + 1);
                out[static_cast<std::size_t>(ch) * hw + pix] = acc;
            }
        }
    }

    NodePtr nf = node_of(feat), nl = node_of(flow);
    auto fp = data_ptr(feat);
    auto lp = data_ptr(flow);
    return OpBuilder::make(
        feat.shape(), std::move(out), {nf, nl},
        [=](const std::vector<double>& up, GradSink& sink) {
            auto fat = [&](int ch, int y, int x) -> double {
                if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
                return (*fp)[(static_cast<std::size_t>(ch) * h + y) * w + x];
            };
            std::vector<double>* gf =
                nf ? &sink.buffer(nf.get(), static_cast<std::size_t>(c) * hw) : nullptr;
            std::vector<double>* gl = nl ? &sink.buffer(nl.get(), 2 * hw) : nullptr;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const std::size_t pix = static_cast<std::size_t>(y) * w + x;
                    const double sx = x + (*lp)[pix];
                    const double sy = y + (*lp)[hw + pix];
                    const int x0 = static_cast<int>(std::floor(sx));
                    const int y0 = static_cast<int>(std::floor(sy));
                    const double fx = sx - x0;
                    const double fy = sy - y0;
                    const double w00 = (1.0 - fy) * (1.0 - fx);
                    const double w01 = (1.0 - fy) * fx;
                    const double w10 = fy * (1.0 - fx);
                    const double w11 = fy * fx;
                    double ddx = 0.0, ddy = 0.0;
                    for (int ch = 0; ch < c; ++ch) {
                        const double u = up[static_cast<std::size_t>(ch) * hw + pix];
                        if (u == 0.0) continue;
                        if (gf) {
                            auto scatter = [&](int yy, int xx, double wgt) {
                                if (wgt == 0.0 || yy < 0 || yy >= h || xx < 0 || xx >= w) return;
                                (*gf)[(static_cast<std::size_t>(ch) * h + yy) * w + xx] += wgt * u;
                            };
                            scatter(y0, x0, w00);
                            scatter(y0, x0 + 1, w01);
                            scatter(y0 + 1, x0, w10);
                            scatter(y0 + 1, x0 + 1, w11);
                        }
                        if (gl) {
                            const double f00 = fat(ch, y0, x0);
                            const double f01 = fat(ch, y0, x0 + 1);
                            const double f10 = fat(ch, y0 + 1, x0);
                            const double f11 = fat(ch, y0 + 1, x0 + 1);
                            ddx += u * ((1.0 - fy) * (f01 - f00) + fy * (f11 - f10));
                            ddy += u * ((1.0 - fx) * (f10 - f00) + fx * (f11 - f01));
                        }
                    }
                    if (gl) {
                        (*gl)[pix] += ddx;
                        (*gl)[hw + pix] += ddy;
                    }
                }
            }
        });
}

Tensor concat_channels(std::span<const Tensor> parts) {
    if (parts.empty()) throw contract_error("concat_channels: no inputs");
    const int h = parts[0].shape().size() == 3 ? parts[0].shape()[1] : -1;
    const int w = h >= 0 ? parts[0].shape()[2] : -1;
    int ctotal = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != 3 || p.shape()[1] != h || p.shape()[2] != w) {
            throw contract_error("concat_channels: incompatible part shape " +
                                 shape_str(p.shape()));
        }
        ctotal += p.shape()[0];
    }
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(ctotal) * hw);
    std::vector<NodePtr> nodes;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
        nodes.push_back(node_of(p));
        sizes.push_back(p.size());
    }
    auto nodes_copy = nodes;
    return OpBuilder::make({ctotal, h, w}, std::move(out), std::move(nodes),
                           [nodes_copy, sizes](const std::vector<double>& up, GradSink& sink) {
                               std::size_t off = 0;
                               for (std::size_t i = 0; i < nodes_copy.size(); ++i) {
                                   if (nodes_copy[i]) {
                                       auto& g = sink.buffer(nodes_copy[i].get(), sizes[i]);
                                       for (std::size_t j = 0; j < sizes[i]; ++j)
                                           g[j] += up[off + j];
                                   }
                                   off += sizes[i];
                               }
                           });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const Tensor parts[2] = {a, b};
    return concat_channels(std::span<const Tensor>(parts, 2));
}

Tensor channels(const Tensor& x, int first, int count) {
    if (x.shape().size() != 3) throw contract_error("channels: expected CHW");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    if (first < 0 || count < 1 || first + count > c) {
        throw contract_error("channels: slice [" + std::to_string(first) + ", " +
                             std::to_string(first + count) + ") out of range for C=" +
                             std::to_string(c));
    }
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> out(x.values().begin() + static_cast<std::size_t>(first) * hw,
                            x.values().begin() + static_cast<std::size_t>(first + count) * hw);
    NodePtr nx = node_of(x);
    return OpBuilder::make({count, h, w}, std::move(out), {nx},
                           [nx, c, hw, first, count](const std::vector<double>& up,
                                                     GradSink& sink) {
                               if (!nx) return;
                               auto& g = sink.buffer(nx.get(), static_cast<std::size_t>(c) * hw);
                               const std::size_t off = static_cast<std::size_t>(first) * hw;
                               for (std::size_t i = 0; i < static_cast<std::size_t>(count) * hw;
                                    ++i)
                                   g[off + i] += up[i];
                           });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    check_shape_valid(shape);
    if (shape_size(shape) != x.size()) {
        throw shape_error("reshape: size mismatch " + shape_str(x.shape()) + " -> " +
                          shape_str(shape));
    }
    std::vector<double> out(x.values());
    NodePtr nx = node_of(x);
    const std::size_t n = x.size();
    return OpBuilder::make(shape, std::move(out), {nx},
                           [nx, n](const std::vector<double>& up, GradSink& sink) {
                               axpy_into(sink, nx, n, up, 1.0);
                           });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& v) {
    if (x.shape().size() != 3) throw contract_error("add_channel_bias: expected CHW");
    const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
    if (v.shape() != Shape{c}) {
        throw contract_error("add_channel_bias: bias must have shape [C=" + std::to_string(c) +
                             "], got " + shape_str(v.shape()));
    }
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> out(x.size());
    for (int ch = 0; ch < c; ++ch) {
        const double bv = v[static_cast<std::size_t>(ch)];
        const std::size_t base = static_cast<std::size_t>(ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) out[base + i] = x[base + i] + bv;
    }
    NodePtr nx = node_of(x), nv = node_of(v);
    return OpBuilder::make(x.shape(), std::move(out), {nx, nv},
                           [nx, nv, c, hw](const std::vector<double>& up, GradSink& sink) {
                               if (nx) {
                                   axpy_into(sink, nx, static_cast<std::size_t>(c) * hw, up, 1.0);
                               }
                               if (nv) {
                                   auto& g = sink.buffer(nv.get(), static_cast<std::size_t>(c));
                                   for (int ch = 0; ch < c; ++ch) {
                                       double acc = 0.0;
                                       const std::size_t base = static_cast<std::size_t>(ch) * hw;
                                       for (std::size_t i = 0; i < hw; ++i) acc += up[base + i];
                                       g[ch] += acc;
                                   }
                               }
                           });
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    NodePtr nx = node_of(x);
    return OpBuilder::make({1}, {acc}, {nx},
                           [nx, n](const std::vector<double>& up, GradSink& sink) {
                               if (!nx) return;
                               auto& g = sink.buffer(nx.get(), n);
                               for (std::size_t i = 0; i < n; ++i) g[i] += up[0];
                           });
}

Tensor mean(const Tensor& x) {
    double acc = 0.0;
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    NodePtr nx = node_of(x);
    return OpBuilder::make({1}, {acc / static_cast<double>(n)}, {nx},
                           [nx, n](const std::vector<double>& up, GradSink& sink) {
                               if (!nx) return;
                               auto& g = sink.buffer(nx.get(), n);
                               const double s = up[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < n; ++i) g[i] += s;
                           });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& mask) {
    require_same_shape(logits, mask, "bce_with_logits");
    if (mask.requires_grad()) {
        throw contract_error("bce_with_logits: mask must not require gradients");
    }
    const std::size_t n = logits.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i] != 0.0 && mask[i] != 1.0) {
            throw contract_error("bce_with_logits: mask values must be exactly 0 or 1");
        }
    }
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double z = logits[i];
        out[i] = std::max(z, 0.0) - z * mask[i] + std::log1p(std::exp(-std::abs(z)));
    }
    NodePtr nz = node_of(logits);
    auto zd = data_ptr(logits);
    auto md = data_ptr(mask);
    return OpBuilder::make(logits.shape(), std::move(out), {nz},
                           [nz, zd, md, n](const std::vector<double>& up, GradSink& sink) {
                               if (!nz) return;
                               auto& g = sink.buffer(nz.get(), n);
                               for (std::size_t i = 0; i < n; ++i) {
                                   g[i] += up[i] * (stable_sigmoid((*zd)[i]) - (*md)[i]);
                               }
                           });
}

GradMap backward(const Tensor& loss) {
    if (!loss.is_scalar()) {
        throw contract_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    const auto& root = node_of(loss);
    if (!root) {
        throw contract_error("backward: loss carries no recorded graph");
    }

    // Iterative post-order DFS; parents visited before a node lands in order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    std::unordered_map<const Node*, std::vector<double>> bufs;
    detail::GradSink sink(bufs);
    bufs[root.get()] = {1.0};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (!node->backprop) continue;
        auto found = bufs.find(node);
        if (found == bufs.end()) continue; // no influence on the loss
        node->backprop(found->second, sink);
    }

    GradMap grads;
    for (Node* node : order) {
        if (node->leaf_id == 0) continue;
        auto found = bufs.find(node);
        if (found != bufs.end()) {
            grads.emplace(node->leaf_id, Tensor::from_data(node->shape,
                                                           std::move(found->second)));
        } else {
            grads.emplace(node->leaf_id, Tensor::zeros(node->shape));
        }
    }
    return grads;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h) {
    if (h <= 0.0) throw contract_error("finite_diff_grad: h must be positive");
    const std::size_t n = x.size();
    std::vector<double> base(x.values());
    std::vector<double> grad(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> plus(base), minus(base);
        plus[i] += h;
        minus[i] -= h;
        const double fp = f(Tensor::from_data(x.shape(), std::move(plus)));
        const double fm = f(Tensor::from_data(x.shape(), std::move(minus)));
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return Tensor::from_data(x.shape(), std::move(grad));
}

} // namespace cdt
