#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "cdt/tensor.hpp"

namespace cdt {

// Reverse-mode gradients over a fixed op vocabulary. Ops are pure functions;
// when any input carries a graph node the result records one, otherwise the
// result is a plain tensor and evaluation costs nothing extra. All reductions
// and accumulations run in a fixed left-to-right order.

using GradMap = std::unordered_map<std::uint64_t, Tensor>;

// d loss / d parameter for every parameter leaf reachable from `loss`.
// `loss` must be a scalar produced by recorded computation.
GradMap backward(const Tensor& loss);

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

// a: m-by-k, b: k-by-n (2-d only).
Tensor matmul(const Tensor& a, const Tensor& b);

// x: C_in-by-H-by-W, w: C_out-by-C_in-by-kh-by-kw, bias: C_out (may be empty
// Tensor for no bias). Zero padding `pad` on both spatial axes.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

// x: C-by-H-by-W -> C-by-2H-by-2W, nearest neighbor.
Tensor upsample_nearest2(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor abs_val(const Tensor& x);

// x: C-by-H-by-W split into `groups` channel groups, each normalized by its
// own mean/variance, then scaled by gamma[c] and shifted by beta[c].
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Backward warping with zero padding. feat: C-by-H-by-W, flow: 2-by-H-by-W
// with channel 0 = dx (columns) and channel 1 = dy (rows):
//   out(c, y, x) = bilinear sample of feat(c, .) at (y + dy(y,x), x + dx(y,x))
// Samples falling outside the grid contribute zero. Differentiable in both
// feat and flow. Exactly-zero flow reproduces feat bit-for-bit.
Tensor bilinear_sample(const Tensor& feat, const Tensor& flow);

// Concatenate C-by-H-by-W tensors along the channel axis.
Tensor concat_channels(std::span<const Tensor> parts);
Tensor concat_channels(const Tensor& a, const Tensor& b);

// Channels [first, first+count) of a C-by-H-by-W tensor.
Tensor channels(const Tensor& x, int first, int count);

Tensor reshape(const Tensor& x, const Shape& shape);

// x: C-by-H-by-W plus per-channel bias v: C broadcast over H, W.
Tensor add_channel_bias(const Tensor& x, const Tensor& v);

// Full reductions to a scalar, fixed left-to-right summation.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Elementwise binary cross-entropy with logits in the stable form
//   max(z,0) - z*m + log1p(exp(-|z|))
// mask values must be exactly 0 or 1 and never carry gradient.
Tensor bce_with_logits(const Tensor& logits, const Tensor& mask);

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per element. The
// independent oracle for backward(); calls f only, never the graph.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double h = 1e-5);

} // namespace cdt
