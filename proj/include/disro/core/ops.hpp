#pragma once

#include "disro/core/graph.hpp"

#include <vector>

namespace disro::nn {

// Elementwise and scalar ops.
NodeRef add(const NodeRef& a, const NodeRef& b);
NodeRef sub(const NodeRef& a, const NodeRef& b);
NodeRef neg(const NodeRef& a);
NodeRef scale(const NodeRef& a, double c);
NodeRef add_scalar(const NodeRef& a, double c);
NodeRef hadamard(const NodeRef& a, const NodeRef& b);
NodeRef divide(const NodeRef& a, const NodeRef& b);
NodeRef relu(const NodeRef& a);
NodeRef exp_op(const NodeRef& a);
NodeRef log_op(const NodeRef& a);
NodeRef sqrt_op(const NodeRef& a);
NodeRef abs_op(const NodeRef& a);          // d|x|/dx at 0 taken as 0
NodeRef clamp_min(const NodeRef& a, double lo);  // gradient passes where a > lo
NodeRef sigmoid(const NodeRef& a);         // logits clamped to |x| <= 36, output strictly in (0,1)

// Reductions and broadcasts.
NodeRef sum_all(const NodeRef& a);                    // -> [1]
NodeRef mean_all(const NodeRef& a);                   // -> [1]
NodeRef row_sum(const NodeRef& a);                    // [B,D] -> [B,1]
NodeRef broadcast_rows(const NodeRef& v, int64_t d);  // [B,1] -> [B,D]

// Linear algebra.
NodeRef matmul(const NodeRef& a, const NodeRef& b);               // [M,K]x[K,N]
NodeRef linear(const NodeRef& x, const NodeRef& w, const NodeRef& b);  // x[B,I], w[O,I], b[O]

// Convolutions, NCHW layout.
NodeRef conv2d(const NodeRef& x, const NodeRef& w, const NodeRef& b, int64_t stride, int64_t pad);
// Stride-1 transposed convolution; w layout [Ci, Co, kh, kw].
NodeRef conv_transpose2d(const NodeRef& x, const NodeRef& w, const NodeRef& b, int64_t pad);

// Structural ops.
NodeRef global_avg_pool(const NodeRef& x);                          // [B,C,H,W] -> [B,C]
// Fixed per-channel affine y = x * scale[c] + shift[c] (constants, e.g. input normalization).
NodeRef channel_affine(const NodeRef& x, const std::vector<double>& scale,
                       const std::vector<double>& shift);
NodeRef concat_channels(const std::vector<NodeRef>& xs);            // along dim 1
NodeRef group_norm(const NodeRef& x, const NodeRef& gamma, const NodeRef& beta, int64_t groups,
                   double eps = 1e-5);

/// Gradient reversal: identity forward, backward multiplies upstream by -lambda.
NodeRef grl(const NodeRef& a, double lambda);

/// Cut the graph: value passes through, gradients stop.
NodeRef detach(const NodeRef& a);

/// Same data, new shape (numel preserved).
NodeRef reshape(const NodeRef& a, Shape s);

// Classification losses (per-sample, [B,1] outputs; labels are class indices).
NodeRef log_softmax(const NodeRef& z);                                        // [B,C] -> [B,C]
NodeRef softmax_ce(const NodeRef& logits, const std::vector<int>& labels);    // stable CE
// Clamped negative margin: -max(z_y - max_{k!=y} z_k, -kappa).
NodeRef cw_margin(const NodeRef& logits, const std::vector<int>& labels, double kappa);
// Difference-of-logits-ratio: -(z_y - max_{k!=y} z_k) / max(z_(1) - z_(3), floor).
NodeRef dlr(const NodeRef& logits, const std::vector<int>& labels, double denom_floor = 1e-12);

// Plain-tensor helpers shared with non-graph code paths.
namespace raw {
void im2col(const Tensor& x, int64_t kh, int64_t kw, int64_t stride, int64_t pad, Tensor& col,
            int64_t& ho, int64_t& wo);
void col2im(const Tensor& col, const Shape& x_shape, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, Tensor& dx);
/// Flip a conv-transpose weight [Ci,Co,kh,kw] into the equivalent conv weight [Co,Ci,kh,kw].
Tensor flip_transpose_weight(const Tensor& w);
}  // namespace raw

}  // namespace disro::nn
