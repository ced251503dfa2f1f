#pragma once

#include <vector>

#include "xilab/tensor.hpp"

// Differentiable primitives. Every VJP is itself built from these ops, so
// backward passes may be differentiated again (double backprop and deeper).
// VJPs only reference the op's parents, never its output; the graph stays
// acyclic and reference counting frees it.

namespace xilab::autodiff {

// ---- elementwise (same shape unless noted) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor exp(const Tensor& x);
Tensor relu(const Tensor& x); // subgradient at 0 is 0

// ---- reductions and their broadcast adjoints ----
Tensor sum_all(const Tensor& x);                         // -> scalar
Tensor expand_scalar(const Tensor& s, Shape shape);      // scalar -> shape

Tensor row_sum(const Tensor& x);                         // [N,C] -> [N]
Tensor expand_cols(const Tensor& v, int cols);           // [N] -> [N,C]
Tensor col_sum(const Tensor& x);                         // [N,C] -> [C]
Tensor expand_rows(const Tensor& v, int rows);           // [C] -> [N,C]

Tensor sum_hw(const Tensor& x);                          // [N,K,h,w] -> [N,K]
Tensor expand_hw(const Tensor& v, int h, int w);         // [N,K] -> [N,K,h,w]
Tensor sum_channels(const Tensor& x);                    // [N,K,h,w] -> [N,1,h,w]
Tensor expand_channels(const Tensor& x, int channels);   // [N,1,h,w] -> [N,K,h,w]
Tensor sum_over_nhw(const Tensor& x);                    // [N,K,H,W] -> [K]
Tensor expand_bias_nchw(const Tensor& b, int n, int h, int w); // [K] -> [N,K,H,W]

// ---- shape ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x); // 2-D

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b); // [N,D]x[D,E] -> [N,E]

/// Affine map input*weights + bias; [N,D]x[D,E]+[E] -> [N,E].
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);

// ---- indexing ----
Tensor gather_labels(const Tensor& x, const std::vector<int>& labels);  // [N,C] -> [N]
Tensor scatter_labels(const Tensor& v, const std::vector<int>& labels, int cols); // [N] -> [N,C]

Tensor reduce_max(const Tensor& x);                  // -> scalar; first max in row-major order
Tensor gather_at(const Tensor& x, std::int64_t flat_index);      // -> scalar
Tensor scatter_at(const Tensor& s, std::int64_t flat_index, Shape shape);

/// Per-row max over strictly positive entries; rows with no positive entry
/// yield 1.0 and route no gradient. [N,M] -> [N]. Division by this value
/// realizes the positive-part max normalization used on attribution maps.
Tensor rowwise_max_positive(const Tensor& x);

// ---- softmax family ----
Tensor log_softmax(const Tensor& x); // rowwise, max-subtraction stabilized

/// Mean over the batch of -log softmax(logits)[label]. Labels must lie in
/// [0, C); violations raise ShapeError.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// ---- convolution (valid cross-correlation, stride 1, no padding) ----
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias);
Tensor conv2d_raw(const Tensor& input, const Tensor& kernels);
// Adjoints of conv2d_raw w.r.t. input and kernels; public because they are
// ordinary bilinear ops the trio's VJPs are built from.
Tensor conv2d_input_vjp(const Tensor& grad_out, const Tensor& kernels, int in_h, int in_w);
Tensor conv2d_kernel_vjp(const Tensor& input, const Tensor& grad_out, int k_h, int k_w);

// ---- pooling (2x2, stride 2) ----
Tensor max_pool2d(const Tensor& x); // ties -> first element in row-major order
Tensor max_unpool2d(const Tensor& g, const std::vector<std::int64_t>& argmax, Shape in_shape);
Tensor pool_gather(const Tensor& u, const std::vector<std::int64_t>& argmax, Shape out_shape);

// ---- bilinear interpolation (half-pixel centers) ----
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);
Tensor upsample_bilinear_adj(const Tensor& g, int in_h, int in_w);

} // namespace xilab::autodiff
