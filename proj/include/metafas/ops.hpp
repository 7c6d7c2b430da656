#pragma once

#include <vector>

#include "metafas/tensor.hpp"

namespace metafas {

// Elementwise (operands must have identical shapes; scalars are rank-0).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor square(const Tensor& a);

/// Multiply by a compile-time constant. The constant is not a trace node.
Tensor scale(const Tensor& a, double c);

/// Broadcast-multiply a rank-0 tensor over every element of x. This is the
/// only scalar broadcast in the engine; it carries gradient to both operands.
Tensor scalar_mul(const Tensor& s, const Tensor& x);

// Reductions to rank-0.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Linear algebra (rank-2 only).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Reinterpret values under a new shape with identical element count.
Tensor reshape(const Tensor& a, const Shape& shape);

/// 2-D convolution, stride 1, symmetric zero padding.
/// x: (B, H, W, Cin); kernel: (KH, KW, Cin, Cout) -> (B, H', W', Cout)
/// with H' = H + 2*padding - KH + 1.
Tensor conv2d(const Tensor& x, const Tensor& kernel, int padding);

/// Gradient of conv2d with respect to its kernel, exposed as a first-class
/// differentiable operation so that second-order gradients close over the
/// convolution family. x: (B, H, W, Cin), out_grad: (B, H', W', Cout)
/// -> (KH, KW, Cin, Cout).
Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& out_grad, int padding,
                          int kh, int kw);

/// Spatial 180-degree flip plus in/out channel transpose of a conv kernel:
/// (KH, KW, Cin, Cout) -> (KH, KW, Cout, Cin). Involution; its own adjoint.
Tensor kernel_flip_transpose(const Tensor& kernel);

/// Non-overlapping max pooling; H and W must be divisible by window.
Tensor max_pool2d(const Tensor& x, int window);

/// Non-overlapping average pooling; H and W must be divisible by window.
Tensor avg_pool2d(const Tensor& x, int window);

/// Concatenate along `axis`; all other dimensions must match.
Tensor concat(const std::vector<Tensor>& parts, int axis);

/// Contiguous slice [start, start+len) along `axis`.
Tensor slice(const Tensor& a, int axis, int start, int len);

/// Zero-pad along `axis` with `before`/`after` extra entries.
Tensor pad_axis(const Tensor& a, int axis, int before, int after);

/// Broadcast a rank-1 tensor over all leading axes of `shape` (whose last
/// dimension must equal the vector length). Adjoint of sum_to_last_axis.
Tensor broadcast_to_last_axis(const Tensor& v, const Shape& shape);

/// Sum over every axis but the last: (..., C) -> (C).
Tensor sum_to_last_axis(const Tensor& a);

/// a / b elementwise (composite: mul(a, reciprocal(b))).
Tensor div(const Tensor& a, const Tensor& b);

}  // namespace metafas
