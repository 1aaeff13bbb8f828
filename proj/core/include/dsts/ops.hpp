#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "dsts/autograd.hpp"

// Differentiable primitives. Every op's backward is composed of ops from this
// header, so gradients of gradients are available for all of them.
namespace dsts::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);

Var exp(const Var& a);
Var log(const Var& a);
Var sigmoid(const Var& a);
Var reciprocal(const Var& a);
Var rsqrt(const Var& a);
Var relu(const Var& a);
/// Clamp into [lo, hi]; gradient is zero where clamped.
Var clamp(const Var& a, double lo, double hi);

Var reshape(const Var& a, Shape shape);
/// Same-rank broadcast: every dim of `a` equals the target dim or is 1.
Var broadcast_to(const Var& a, Shape shape);
/// Adjoint of broadcast_to: sums over the dims where `shape` is 1.
Var sum_to(const Var& a, Shape shape);
/// Sum of all elements, rank-0 result.
Var sum(const Var& a);

/// (m x k) @ (k x n)
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

using Triple = std::array<std::int64_t, 3>;

/// Correlation of a B x Cin x T x H x W input with a Cout x Cin x kt x kh x kw
/// kernel, zero padding, no bias.
Var conv3d(const Var& input, const Var& kernel, Triple padding, Triple stride = {1, 1, 1});
/// Gradient of conv3d with respect to its input (transposed convolution).
Var conv3d_input_grad(const Var& grad_output, const Var& kernel, const Shape& input_shape, Triple padding,
                      Triple stride);
/// Gradient of conv3d with respect to its kernel.
Var conv3d_kernel_grad(const Var& input, const Var& grad_output, const Shape& kernel_shape, Triple padding,
                       Triple stride);

/// Rows of `a` (slices along dim 0) picked by `index`, in order.
Var index_rows(const Var& a, std::vector<std::int64_t> index);
/// Adjoint of index_rows: a zero tensor with `rows` rows where row index[i]
/// accumulates a[i].
Var scatter_rows(const Var& a, std::vector<std::int64_t> index, std::int64_t rows);

/// Forward value is `hard`; the gradient passes unchanged to `soft`.
Var straight_through(Tensor hard, const Var& soft);

}  // namespace dsts::ops
