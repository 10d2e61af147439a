#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rtq/tensor.hpp"

namespace rtq {

// Elementwise binary ops. `b` must have the same shape as `a` or a shape that
// is a suffix of it (broadcast over the leading dims of `a`).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
/// a * s where s holds exactly one element; differentiable in both.
Tensor mul_scalar(const Tensor& a, const Tensor& s);

/// [..., m, k] x [..., k, n]. Batch dims must match, or one side may have
/// none (a plain matrix shared across the other side's batch).
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& order);

Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x, int axis = -1);
/// Normalizes over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
/// Natural log; throws NumericError on non-positive input.
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor l2_normalize(const Tensor& x, int axis = -1);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
/// Selects entries along axis 0. Gradients flow back only to selected rows.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Reduces the last axis.
Tensor sum_last(const Tensor& x);

}  // namespace rtq
