#pragma once

#include <span>
#include <vector>

#include "tribranch/graph.hpp"

// Differentiable primitives. The set is closed: matmul, add, scale, slice,
// concat, reshape, softmax, layer_norm, gelu, relu, reductions,
// l2_normalize, log, and the fused cross-entropy. Everything else in the
// library is composed from these.
namespace tribranch::ops {

/// Matrix product with optional transposes.
///
/// Operands are either both rank 2 (`[m,k]·[k,n]`) or both rank 3 with a
/// shared leading batch extent. Throws DimensionError on mismatch.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_a = false, bool transpose_b = false);

// a + b, where b's shape equals a trailing suffix of a's shape.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> add_scalar(Var<T> a, T c);

template <typename T>
Var<T> scale(Var<T> a, T c);

// Elementwise product with a constant whose shape is a leading prefix of
// a's shape (broadcast over the trailing axes). Used for drop-path masks and
// selection masks.
template <typename T>
Var<T> scale_by(Var<T> a, const Tensor<T>& factors);

// Elements [begin, end) with stride `step` along `axis`.
template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end, std::size_t step = 1);

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);

template <typename T>
Var<T> reshape(Var<T> a, Shape shape);

/// Row softmax of `logits / tau` over the last axis, max-subtracted.
/// Throws ParameterError when tau <= 0.
template <typename T>
Var<T> softmax(Var<T> logits, T tau);

/// Layer normalization over the last axis with affine gamma/beta.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps);

template <typename T>
Var<T> gelu(Var<T> x);

template <typename T>
Var<T> relu(Var<T> x);

template <typename T>
Var<T> sum(Var<T> a);

template <typename T>
Var<T> mean(Var<T> a);

// Mean over one axis; the axis is removed from the result.
template <typename T>
Var<T> mean_axis(Var<T> a, std::size_t axis);

// Sum over the last axis; the axis is removed from the result.
template <typename T>
Var<T> sum_last(Var<T> a);

// x / max(||x||_2, eps) row-wise over the last axis.
template <typename T>
Var<T> l2_normalize(Var<T> x, T eps);

// log(max(x, floor)); the gradient is zero where the floor is active.
template <typename T>
Var<T> log(Var<T> x, T floor);

/// Mean over rows of -sum_k target[k] * log(max(pred[k], floor)).
///
/// The target is a constant (no gradient flows into it).
template <typename T>
Var<T> cross_entropy(const Tensor<T>& target, Var<T> pred, T floor = T(1e-12));

// Copy of the value with no link to the graph.
template <typename T>
Tensor<T> detach(Var<T> a) {
  return a.value();
}

// Convenience: x·wᵀ + b for PyTorch-layout weights [out, in], with x of
// shape [..., in]. Composed from reshape, matmul, add.
template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, const Var<T>* bias);

}  // namespace tribranch::ops
