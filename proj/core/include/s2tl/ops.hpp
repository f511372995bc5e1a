#pragma once

#include <cstdint>
#include <span>

#include "s2tl/rng.hpp"
#include "s2tl/tensor.hpp"

// Differentiable tensor operations. Every op records itself on the active
// tape when one of its inputs requires grad. Broadcasting is limited to
// leading batch dimensions: `add` accepts a right operand whose shape is a
// suffix of the left operand's shape; everything else must match exactly.

namespace s2tl {

/// [m,k]·[k,n] -> [m,n], or batched [b,m,k]·[b,k,n] -> [b,m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// a + b, where b.shape() equals a.shape() or a trailing suffix of it.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product of equally shaped tensors.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);
Tensor relu(const Tensor& x);

/// Normalizes over the last axis, then applies gain and bias of shape [d].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);

/// Inverted dropout: survivors are scaled by 1/(1-p). Identity when
/// `training` is false or p == 0.
Tensor dropout(const Tensor& x, float p, Rng& rng, bool training);

/// Rows of `table` [V,d] selected by `ids`, giving [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const int> ids);

/// Time-major 1-D convolution: x [n, c_in], weight [c_out, c_in, k],
/// bias [c_out] -> [floor((n + 2·pad - k)/stride) + 1, c_out].
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);

Tensor reshape(const Tensor& x, Shape shape);
/// Swaps two axes (rank <= 4), producing a contiguous copy.
Tensor transpose(const Tensor& x, std::size_t axis0, std::size_t axis1);
/// Rows [begin, end) along axis 0.
Tensor slice(const Tensor& x, std::size_t begin, std::size_t end);

/// Softmax along `axis` with max subtraction. Rows consisting entirely of
/// -inf produce all zeros rather than NaN.
Tensor softmax(const Tensor& x, std::size_t axis);
inline Tensor softmax(const Tensor& x) { return softmax(x, x.rank() - 1); }

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

enum class Reduction { sum, mean };

/// Label-smoothed cross entropy over logits [T,V]. Per position the loss is
/// (1-eps)·(-log p[target]) + eps·mean_v(-log p[v]); positions whose target
/// equals `ignore_index` are excluded. `mean` divides by the number of
/// counted positions.
Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets,
                            float smoothing = 0.0f, int ignore_index = -1,
                            Reduction reduction = Reduction::mean);

}  // namespace s2tl
