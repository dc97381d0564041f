#pragma once

#include <cstddef>
#include <span>

#include "gradnet/autodiff.hpp"
#include "gradnet/tensor.hpp"

namespace gradnet {

// Differentiable operations. Every function records one node on the tape
// owning its inputs; all Var arguments must share a tape.

Var matmul(Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var shift(Var a, double offset);

/// (1 - weight) * a + weight * b.
Var lerp(Var a, Var b, double weight);

/// x[N x h] + b[h], b added to every row.
Var add_bias(Var x, Var b);

Var relu(Var x);
Var leaky_relu(Var x, double slope);
Var abs_value(Var x);
inline Var identity(Var x) { return x; }

Var sum(Var x);
Var reshape(Var x, Shape shape);

enum class Padding { Valid, Same };

/// Cross-correlation of x[N x C x H x W] with k[F x C x kh x kw].
Var conv2d(Var x, Var k, std::size_t stride, Padding padding);

enum class PoolKind { Mean, Max };

Var pool2d(Var x, std::size_t window, std::size_t stride, PoolKind kind);

/// Mean over the batch of -log softmax(logits)[label].
Var softmax_cross_entropy(Var logits, std::span<const int> labels);

/// Per-channel normalization with the batch's own statistics. Channels are
/// axis 1; statistics reduce over every other axis. The biased batch mean
/// and variance are written to `batch_mean` / `batch_var` when non-null.
Var batch_norm_train(Var x, Var gamma, Var beta, double eps, Tensor* batch_mean,
                     Tensor* batch_var);

/// Per-channel normalization with fixed statistics.
Var batch_norm_fixed(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var,
                     double eps);

/// Row-wise softmax of a rank-2 tensor (no tape).
Tensor softmax_rows(const Tensor& logits);

/// Output spatial extent and leading pad for a conv/pool axis.
struct AxisGeometry {
  std::size_t out = 0;
  std::size_t pad_lo = 0;
  std::size_t pad_hi = 0;
};

AxisGeometry conv_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

}  // namespace gradnet
