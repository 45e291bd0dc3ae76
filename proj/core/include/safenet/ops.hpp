#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "safenet/autodiff.hpp"

namespace safenet::ops {

// Elementwise, operands of identical shape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);

// x[..., trailing] + y[trailing]: y's shape must equal the trailing dims of x.
// Covers bias rows and position tables repeated over a batch.
Var add_broadcast(Var x, Var y);

Var relu(Var x);
Var sigmoid(Var x);

// Strict 2-D product a[m x k] * b[k x n].
Var matmul(Var a, Var b);
// x[..., k] * w[k x n] -> [..., n]; leading dims are flattened.
Var linear(Var x, Var w);

// 1-D convolution over the time axis of x[B x T x Cin] with w[K x Cin x Cout].
// Output length T + pad_left + pad_right - dilation*(K-1); out-of-range taps read zero.
Var conv1d(Var x, Var w, std::size_t dilation, std::size_t pad_left, std::size_t pad_right);

// Softmax along `axis` with max-subtraction.
Var softmax(Var x, std::size_t axis);

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double eps = 1e-5;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean({channels}, 0.0), running_var({channels}, 1.0) {}
};

// Normalizes each channel of x[..., d] over all leading positions. Training
// mode uses batch statistics and updates `stats`; eval mode uses the running
// statistics. gamma/beta are optional ([d] each).
Var batch_norm(Var x, std::optional<Var> gamma, std::optional<Var> beta, BatchNormStats& stats,
               bool training);

Var reshape(Var x, Shape shape);
// Mean over one axis, which is removed from the shape.
Var mean_axis(Var x, std::size_t axis);
Var sum(Var x);
Var mean(Var x);

// Scalar losses.
Var mse_loss(Var pred, Var target);
Var cross_entropy(Var logits, std::span<const int> labels);
// Batch mean of the squared cosine between matching rows of a and b.
Var cosine_sq_loss(Var a, Var b);

// sum_i weights[i] * terms[i] over scalar terms.
Var weighted_sum(std::span<const Var> terms, std::span<const double> weights);

}  // namespace safenet::ops
