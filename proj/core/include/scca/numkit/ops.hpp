#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "scca/numkit/tape.hpp"
#include "scca/numkit/tensor.hpp"

// Differentiable operations on Tape values. Image-like tensors are batched
// [B, C, H, W]; all reductions run in a fixed left-to-right order.
namespace scca::nk {

enum class PoolMode { Avg, Max };

// [m, k] x [k, p] -> [m, p]
Var matmul(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var abs(const Var& x);
// ln(1 + x / eps), defined for x > -eps.
Var log1p_scaled(const Var& x, double eps);

Var sum(const Var& x);
Var mean(const Var& x);
Var reshape(const Var& x, Shape shape);

// Adds b[C] along axis 1 of x ([R, C] or [B, C, ...]).
Var add_channel_bias(const Var& x, const Var& b);

// Zero-padded direct cross-correlation. x: [B, C, H, W], w: [O, C, KH, KW].
Var conv2d(const Var& x, const Var& w, std::size_t stride, std::size_t pad);

// [B, C, H, W] -> [B, C]
Var global_pool(const Var& x, PoolMode mode);
// [B, C, H, W] -> [B, 1, H, W], reducing over channels at each position.
Var channel_pool(const Var& x, PoolMode mode);

// Softmax over each row's masked-in entries; masked-out outputs are exactly 0.
// x: [..., n, m]; mask: [n, m] binary, shared across leading dimensions.
Var rowsoftmax(const Var& x, const Tensor& mask);

enum class BnMode { Train, Eval };

struct BatchNormState {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-7;
};

// Normalises per channel (axis 1) over every other axis. Train mode uses
// batch statistics, requires batch size >= 2 and updates the running
// statistics; eval mode uses the running statistics.
Var batchnorm(const Var& x, const Var& gamma, const Var& beta, BatchNormState state, BnMode mode);

// Concatenates [B, Ci, H, W] tensors along the channel axis.
Var concat_channels(const std::vector<Var>& xs);
// Nearest-neighbour x2 upsampling of [B, C, H, W].
Var upsample_nearest2x(const Var& x);
// x[B, C, H, W] * s[B, C] broadcast over positions.
Var mul_channel(const Var& x, const Var& s);
// x[B, C, H, W] * s[B, 1, H, W] broadcast over channels.
Var mul_spatial(const Var& x, const Var& s);

// Sorted (row, col) nonzero pattern of an N x N matrix.
using Pattern = std::vector<std::pair<std::size_t, std::size_t>>;

// values[B, P] -> [B, N, N] with values on the pattern and `fill` elsewhere.
Var scatter_pattern(const Var& values, const Pattern& pattern, std::size_t n, double fill);

// out[b, i, :] = sum over pattern entries (i, j) of w[b', i, j] * h[b, j, :],
// where b' = b when w has batch B and b' = 0 when w has batch 1. Entries of w
// outside the pattern are never read and receive no gradient.
Var pattern_aggregate(const Var& w, const Pattern& pattern, const Var& h);

}  // namespace scca::nk
