#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <vector>

#include "hagcn/autograd.hpp"

namespace hagcn {

// Elementwise arithmetic on equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
// alpha is a single-element Var; both factors receive gradients.
Var mul_scalar(const Var& x, const Var& alpha);
// Adds `b` broadcast over the leading axes of `x`; b's shape must equal x's trailing dims.
Var add_trailing(const Var& x, const Var& b);

Var sum(const Var& a);
Var mean(const Var& a);
// Mean over one axis, which is removed from the shape.
Var mean_axis(const Var& a, std::size_t axis);
Var reshape(const Var& a, Shape shape);
Var concat(const std::vector<Var>& parts, std::size_t axis);

Var relu(const Var& a);
Var tanh(const Var& a);
Var softmax(const Var& a, std::size_t axis);

// Rank-2 or batched rank-3 product; a rank-2 operand broadcasts over the batch.
Var matmul(const Var& a, const Var& b);

struct Conv2dOptions {
  std::size_t stride_t = 1;
  std::size_t dilation_t = 1;
  std::size_t pad_t = 0;
};

std::size_t conv_output_length(std::size_t t, std::size_t kernel, const Conv2dOptions& opt);
// "Same" temporal padding for an odd kernel: dilation * (kernel - 1) / 2.
std::size_t same_padding(std::size_t kernel, std::size_t dilation);

// input (N, C_in, T, V), weight (C_out, C_in, k_t, 1), bias (C_out) or undefined.
Var conv2d(const Var& input, const Var& weight, const Var& bias, const Conv2dOptions& opt = {});

struct NormStats {
  Tensor mean;
  Tensor var;
};

struct BatchNormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
  // Statistics per (channel, vertex) pair instead of per channel.
  bool per_vertex = false;
};

// input (N, C, T, V); gamma/beta of length C (or C*V when per_vertex).
// Training mode normalizes with batch statistics and updates `running`
// (unbiased variance); eval mode uses `running`.
Var batch_norm(const Var& input, const Var& gamma, const Var& beta, NormStats& running, const BatchNormOptions& opt);

// Per-sample normalization over (C, T, V) with a per-channel affine.
Var layer_norm(const Var& input, const Var& gamma, const Var& beta, double eps = 1e-5);

// Y[n,c,t,i] = sum_j M[..,i,j] * X[n,c,t,j]; M is (V,V), (N,1,V,V) or (N,C,V,V).
Var mask_aggregate(const Var& mask, const Var& x);

// A[n,c,i,j] = tanh(mean_t F[n,c,t,i] - mean_t F[n,c,t,j]).
Var relative_distance_mask(const Var& features);
// A[n,c,i,j] = tanh(sum_t F[n,c,t,i] * F[n,c,t,j]).
Var relative_angle_mask(const Var& features);

Var dropout(const Var& x, double rate, std::mt19937_64& rng, bool training);

// x (N, C_in), weight (K, C_in), bias (K).
Var linear(const Var& x, const Var& weight, const Var& bias);

// Mean over the batch of -log softmax(logits)[label].
Var cross_entropy(const Var& logits, const std::vector<std::size_t>& labels);

}  // namespace hagcn
