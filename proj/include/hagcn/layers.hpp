#pragma once

#include <random>
#include <string>
#include <vector>

#include "hagcn/ops.hpp"

namespace hagcn {

// Weight decay applies to `weight` and `bias` only.
enum class ParamKind { weight, bias, norm, alpha };

struct ParamRef {
  std::string path;
  Var var;
  ParamKind kind;
};

struct BufferRef {
  std::string path;
  Tensor* tensor;
};

struct ParamList {
  std::vector<ParamRef> params;
  std::vector<BufferRef> buffers;
};

// Convolution over the (T, V) plane with a k_t x 1 kernel.
struct ConvLayer {
  Var weight;
  Var bias;
  Conv2dOptions options;

  ConvLayer() = default;
  // He-normal weights with the given standard deviation scale, zero bias.
  ConvLayer(std::size_t c_out, std::size_t c_in, std::size_t kernel_t, Conv2dOptions opt, std::mt19937_64& rng,
            double std_scale = 1.0);

  Var operator()(const Var& x) const { return conv2d(x, weight, bias, options); }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct BatchNormLayer {
  Var gamma;
  Var beta;
  NormStats running;
  bool per_vertex = false;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t channels, bool per_vertex = false, double gamma_init = 1.0);

  Var operator()(const Var& x, bool training);
  void collect(const std::string& prefix, ParamList& out);
};

struct LayerNormLayer {
  Var gamma;
  Var beta;
  double eps = 1e-5;

  LayerNormLayer() = default;
  explicit LayerNormLayer(std::size_t channels);

  Var operator()(const Var& x) const { return layer_norm(x, gamma, beta, eps); }
  void collect(const std::string& prefix, ParamList& out) const;
};

std::size_t count_scalars(const std::vector<ParamRef>& params);

}  // namespace hagcn
