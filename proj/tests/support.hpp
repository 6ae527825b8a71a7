// Shared helpers for the test binaries: random generators and brute-force
// reference implementations written directly from the layer definitions,
// independent of the library's vectorized kernels.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hagcn/attention.hpp"
#include "hagcn/temporal.hpp"
#include "hagcn/tensor.hpp"

namespace testing {

using hagcn::Shape;
using hagcn::Tensor;

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

inline void randomize(hagcn::Var& v, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& x : v.mutable_value().data()) x = dist(rng);
}

inline std::string fixture(const std::string& name) { return std::string(HAGCN_FIXTURE_DIR) + "/" + name; }

// 4-D accessor for (A, B, C, D) tensors.
inline double& at4(Tensor& t, std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
  const auto& s = t.shape();
  return t[((a * s[1] + b) * s[2] + c) * s[3] + d];
}
inline double at4(const Tensor& t, std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
  const auto& s = t.shape();
  return t[((a * s[1] + b) * s[2] + c) * s[3] + d];
}

// y[n,o,t,v] = b[o] + sum_c W[o,c] x[n,c,t,v]
inline Tensor pointwise_conv(const Tensor& x, const hagcn::ConvLayer& conv) {
  const auto& w = conv.weight.value();
  const std::size_t n = x.dim(0), cin = x.dim(1), t = x.dim(2), v = x.dim(3), cout = w.dim(0);
  Tensor y({n, cout, t, v});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t vi = 0; vi < v; ++vi) {
          double s = conv.bias.defined() ? conv.bias.value()[o] : 0.0;
          for (std::size_t c = 0; c < cin; ++c) s += w[o * cin + c] * at4(x, a, c, ti, vi);
          at4(y, a, o, ti, vi) = s;
        }
  return y;
}

// Temporal convolution by direct windowed summation with zero padding.
inline Tensor temporal_conv(const Tensor& x, const hagcn::ConvLayer& conv) {
  const auto& w = conv.weight.value();
  const std::size_t n = x.dim(0), cin = x.dim(1), t = x.dim(2), v = x.dim(3);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  const auto& o = conv.options;
  const std::size_t t_out = (t + 2 * o.pad_t - o.dilation_t * (k - 1) - 1) / o.stride_t + 1;
  Tensor y({n, cout, t_out, v});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t to = 0; to < t_out; ++to)
        for (std::size_t vi = 0; vi < v; ++vi) {
          double s = conv.bias.defined() ? conv.bias.value()[co] : 0.0;
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t kk = 0; kk < k; ++kk) {
              const long ti = static_cast<long>(to * o.stride_t + kk * o.dilation_t) - static_cast<long>(o.pad_t);
              if (ti < 0 || ti >= static_cast<long>(t)) continue;
              s += w[(co * cin + c) * k + kk] * at4(x, a, c, static_cast<std::size_t>(ti), vi);
            }
          at4(y, a, co, to, vi) = s;
        }
  return y;
}

// Batch norm with the layer's running statistics (evaluation behaviour).
inline Tensor batch_norm_eval(const Tensor& x, const hagcn::BatchNormLayer& bn) {
  Tensor y = x;
  const std::size_t n = x.dim(0), c = x.dim(1), t = x.dim(2), v = x.dim(3);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t vi = 0; vi < v; ++vi) {
          const std::size_t k = bn.per_vertex ? ci * v + vi : ci;
          const double xhat = (at4(x, a, ci, ti, vi) - bn.running.mean[k]) / std::sqrt(bn.running.var[k] + bn.eps);
          at4(y, a, ci, ti, vi) = bn.gamma.value()[k] * xhat + bn.beta.value()[k];
        }
  return y;
}

inline Tensor relu(Tensor x) {
  for (auto& v : x.data()) v = std::max(v, 0.0);
  return x;
}

// Layer norm over (C, T, V) per sample with a per-channel affine.
inline Tensor layer_norm(const Tensor& x, const hagcn::LayerNormLayer& ln) {
  const std::size_t n = x.dim(0), c = x.dim(1), t = x.dim(2), v = x.dim(3);
  Tensor y = x;
  for (std::size_t a = 0; a < n; ++a) {
    double mean = 0.0, var = 0.0;
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t vi = 0; vi < v; ++vi) mean += at4(x, a, ci, ti, vi);
    mean /= static_cast<double>(c * t * v);
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t vi = 0; vi < v; ++vi) var += std::pow(at4(x, a, ci, ti, vi) - mean, 2);
    var /= static_cast<double>(c * t * v);
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t ti = 0; ti < t; ++ti)
        for (std::size_t vi = 0; vi < v; ++vi) {
          at4(y, a, ci, ti, vi) = ln.gamma.value()[ci] * (at4(x, a, ci, ti, vi) - mean) / std::sqrt(var + ln.eps) +
                                  ln.beta.value()[ci];
        }
  }
  return y;
}

// Masks of one subset computed entry by entry.
struct OracleMasks {
  Tensor rd, ra, hybrid, final;  // (N, C_inter, V, V)
};

inline Tensor rd_oracle(const Tensor& f) {
  const std::size_t n = f.dim(0), c = f.dim(1), t = f.dim(2), v = f.dim(3);
  Tensor out({n, c, v, v});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t i = 0; i < v; ++i)
        for (std::size_t j = 0; j < v; ++j) {
          double mi = 0.0, mj = 0.0;
          for (std::size_t ti = 0; ti < t; ++ti) {
            mi += at4(f, a, k, ti, i);
            mj += at4(f, a, k, ti, j);
          }
          at4(out, a, k, i, j) = std::tanh(mi / static_cast<double>(t) - mj / static_cast<double>(t));
        }
  return out;
}

inline Tensor ra_oracle(const Tensor& f) {
  const std::size_t n = f.dim(0), c = f.dim(1), t = f.dim(2), v = f.dim(3);
  Tensor out({n, c, v, v});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t i = 0; i < v; ++i)
        for (std::size_t j = 0; j < v; ++j) {
          double dot = 0.0;
          for (std::size_t ti = 0; ti < t; ++ti) dot += at4(f, a, k, ti, i) * at4(f, a, k, ti, j);
          at4(out, a, k, i, j) = std::tanh(dot);
        }
  return out;
}

// Spatial hybrid attention evaluated loop by loop from the layer's parameters.
inline Tensor attention_oracle(const Tensor& x, const hagcn::HybridAttention& layer,
                               hagcn::DisableBranch disable = hagcn::DisableBranch::none,
                               std::vector<OracleMasks>* masks = nullptr) {
  const std::size_t n = x.dim(0), t = x.dim(2), v = x.dim(3);
  const std::size_t cout = layer.out_channels(), ci = layer.inter();
  Tensor y({n, cout, t, v});
  if (masks) masks->clear();
  for (auto s : hagcn::kSubsets) {
    const auto& sub = layer.subset(s);
    Tensor rd({n, ci, v, v}), ra({n, ci, v, v});
    if (sub.rd && disable != hagcn::DisableBranch::rd) {
      rd = rd_oracle(layer_norm(pointwise_conv(x, sub.rd->conv), sub.rd->norm));
    }
    if (sub.ra && disable != hagcn::DisableBranch::ra) {
      ra = ra_oracle(layer_norm(pointwise_conv(x, sub.ra->conv), sub.ra->norm));
    }
    Tensor hybrid({n, ci, v, v});
    for (std::size_t e = 0; e < hybrid.numel(); ++e) {
      if (sub.alpha.defined()) {
        hybrid[e] = rd[e] + sub.alpha.value()[0] * ra[e];
      } else {
        hybrid[e] = sub.rd ? rd[e] : ra[e];
      }
    }
    Tensor fin = hybrid;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t k = 0; k < ci; ++k)
        for (std::size_t i = 0; i < v; ++i)
          for (std::size_t j = 0; j < v; ++j) at4(fin, a, k, i, j) += sub.initial_mask[i * v + j];
    // Extension over the mask channels, or their mean.
    Tensor m({n, cout, v, v});
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t i = 0; i < v; ++i)
          for (std::size_t j = 0; j < v; ++j) {
            double acc = 0.0;
            if (sub.extension) {
              acc = sub.extension->bias.value()[o];
              for (std::size_t k = 0; k < ci; ++k) acc += sub.extension->weight.value()[o * ci + k] * at4(fin, a, k, i, j);
            } else {
              for (std::size_t k = 0; k < ci; ++k) acc += at4(fin, a, k, i, j);
              acc /= static_cast<double>(ci);
            }
            at4(m, a, o, i, j) = acc;
          }
    const Tensor val = pointwise_conv(x, sub.value);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t ti = 0; ti < t; ++ti)
          for (std::size_t i = 0; i < v; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < v; ++j) acc += at4(m, a, o, i, j) * at4(val, a, o, ti, j);
            at4(y, a, o, ti, i) += acc;
          }
    if (masks) masks->push_back({rd, ra, hybrid, fin});
  }
  return relu(y);
}

// Multi-scale or single-kernel temporal module in evaluation mode.
inline Tensor temporal_oracle(const Tensor& x, hagcn::TemporalConv& layer) {
  if (layer.mode() == hagcn::TemporalMode::single) {
    return batch_norm_eval(temporal_conv(x, layer.single_conv()), layer.single_norm());
  }
  std::vector<Tensor> parts;
  for (const auto& b : layer.branches()) {
    const Tensor reduced = relu(batch_norm_eval(pointwise_conv(x, b.reduce), b.reduce_norm));
    parts.push_back(batch_norm_eval(temporal_conv(reduced, b.dilated), b.out_norm));
  }
  const std::size_t n = parts[0].dim(0), cb = parts[0].dim(1), t = parts[0].dim(2), v = parts[0].dim(3);
  Tensor y({n, cb * parts.size(), t, v});
  for (std::size_t p = 0; p < parts.size(); ++p)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t c = 0; c < cb; ++c)
        for (std::size_t ti = 0; ti < t; ++ti)
          for (std::size_t vi = 0; vi < v; ++vi) at4(y, a, p * cb + c, ti, vi) = at4(parts[p], a, c, ti, vi);
  return y;
}

// Randomizes every parameter and running statistic of an attention layer.
inline void randomize_attention(hagcn::HybridAttention& layer, std::mt19937_64& rng) {
  for (auto s : hagcn::kSubsets) {
    auto& sub = layer.subset(s);
    for (auto* br : {sub.rd ? &*sub.rd : nullptr, sub.ra ? &*sub.ra : nullptr}) {
      if (!br) continue;
      randomize(br->conv.weight, rng);
      randomize(br->conv.bias, rng, -0.2, 0.2);
      randomize(br->norm.gamma, rng, 0.5, 1.5);
      randomize(br->norm.beta, rng, -0.3, 0.3);
    }
    if (sub.alpha.defined()) randomize(sub.alpha, rng);
    if (sub.extension) {
      randomize(sub.extension->weight, rng, -0.5, 0.5);
      randomize(sub.extension->bias, rng, -0.1, 0.1);
    }
    randomize(sub.value.weight, rng);
    randomize(sub.value.bias, rng, -0.2, 0.2);
  }
}

inline void randomize_norm(hagcn::BatchNormLayer& bn, std::mt19937_64& rng) {
  randomize(bn.gamma, rng, 0.5, 1.5);
  randomize(bn.beta, rng, -0.3, 0.3);
  std::uniform_real_distribution<double> mean(-0.5, 0.5), var(0.5, 2.0);
  for (auto& m : bn.running.mean.data()) m = mean(rng);
  for (auto& v : bn.running.var.data()) v = var(rng);
}

inline void randomize_temporal(hagcn::TemporalConv& layer, std::mt19937_64& rng) {
  if (layer.mode() == hagcn::TemporalMode::single) {
    randomize(layer.single_conv().weight, rng, -0.5, 0.5);
    randomize(layer.single_conv().bias, rng, -0.2, 0.2);
    randomize_norm(layer.single_norm(), rng);
    return;
  }
  for (auto& b : layer.branches()) {
    randomize(b.reduce.weight, rng);
    randomize(b.reduce.bias, rng, -0.2, 0.2);
    randomize_norm(b.reduce_norm, rng);
    randomize(b.dilated.weight, rng, -0.5, 0.5);
    randomize(b.dilated.bias, rng, -0.2, 0.2);
    randomize_norm(b.out_norm, rng);
  }
}

}  // namespace testing
