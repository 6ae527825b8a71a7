#include "hagcn/layers.hpp"

#include <cmath>

namespace hagcn {

ConvLayer::ConvLayer(std::size_t c_out, std::size_t c_in, std::size_t kernel_t, Conv2dOptions opt,
                     std::mt19937_64& rng, double std_scale)
    : options(opt) {
  Tensor w({c_out, c_in, kernel_t, 1});
  std::normal_distribution<double> dist(0.0, std_scale * std::sqrt(2.0 / static_cast<double>(c_in * kernel_t)));
  for (auto& x : w.data()) x = dist(rng);
  weight = Var(std::move(w), true);
  bias = Var(Tensor::zeros({c_out}), true);
}

void ConvLayer::collect(const std::string& prefix, ParamList& out) const {
  out.params.push_back({prefix + ".weight", weight, ParamKind::weight});
  out.params.push_back({prefix + ".bias", bias, ParamKind::bias});
}

BatchNormLayer::BatchNormLayer(std::size_t channels, bool per_vertex_stats, double gamma_init)
    : gamma(Tensor({channels}, gamma_init), true),
      beta(Tensor::zeros({channels}), true),
      running{Tensor::zeros({channels}), Tensor::ones({channels})},
      per_vertex(per_vertex_stats) {}

Var BatchNormLayer::operator()(const Var& x, bool training) {
  BatchNormOptions opt;
  opt.training = training;
  opt.momentum = momentum;
  opt.eps = eps;
  opt.per_vertex = per_vertex;
  return batch_norm(x, gamma, beta, running, opt);
}

void BatchNormLayer::collect(const std::string& prefix, ParamList& out) {
  out.params.push_back({prefix + ".gamma", gamma, ParamKind::norm});
  out.params.push_back({prefix + ".beta", beta, ParamKind::norm});
  out.buffers.push_back({prefix + ".running_mean", &running.mean});
  out.buffers.push_back({prefix + ".running_var", &running.var});
}

LayerNormLayer::LayerNormLayer(std::size_t channels)
    : gamma(Tensor::ones({channels}), true), beta(Tensor::zeros({channels}), true) {}

void LayerNormLayer::collect(const std::string& prefix, ParamList& out) const {
  out.params.push_back({prefix + ".gamma", gamma, ParamKind::norm});
  out.params.push_back({prefix + ".beta", beta, ParamKind::norm});
}

std::size_t count_scalars(const std::vector<ParamRef>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var.numel();
  return n;
}

}  // namespace hagcn
