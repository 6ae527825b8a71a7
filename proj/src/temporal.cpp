#include "hagcn/temporal.hpp"

#include "hagcn/errors.hpp"

namespace hagcn {

std::string temporal_mode_name(TemporalMode m) { return m == TemporalMode::multiscale ? "multiscale" : "single"; }

TemporalMode parse_temporal_mode(const std::string& name) {
  if (name == "multiscale") return TemporalMode::multiscale;
  if (name == "single") return TemporalMode::single;
  throw ConfigError("unknown temporal mode '" + name + "' (expected multiscale or single)");
}

TemporalConv::TemporalConv(std::size_t channels, std::size_t stride, TemporalMode mode, std::mt19937_64& rng)
    : channels_(channels), stride_(stride), mode_(mode) {
  if (stride != 1 && stride != 2) throw ConfigError("temporal stride must be 1 or 2, got " + std::to_string(stride));
  if (mode == TemporalMode::single) {
    single_ = ConvLayer(channels, channels, kSingleKernel, {stride, 1, same_padding(kSingleKernel, 1)}, rng);
    single_norm_ = BatchNormLayer(channels);
    return;
  }
  if (channels % kBranchDilations.size() != 0) {
    throw ConfigError("multi-scale temporal layer needs channels divisible by 4, got " + std::to_string(channels));
  }
  const std::size_t width = channels / kBranchDilations.size();
  for (auto d : kBranchDilations) {
    TemporalBranch b;
    b.dilation = d;
    b.reduce = ConvLayer(width, channels, 1, {}, rng);
    b.reduce_norm = BatchNormLayer(width);
    b.dilated = ConvLayer(width, width, kBranchKernel, {stride, d, same_padding(kBranchKernel, d)}, rng);
    b.out_norm = BatchNormLayer(width);
    branches_.push_back(std::move(b));
  }
}

Var TemporalConv::forward(const Var& x, bool training) {
  if (x.value().rank() != 4 || x.dim(1) != channels_) {
    throw ShapeError("temporal: expected (N, " + std::to_string(channels_) + ", T, V) input, got " +
                     shape_str(x.shape()));
  }
  if (mode_ == TemporalMode::single) return single_norm_(single_(x), training);
  std::vector<Var> parts;
  parts.reserve(branches_.size());
  for (auto& b : branches_) {
    Var h = relu(b.reduce_norm(b.reduce(x), training));
    parts.push_back(b.out_norm(b.dilated(h), training));
  }
  return concat(parts, 1);
}

void TemporalConv::collect(const std::string& prefix, ParamList& out) {
  if (mode_ == TemporalMode::single) {
    single_.collect(prefix + ".conv", out);
    single_norm_.collect(prefix + ".norm", out);
    return;
  }
  for (auto& b : branches_) {
    const std::string p = prefix + ".branch" + std::to_string(b.dilation);
    b.reduce.collect(p + ".reduce", out);
    b.reduce_norm.collect(p + ".reduce_norm", out);
    b.dilated.collect(p + ".dilated", out);
    b.out_norm.collect(p + ".out_norm", out);
  }
}

}  // namespace hagcn
