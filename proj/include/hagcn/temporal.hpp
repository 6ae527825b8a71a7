#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "hagcn/layers.hpp"

namespace hagcn {

enum class TemporalMode { multiscale, single };

std::string temporal_mode_name(TemporalMode m);
TemporalMode parse_temporal_mode(const std::string& name);

// Branch dilations in channel-slice order of the concatenated output.
inline constexpr std::array<std::size_t, 4> kBranchDilations = {1, 2, 3, 4};
inline constexpr std::size_t kBranchKernel = 3;
inline constexpr std::size_t kSingleKernel = 9;

// One dilated branch: 1x1 reduction to C/4 channels, BN, ReLU, then a 3x1
// dilated convolution carrying the stride, then BN.
struct TemporalBranch {
  ConvLayer reduce;
  BatchNormLayer reduce_norm;
  ConvLayer dilated;
  BatchNormLayer out_norm;
  std::size_t dilation = 1;
};

class TemporalConv {
 public:
  TemporalConv() = default;
  TemporalConv(std::size_t channels, std::size_t stride, TemporalMode mode, std::mt19937_64& rng);

  // (N, C, T, V) -> (N, C, ceil(T / stride), V)
  Var forward(const Var& x, bool training);

  TemporalMode mode() const { return mode_; }
  std::size_t stride() const { return stride_; }
  std::vector<TemporalBranch>& branches() { return branches_; }
  ConvLayer& single_conv() { return single_; }
  BatchNormLayer& single_norm() { return single_norm_; }

  void collect(const std::string& prefix, ParamList& out);

 private:
  std::size_t channels_ = 0;
  std::size_t stride_ = 1;
  TemporalMode mode_ = TemporalMode::multiscale;
  std::vector<TemporalBranch> branches_;
  ConvLayer single_;
  BatchNormLayer single_norm_;
};

}  // namespace hagcn
