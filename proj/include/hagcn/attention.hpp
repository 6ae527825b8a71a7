#pragma once

#include <array>
#include <optional>
#include <random>
#include <string>

#include "hagcn/graph.hpp"
#include "hagcn/layers.hpp"

namespace hagcn {

// Which attention branches a model is built with.
enum class AttentionBranches { hybrid, rd_only, ra_only };
// Branch switched off at evaluation time.
enum class DisableBranch { none, ra, rd };

std::string branches_name(AttentionBranches b);
AttentionBranches parse_branches(const std::string& name);
std::string disable_name(DisableBranch d);
DisableBranch parse_disable(const std::string& name);

struct AttentionOptions {
  AttentionBranches branches = AttentionBranches::hybrid;
  // When off, the final masks are averaged over channels instead of being
  // extended by a learned 1x1 kernel.
  bool extension_conv = true;
  // Compressed channel count; 0 selects inter_channels(c_in).
  std::size_t inter = 0;
  bool operator==(const AttentionOptions&) const = default;
};

// max(C_in / 8, 4)
std::size_t inter_channels(std::size_t c_in);

// One attention branch: 1x1 compression followed by layer norm.
struct CompressionBranch {
  ConvLayer conv;
  LayerNormLayer norm;
};

// F = LayerNorm(W_c X + B_c)
Var compress(const Var& x, const CompressionBranch& branch);
Var rd_mask(const Var& features);
Var ra_mask(const Var& features);
// A_RD + alpha * A_RA
Var hybrid_mask(const Var& rd, const Var& ra, const Var& alpha);
// A_h + A_i broadcast over channels.
Var final_mask(const Var& hybrid, const Tensor& initial);

struct SubsetAttention {
  std::optional<CompressionBranch> rd;
  std::optional<CompressionBranch> ra;
  Var alpha;  // hybrid models only
  std::optional<ConvLayer> extension;
  ConvLayer value;
  Tensor initial_mask;
};

// Masks of one subset, recorded for inspection. Undefined entries were not
// computed (branch absent).
struct MaskSet {
  Tensor rd;
  Tensor ra;
  Tensor hybrid;
  Tensor final;
};
using MaskCapture = std::array<MaskSet, 3>;

// Spatial hybrid attention layer over the identity, inward and outward
// subsets. Output is ReLU of the subset sum.
class HybridAttention {
 public:
  HybridAttention() = default;
  HybridAttention(std::size_t c_in, std::size_t c_out, const GraphSpec& graph, AttentionOptions options,
                  std::mt19937_64& rng);

  Var forward(const Var& x, DisableBranch disable = DisableBranch::none, MaskCapture* capture = nullptr) const;

  SubsetAttention& subset(Subset s) { return subsets_[static_cast<std::size_t>(s)]; }
  const SubsetAttention& subset(Subset s) const { return subsets_[static_cast<std::size_t>(s)]; }
  std::size_t in_channels() const { return c_in_; }
  std::size_t out_channels() const { return c_out_; }
  std::size_t inter() const { return c_inter_; }
  const AttentionOptions& options() const { return options_; }

  void collect(const std::string& prefix, ParamList& out) const;

 private:
  std::size_t c_in_ = 0;
  std::size_t c_out_ = 0;
  std::size_t c_inter_ = 0;
  AttentionOptions options_;
  std::array<SubsetAttention, 3> subsets_;
};

}  // namespace hagcn
