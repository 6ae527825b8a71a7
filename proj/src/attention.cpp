#include "hagcn/attention.hpp"

#include <algorithm>
#include <cmath>

#include "hagcn/errors.hpp"

namespace hagcn {

std::string branches_name(AttentionBranches b) {
  switch (b) {
    case AttentionBranches::hybrid: return "hybrid";
    case AttentionBranches::rd_only: return "rd";
    case AttentionBranches::ra_only: return "ra";
  }
  return "?";
}

AttentionBranches parse_branches(const std::string& name) {
  if (name == "hybrid") return AttentionBranches::hybrid;
  if (name == "rd") return AttentionBranches::rd_only;
  if (name == "ra") return AttentionBranches::ra_only;
  throw ConfigError("unknown attention branches '" + name + "' (expected hybrid, rd or ra)");
}

std::string disable_name(DisableBranch d) {
  switch (d) {
    case DisableBranch::none: return "none";
    case DisableBranch::ra: return "ra";
    case DisableBranch::rd: return "rd";
  }
  return "?";
}

DisableBranch parse_disable(const std::string& name) {
  if (name == "none" || name.empty()) return DisableBranch::none;
  if (name == "ra") return DisableBranch::ra;
  if (name == "rd") return DisableBranch::rd;
  throw ConfigError("unknown disable tag '" + name + "' (expected none, ra or rd)");
}

std::size_t inter_channels(std::size_t c_in) { return std::max<std::size_t>(c_in / 8, 4); }

Var compress(const Var& x, const CompressionBranch& branch) { return branch.norm(branch.conv(x)); }

Var rd_mask(const Var& features) { return relative_distance_mask(features); }

Var ra_mask(const Var& features) { return relative_angle_mask(features); }

Var hybrid_mask(const Var& rd, const Var& ra, const Var& alpha) { return add(rd, mul_scalar(ra, alpha)); }

Var final_mask(const Var& hybrid, const Tensor& initial) {
  const auto& s = hybrid.shape();
  if (s.size() != 4 || initial.shape() != Shape{s[2], s[3]}) {
    throw ShapeError("final_mask: initial mask " + shape_str(initial.shape()) + " does not match " + shape_str(s));
  }
  return add_trailing(hybrid, Var(initial));
}

HybridAttention::HybridAttention(std::size_t c_in, std::size_t c_out, const GraphSpec& graph,
                                 AttentionOptions options, std::mt19937_64& rng)
    : c_in_(c_in), c_out_(c_out), c_inter_(options.inter ? options.inter : inter_channels(c_in)), options_(options) {
  if (c_in == 0 || c_out == 0) throw ConfigError("attention layer channels must be positive");
  const bool use_rd = options.branches != AttentionBranches::ra_only;
  const bool use_ra = options.branches != AttentionBranches::rd_only;
  for (auto s : kSubsets) {
    auto& sub = subset(s);
    if (use_rd) sub.rd = CompressionBranch{ConvLayer(c_inter_, c_in, 1, {}, rng), LayerNormLayer(c_inter_)};
    if (use_ra) sub.ra = CompressionBranch{ConvLayer(c_inter_, c_in, 1, {}, rng), LayerNormLayer(c_inter_)};
    if (options.branches == AttentionBranches::hybrid) sub.alpha = Var(Tensor::scalar(0.0), true);
    if (options.extension_conv) {
      // Start near a channel average of the final masks so the initial graph
      // dominates early training.
      ConvLayer ext(c_out, c_inter_, 1, {}, rng, 0.1 / std::sqrt(2.0 * static_cast<double>(c_inter_)));
      for (auto& w : ext.weight.mutable_value().data()) w += 1.0 / static_cast<double>(c_inter_);
      sub.extension = std::move(ext);
    }
    sub.value = ConvLayer(c_out, c_in, 1, {}, rng, 1.0 / std::sqrt(3.0));
    sub.initial_mask = graph.adjacency(s);
  }
}

Var HybridAttention::forward(const Var& x, DisableBranch disable, MaskCapture* capture) const {
  if (x.value().rank() != 4 || x.dim(1) != c_in_) {
    throw ShapeError("attention: expected (N, " + std::to_string(c_in_) + ", T, V) input, got " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), v = x.dim(3);
  if (subsets_[0].initial_mask.shape() != Shape{v, v}) {
    throw ShapeError("attention: input has " + std::to_string(v) + " vertices, graph has " +
                     std::to_string(subsets_[0].initial_mask.dim(0)));
  }
  const Var zeros(Tensor::zeros({n, c_inter_, v, v}));
  Var total;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& sub = subsets_[k];
    Var rd = zeros;
    Var ra = zeros;
    if (sub.rd && disable != DisableBranch::rd) rd = rd_mask(compress(x, *sub.rd));
    if (sub.ra && disable != DisableBranch::ra) ra = ra_mask(compress(x, *sub.ra));
    Var hybrid;
    if (sub.alpha.defined()) {
      hybrid = hybrid_mask(rd, ra, sub.alpha);
    } else {
      hybrid = sub.rd ? rd : ra;
    }
    Var fin = final_mask(hybrid, sub.initial_mask);
    Var mask = sub.extension ? (*sub.extension)(fin) : reshape(mean_axis(fin, 1), {n, 1, v, v});
    Var y = mask_aggregate(mask, sub.value(x));
    total = total.defined() ? add(total, y) : y;
    if (capture) {
      auto& slot = (*capture)[k];
      slot.rd = sub.rd ? rd.value() : Tensor();
      slot.ra = sub.ra ? ra.value() : Tensor();
      slot.hybrid = hybrid.value();
      slot.final = fin.value();
    }
  }
  return relu(total);
}

void HybridAttention::collect(const std::string& prefix, ParamList& out) const {
  for (auto s : kSubsets) {
    const auto& sub = subset(s);
    const std::string p = prefix + "." + subset_name(s);
    if (sub.rd) {
      sub.rd->conv.collect(p + ".rd.compress", out);
      sub.rd->norm.collect(p + ".rd.norm", out);
    }
    if (sub.ra) {
      sub.ra->conv.collect(p + ".ra.compress", out);
      sub.ra->norm.collect(p + ".ra.norm", out);
    }
    if (sub.alpha.defined()) out.params.push_back({p + ".alpha", sub.alpha, ParamKind::alpha});
    if (sub.extension) sub.extension->collect(p + ".extension", out);
    sub.value.collect(p + ".value", out);
  }
}

}  // namespace hagcn
