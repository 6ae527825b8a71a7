#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "hagcn/autograd.hpp"
#include "hagcn/tensor.hpp"

namespace hagcn {

// Directed skeleton edge, 0-based joint indices.
struct Edge {
  std::size_t parent;
  std::size_t child;
  bool operator==(const Edge&) const = default;
};

enum class Subset : std::size_t { identity = 0, inward = 1, outward = 2 };
inline constexpr std::array<Subset, 3> kSubsets = {Subset::identity, Subset::inward, Subset::outward};
const char* subset_name(Subset s);

// Skeleton graph with its three column-normalized adjacency subsets.
// A subset matrix is indexed [receiver, source]: vertex i gathers from j.
class GraphSpec {
 public:
  GraphSpec() = default;
  // Hub joints, when extra_links is set, are linked pairwise; the earlier hub
  // in `hubs` plays the parent role.
  GraphSpec(std::string name, std::size_t num_joints, std::vector<Edge> natural_edges, std::vector<std::size_t> hubs,
            bool extra_links);

  const std::string& name() const { return name_; }
  std::size_t num_joints() const { return num_joints_; }
  bool extra_links() const { return extra_links_; }
  const std::vector<Edge>& natural_edges() const { return natural_; }
  const std::vector<Edge>& extra_edges() const { return extra_; }
  const std::vector<std::size_t>& hubs() const { return hubs_; }
  std::vector<Edge> edges() const;

  const Tensor& adjacency(Subset s) const { return subsets_[static_cast<std::size_t>(s)]; }

  // Bone parent from the natural edges; nullopt for roots.
  std::optional<std::size_t> parent_of(std::size_t joint) const { return parent_[joint]; }

 private:
  std::string name_;
  std::size_t num_joints_ = 0;
  bool extra_links_ = false;
  std::vector<Edge> natural_;
  std::vector<Edge> extra_;
  std::vector<std::size_t> hubs_;
  std::vector<std::optional<std::size_t>> parent_;
  std::array<Tensor, 3> subsets_;
};

// NTU RGB+D 25-joint skeleton; hubs are head, both hand tips and both feet.
GraphSpec build_ntu_graph(bool extra_links);
// OpenPose 18-joint skeleton; hubs are nose, both wrists and both ankles.
GraphSpec build_kinetics_graph(bool extra_links);
// Looks up "ntu" / "kinetics" by name.
GraphSpec build_named_graph(const std::string& name, bool extra_links);

std::vector<Edge> ntu_natural_edges();
std::vector<Edge> kinetics_natural_edges();

// Plain-text edge list: one "parent child" pair per line, '#' starts a comment.
std::vector<Edge> parse_edge_list(const std::string& text);
std::vector<Edge> load_edge_file(const std::string& path);

// Divides each column by its sum; all-zero columns stay zero.
Tensor normalize_adjacency(const Tensor& binary);

// G[n,c,t,i] = sum_j A[i,j] * F[n,c,t,j].
Var apply_graph(const Tensor& adjacency, const Var& features);

}  // namespace hagcn
