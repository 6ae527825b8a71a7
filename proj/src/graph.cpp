#include "hagcn/graph.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "hagcn/errors.hpp"
#include "hagcn/ops.hpp"

namespace hagcn {

const char* subset_name(Subset s) {
  switch (s) {
    case Subset::identity: return "identity";
    case Subset::inward: return "inward";
    case Subset::outward: return "outward";
  }
  return "?";
}

GraphSpec::GraphSpec(std::string name, std::size_t num_joints, std::vector<Edge> natural_edges,
                     std::vector<std::size_t> hubs, bool extra_links)
    : name_(std::move(name)),
      num_joints_(num_joints),
      extra_links_(extra_links),
      natural_(std::move(natural_edges)),
      hubs_(std::move(hubs)) {
  if (num_joints_ == 0) throw ConfigError("graph must have at least one joint");
  parent_.assign(num_joints_, std::nullopt);
  for (const auto& e : natural_) {
    if (e.parent >= num_joints_ || e.child >= num_joints_) {
      throw ConfigError("edge (" + std::to_string(e.parent) + ", " + std::to_string(e.child) + ") out of range for " +
                        std::to_string(num_joints_) + " joints");
    }
    if (e.parent == e.child) throw ConfigError("self-loop edge on joint " + std::to_string(e.child));
    if (parent_[e.child]) throw ConfigError("joint " + std::to_string(e.child) + " has two parents");
    parent_[e.child] = e.parent;
  }
  for (auto h : hubs_) {
    if (h >= num_joints_) throw ConfigError("hub joint " + std::to_string(h) + " out of range");
  }
  if (extra_links_) {
    for (std::size_t a = 0; a < hubs_.size(); ++a)
      for (std::size_t b = a + 1; b < hubs_.size(); ++b) extra_.push_back({hubs_[a], hubs_[b]});
  }

  Tensor in_bin({num_joints_, num_joints_});
  Tensor out_bin({num_joints_, num_joints_});
  for (const auto& e : edges()) {
    in_bin.at({e.parent, e.child}) = 1.0;
    out_bin.at({e.child, e.parent}) = 1.0;
  }
  subsets_[0] = Tensor::identity(num_joints_);
  subsets_[1] = normalize_adjacency(in_bin);
  subsets_[2] = normalize_adjacency(out_bin);
}

std::vector<Edge> GraphSpec::edges() const {
  std::vector<Edge> all = natural_;
  all.insert(all.end(), extra_.begin(), extra_.end());
  return all;
}

namespace {

// (child, parent) pairs, 1-based, as distributed with the NTU RGB+D tooling.
constexpr std::array<std::array<std::size_t, 2>, 24> kNtuChildParent = {{
    {1, 2}, {2, 21}, {3, 21}, {4, 3}, {5, 21}, {6, 5}, {7, 6}, {8, 7},
    {9, 21}, {10, 9}, {11, 10}, {12, 11}, {13, 1}, {14, 13}, {15, 14}, {16, 15},
    {17, 1}, {18, 17}, {19, 18}, {20, 19}, {22, 23}, {23, 8}, {24, 25}, {25, 12},
}};

// OpenPose-18 (child, parent) pairs, 0-based, rooted at the neck.
constexpr std::array<std::array<std::size_t, 2>, 17> kOpenPoseChildParent = {{
    {4, 3}, {3, 2}, {7, 6}, {6, 5}, {13, 12}, {12, 11}, {10, 9}, {9, 8}, {11, 5},
    {8, 2}, {5, 1}, {2, 1}, {0, 1}, {15, 0}, {14, 0}, {17, 15}, {16, 14},
}};

}  // namespace

std::vector<Edge> ntu_natural_edges() {
  std::vector<Edge> edges;
  for (auto [child, parent] : kNtuChildParent) edges.push_back({parent - 1, child - 1});
  return edges;
}

std::vector<Edge> kinetics_natural_edges() {
  std::vector<Edge> edges;
  for (auto [child, parent] : kOpenPoseChildParent) edges.push_back({parent, child});
  return edges;
}

GraphSpec build_ntu_graph(bool extra_links) {
  // head 4, left hand tip 22, right hand tip 24, left foot 16, right foot 20 (1-based)
  return GraphSpec("ntu", 25, ntu_natural_edges(), {3, 21, 23, 15, 19}, extra_links);
}

GraphSpec build_kinetics_graph(bool extra_links) {
  // nose, right wrist, left wrist, right ankle, left ankle
  return GraphSpec("kinetics", 18, kinetics_natural_edges(), {0, 4, 7, 10, 13}, extra_links);
}

GraphSpec build_named_graph(const std::string& name, bool extra_links) {
  if (name == "ntu") return build_ntu_graph(extra_links);
  if (name == "kinetics") return build_kinetics_graph(extra_links);
  throw ConfigError("unknown graph '" + name + "' (expected ntu or kinetics)");
}

std::vector<Edge> parse_edge_list(const std::string& text) {
  std::vector<Edge> edges;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    long long parent = 0, child = 0;
    if (!(ls >> parent)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw FormatError("edge list line " + std::to_string(lineno) + ": expected 'parent child'");
    }
    std::string rest;
    if (!(ls >> child) || (ls >> rest) || parent < 0 || child < 0) {
      throw FormatError("edge list line " + std::to_string(lineno) + ": expected two non-negative integers");
    }
    edges.push_back({static_cast<std::size_t>(parent), static_cast<std::size_t>(child)});
  }
  return edges;
}

std::vector<Edge> load_edge_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open edge file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_edge_list(ss.str());
}

Tensor normalize_adjacency(const Tensor& binary) {
  if (binary.rank() != 2 || binary.dim(0) != binary.dim(1)) {
    throw ShapeError("normalize_adjacency: expected a square matrix, got " + shape_str(binary.shape()));
  }
  const std::size_t v = binary.dim(0);
  Tensor out = binary;
  for (std::size_t j = 0; j < v; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < v; ++i) col += binary[i * v + j];
    if (col == 0.0) continue;
    for (std::size_t i = 0; i < v; ++i) out[i * v + j] = binary[i * v + j] / col;
  }
  return out;
}

Var apply_graph(const Tensor& adjacency, const Var& features) {
  if (features.value().rank() != 4 || adjacency.shape() != Shape{features.dim(3), features.dim(3)}) {
    throw ShapeError("apply_graph: adjacency " + shape_str(adjacency.shape()) + " does not match features " +
                     shape_str(features.shape()));
  }
  return mask_aggregate(Var(adjacency), features);
}

}  // namespace hagcn
