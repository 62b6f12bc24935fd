#include "defer/tree.hpp"

#include <cmath>
#include <numeric>

#include "defer/error.hpp"

namespace defer {

Tree::Tree(DomainSpec domain) : domain_(std::move(domain)), dim_(domain_.dim()) {}

Tree Tree::create_root(DomainSpec domain, double log_f_at_center) {
  domain.validate();
  if (std::isnan(log_f_at_center)) throw EvaluationError("root log density is NaN");
  Tree tree(std::move(domain));
  tree.nodes_.push_back(PartitionNode{0, 0, NodeStatus::leaf, log_f_at_center});
  tree.numerators_.assign(tree.dim_, 0);
  tree.depths_.assign(tree.dim_, 0);
  tree.leaf_count_ = 1;
  tree.eval_count_ = 1;
  return tree;
}

TernaryBox Tree::box(NodeId id) const {
  const auto n = numerators(id);
  const auto k = depths(id);
  return TernaryBox{{n.begin(), n.end()}, {k.begin(), k.end()}};
}

void Tree::centroid(NodeId id, std::span<double> out) const {
  defer::centroid(numerators(id), depths(id), out);
}

void Tree::bounds(NodeId id, std::span<double> lo, std::span<double> hi) const {
  original_bounds(domain_, numerators(id), depths(id), lo, hi);
}

NodeId Tree::descend(std::span<const Numerator> quantized) const {
  NodeId id = root();
  while (nodes_[id].status == NodeStatus::divided) {
    const PartitionNode& node = nodes_[id];
    NodeId next = id;
    for (NodeId c = node.first_child; c < node.first_child + node.child_count; ++c) {
      if (box_contains(numerators(c), depths(c), quantized)) {
        next = c;
        break;
      }
    }
    if (next == id) throw InvariantError("children of a divided node do not cover the point");
    id = next;
  }
  return id;
}

NodeId Tree::locate_normalized(std::span<const double> p) const {
  if (p.size() != dim_) throw OutOfDomainError("point has the wrong dimension");
  std::vector<Numerator> q(dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) throw OutOfDomainError("normalized point outside [0, 1]");
    q[i] = quantize(p[i]);
  }
  return descend(q);
}

NodeId Tree::locate(std::span<const double> x) const {
  if (x.size() != dim_) throw OutOfDomainError("point has the wrong dimension");
  std::vector<double> p(dim_);
  domain_.to_normalized(x, p);
  return locate_normalized(p);
}

NodeId Tree::divide(NodeId parent, std::span<const NewChild> children, std::size_t evaluations) {
  if (parent >= nodes_.size() || !is_leaf(parent)) {
    throw InvariantError("only live leaves can be divided");
  }
  if (children.size() < 3) throw InvariantError("a division produces at least three children");
  const auto first = static_cast<NodeId>(nodes_.size());
  for (const NewChild& c : children) {
    if (c.box.dim() != dim_) throw InvariantError("child box has the wrong dimension");
    nodes_.push_back(PartitionNode{0, 0, NodeStatus::leaf, c.log_f});
    numerators_.insert(numerators_.end(), c.box.numerators.begin(), c.box.numerators.end());
    depths_.insert(depths_.end(), c.box.depths.begin(), c.box.depths.end());
  }
  PartitionNode& p = nodes_[parent];
  p.first_child = first;
  p.child_count = static_cast<std::uint16_t>(children.size());
  p.status = NodeStatus::divided;
  leaf_count_ += children.size() - 1;
  eval_count_ += evaluations;
  return first;
}

std::vector<NodeId> Tree::leaves() const {
  std::vector<NodeId> out;
  out.reserve(leaf_count_);
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    if (is_leaf(id)) out.push_back(id);
  }
  return out;
}

bool Tree::leaves_tile_unit_cube() const {
  std::vector<int> sums;
  sums.reserve(leaf_count_);
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    if (!is_leaf(id)) continue;
    const auto k = depths(id);
    sums.push_back(std::accumulate(k.begin(), k.end(), 0));
  }
  return volumes_sum_to_one(sums);
}

}  // namespace defer
