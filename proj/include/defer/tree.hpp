#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "defer/ternary.hpp"

namespace defer {

using NodeId = std::uint32_t;

enum class NodeStatus : std::uint8_t { leaf, divided };

struct PartitionNode {
  // Children occupy the contiguous id range [first_child, first_child + child_count).
  NodeId first_child = 0;
  std::uint16_t child_count = 0;
  NodeStatus status = NodeStatus::leaf;
  // Log density at the centroid, relative to the owning run's log offset.
  double log_f = 0.0;
};

struct NewChild {
  TernaryBox box;
  double log_f;
};

/// Append-only arena of ternary partitions. Node 0 is the unit cube; dividing
/// a leaf appends its children contiguously and flips it to `divided`.
///
/// Boxes live in flat per-dimension arrays so that a node is addressed by
/// `id * dim`. Read-only access is safe from multiple threads.
class Tree {
 public:
  static Tree create_root(DomainSpec domain, double log_f_at_center);

  std::size_t dim() const { return dim_; }
  const DomainSpec& domain() const { return domain_; }
  static constexpr NodeId root() { return 0; }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t leaf_count() const { return leaf_count_; }
  /// Density evaluations made while growing the tree. Equals leaf_count().
  std::size_t eval_count() const { return eval_count_; }

  const PartitionNode& node(NodeId id) const { return nodes_[id]; }
  bool is_leaf(NodeId id) const { return nodes_[id].status == NodeStatus::leaf; }

  std::span<const Numerator> numerators(NodeId id) const {
    return {numerators_.data() + std::size_t{id} * dim_, dim_};
  }
  std::span<const Depth> depths(NodeId id) const {
    return {depths_.data() + std::size_t{id} * dim_, dim_};
  }
  TernaryBox box(NodeId id) const;

  /// Normalized centroid.
  void centroid(NodeId id, std::span<double> out) const;
  /// Box bounds in original units.
  void bounds(NodeId id, std::span<double> lo, std::span<double> hi) const;

  /// Leaf containing `x` (original units). Throws OutOfDomainError.
  NodeId locate(std::span<const double> x) const;
  /// Leaf containing normalized point `p` in [0, 1]^D.
  NodeId locate_normalized(std::span<const double> p) const;

  /// Replace leaf `parent` by `children`, which must tile it. The caller
  /// reports how many of the children required a fresh density evaluation.
  /// Returns the id of the first child.
  NodeId divide(NodeId parent, std::span<const NewChild> children, std::size_t evaluations);

  /// Ids of all current leaves in creation order.
  std::vector<NodeId> leaves() const;

  /// Exact tiling check over the leaf set.
  bool leaves_tile_unit_cube() const;

  void set_log_f(NodeId id, double log_f) { nodes_[id].log_f = log_f; }

 private:
  Tree(DomainSpec domain);

  NodeId descend(std::span<const Numerator> quantized) const;

  DomainSpec domain_;
  std::size_t dim_ = 0;
  std::vector<PartitionNode> nodes_;
  std::vector<Numerator> numerators_;
  std::vector<Depth> depths_;
  std::size_t leaf_count_ = 0;
  std::size_t eval_count_ = 0;
};

}  // namespace defer
