#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "defer/tree.hpp"

namespace defer {

using KeyId = std::uint32_t;

/// Interns depth multisets (sorted depth vectors). Every partition with the
/// same multiset has the same volume and diameter, hence the same abscissa
/// V * d / 2.
class KeyTable {
 public:
  KeyId intern(std::span<const Depth> depths);

  std::size_t size() const { return abscissa_.size(); }
  double abscissa(KeyId key) const { return abscissa_[key]; }
  double volume(KeyId key) const { return volume_[key]; }
  double volume_lo(KeyId key) const { return volume_lo_[key]; }
  double diameter(KeyId key) const { return diameter_[key]; }

 private:
  std::unordered_map<std::string, KeyId> ids_;
  std::vector<double> abscissa_;
  std::vector<double> volume_;
  std::vector<double> volume_lo_;
  std::vector<double> diameter_;
  std::string scratch_;
};

struct HullPoint {
  NodeId node = 0;
  double x = 0.0;  // V * d / 2
  double y = 0.0;  // V * f
  KeyId key = 0;
};

/// Hash map of heaps: one max-heap of (ordinate, node) per abscissa key.
/// Removal is lazy: the node is flagged dead and its heap entry is discarded
/// once it surfaces at the top.
class LeafIndex {
 public:
  struct Entry {
    double y;
    NodeId node;
  };

  void insert(NodeId node, KeyId key, double y);
  void remove(NodeId node);
  bool contains(NodeId node) const {
    return node < live_.size() && live_[node] != 0;
  }

  /// Max-ordinate live entry of a key; ties go to the lower node id.
  std::optional<Entry> peek(KeyId key);

  /// Number of keys that currently hold a live leaf (U).
  std::size_t unique_keys() const { return live_keys_; }
  std::size_t size() const { return live_count_; }

  /// One point per live key (its max-ordinate leaf), ascending in x with
  /// ties ordered by key id.
  std::vector<HullPoint> hull_candidates(const KeyTable& keys);

  void clear();

 private:
  struct Bucket {
    std::vector<Entry> heap;
    std::size_t live = 0;
  };
  void purge(KeyId key);

  std::vector<Bucket> buckets_;
  std::vector<KeyId> node_key_;
  std::vector<double> node_y_;
  std::vector<std::uint8_t> live_;
  std::size_t live_keys_ = 0;
  std::size_t live_count_ = 0;
};

}  // namespace defer
