#pragma once

#include <set>
#include <span>
#include <vector>

#include "defer/criteria.hpp"
#include "defer/extended_sum.hpp"

namespace defer {

/// Running totals over the leaf set: the mass sum Z_hat (double-double) and
/// the leaves ordered by mass for the high-mass set. Including a leaf adds its
/// mass, excluding subtracts it.
class Aggregates {
 public:
  /// `mass_lo` is the low-order part of the mass; it only enters the sum.
  void include(NodeId node, double mass, double mass_lo = 0.0);
  void exclude(NodeId node, double mass, double mass_lo = 0.0);

  /// Batch form used after a division: children in, parent out.
  void update(std::span<const MassEntry> included, std::span<const MassEntry> excluded);

  double z_hat() const { return z_.value(); }
  const ExtendedSum& z_sum() const { return z_; }

  /// Up to `m` largest masses, descending; ties ordered by lower node id.
  std::vector<MassEntry> top(std::size_t m) const;

  std::size_t size() const { return by_mass_.size(); }
  void clear();
  /// Replace the running sum, e.g. after a full recompute.
  void reset_sum(const ExtendedSum& z) { z_ = z; }

 private:
  struct ByMassDesc {
    bool operator()(const MassEntry& a, const MassEntry& b) const {
      if (a.mass != b.mass) return a.mass > b.mass;
      return a.node < b.node;
    }
  };

  ExtendedSum z_;
  std::set<MassEntry, ByMassDesc> by_mass_;
};

}  // namespace defer
