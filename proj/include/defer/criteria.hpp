#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "defer/leaf_index.hpp"
#include "defer/rng.hpp"
#include "defer/tree.hpp"

namespace defer {

/// Knobs of the three division criteria. Negative `big_m` / `ball_points`
/// select the dimension-dependent defaults min(5, D) and D.
struct CriteriaConfig {
  double beta = 1.0;       // CR1 mass threshold factor
  double alpha = 20.0;     // high-mass outlier factor
  double phi = 1.2;        // CR3 ball diameter factor
  int big_m = -1;          // maximum size of the high-mass set
  int linear_points = 1;   // random CR2 points per affine subspace (l)
  int ball_points = -1;    // CR3 points per high-mass partition (b)

  void validate() const;
  std::size_t resolved_big_m(std::size_t dim) const;
  std::size_t resolved_ball_points(std::size_t dim) const;
};

struct HullMember {
  HullPoint point;
  double k_upper;  // +inf for the right-most member
};

/// Upper-right quadrant of the convex hull of `candidates` (sorted by
/// ascending x). Runs from the maximum-ordinate point to the maximum-abscissa
/// point; collinear points are kept.
std::vector<HullMember> urqh(std::span<const HullPoint> candidates);

/// Leaves satisfying CR1 given the hull of the current index.
std::vector<NodeId> cr1_select(std::span<const HullMember> hull, double z_hat,
                               std::size_t leaf_count, double beta);
std::vector<NodeId> cr1_select(LeafIndex& index, const KeyTable& keys, double z_hat,
                               std::size_t leaf_count, double beta);

struct MassEntry {
  double mass;
  NodeId node;
};

struct HighMassSet {
  std::vector<MassEntry> members;  // descending mass
  bool empty() const { return members.empty(); }
  std::size_t size() const { return members.size(); }
};

/// High-mass set from leaves sorted by descending mass (ties: lower id).
/// Only the first `m` entries are examined; a result of size <= 1 is empty.
HighMassSet high_mass_set(std::span<const MassEntry> by_mass_desc, double z_hat,
                          std::size_t leaf_count, std::size_t m, double alpha);

/// Rows of a flat point list (count x dim), normalized coordinates.
struct PointSet {
  std::size_t dim = 0;
  std::vector<double> coords;

  std::size_t size() const { return dim == 0 ? 0 : coords.size() / dim; }
  std::span<const double> operator[](std::size_t i) const { return {coords.data() + i * dim, dim}; }
  void push(std::span<const double> p) { coords.insert(coords.end(), p.begin(), p.end()); }
};

/// Relative singular value threshold below which a set of centroids is
/// treated as affinely degenerate.
inline constexpr double kDegeneracyTolerance = 1e-9;

/// CR2 representer points: for every subset of H with at least two members
/// whose centroids are affinely independent, the subset mean plus
/// `linear_points` random points on the subset's affine hull. Points
/// outside the unit cube are dropped; duplicates are removed.
PointSet cr2_representers(const HighMassSet& high_mass, const Tree& tree, Rng& rng,
                          int linear_points);

/// CR3 representer points: `ball_points` uniform draws in the ball of
/// diameter phi * d around each member centroid, dropping points outside
/// the unit cube.
PointSet cr3_representers(const HighMassSet& high_mass, const Tree& tree, Rng& rng, double phi,
                          std::size_t ball_points);

struct Selection {
  std::vector<NodeId> nodes;  // ascending, unique
  std::size_t from_cr1 = 0;
  std::size_t cr2_points = 0;
  std::size_t cr3_points = 0;
  std::size_t unique_keys = 0;
};

struct SelectionInputs {
  const Tree& tree;
  LeafIndex& index;
  const KeyTable& keys;
  double z_hat;
  const HighMassSet& high_mass;
  const CriteriaConfig& config;
  Rng cr2_rng;
  Rng cr3_rng;
};

/// Union of CR1 and the leaves hit by CR2/CR3 representer points.
Selection select_to_divide(SelectionInputs in);

}  // namespace defer
