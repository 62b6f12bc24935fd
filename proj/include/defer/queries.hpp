#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "defer/rng.hpp"
#include "defer/ternary.hpp"
#include "defer/tree.hpp"

namespace defer {

class Engine;

/// Immutable snapshot of a finished run: the leaf partitions with their
/// relative log densities, the domain and the log offset that converts
/// relative values back to the black box's scale. All queries are const and
/// may run concurrently.
class Approximation {
 public:
  struct Leaf {
    std::uint64_t id;  // creation id in the source tree
    double log_f;      // relative log density
  };

  Approximation(DomainSpec domain, double log_offset, std::vector<Leaf> leaves,
                std::vector<Numerator> numerators, std::vector<Depth> depths);

  static Approximation from_tree(const Tree& tree, double log_offset);
  static Approximation from_engine(const Engine& engine);

  std::size_t dim() const { return domain_.dim(); }
  std::size_t size() const { return leaves_.size(); }
  const DomainSpec& domain() const { return domain_; }
  double log_offset() const { return log_offset_; }
  const Leaf& leaf(std::size_t i) const { return leaves_[i]; }

  std::span<const Numerator> numerators(std::size_t i) const {
    return {numerators_.data() + i * dim(), dim()};
  }
  std::span<const Depth> depths(std::size_t i) const { return {depths_.data() + i * dim(), dim()}; }

  /// Leaf bounds and centroid in original units.
  void bounds(std::size_t i, std::span<double> lo, std::span<double> hi) const;
  void centroid(std::size_t i, std::span<double> out) const;
  /// log of the leaf volume in original units.
  double log_volume(std::size_t i) const;

  /// Unnormalised leaf mass on a shifted scale; only ratios are meaningful.
  double mass(std::size_t i) const { return mass_[i]; }
  std::span<const double> masses() const { return mass_; }
  /// Low-order part of mass(i); only used in sums.
  double mass_lo(std::size_t i) const { return mass_lo_[i]; }
  /// Sum of mass() in leaf order (double-double accumulation).
  double total_mass() const { return total_mass_; }
  /// Converts a value on the mass() scale into original-unit evidence units.
  double log_scale() const { return log_scale_; }
  /// Relative log density that mass() is measured against.
  double shift() const { return shift_; }

  /// Index of the leaf containing `x` (original units).
  std::size_t locate(std::span<const double> x) const;

 private:
  std::size_t find_quantized(std::span<const Numerator> q) const;

  DomainSpec domain_;
  double log_offset_;
  std::vector<Leaf> leaves_;
  std::vector<Numerator> numerators_;
  std::vector<Depth> depths_;
  std::vector<double> mass_;
  std::vector<double> mass_lo_;
  double total_mass_ = 0.0;
  double log_scale_ = 0.0;
  double shift_ = 0.0;

  // Point location without the internal tree: one exact hash lookup per
  // distinct depth vector.
  std::vector<std::vector<Depth>> depth_patterns_;
  std::unordered_map<std::string, std::size_t> cell_lookup_;
};

struct Evidence {
  double z;
  double log_z;
  bool all_zero;
};

Evidence evidence(const Approximation& approx);

/// Normalised density at `x` in original units.
double density(const Approximation& approx, std::span<const double> x);

/// Vose alias table over leaf masses.
class AliasSampler {
 public:
  explicit AliasSampler(std::span<const double> weights);
  static AliasSampler build(const Approximation& approx) { return AliasSampler(approx.masses()); }

  std::size_t size() const { return prob_.size(); }
  std::span<const double> prob() const { return prob_; }
  std::span<const std::uint32_t> alias() const { return alias_; }

  /// One categorical draw: uniform slot, then a biased coin.
  std::size_t draw(Rng& rng) const;
  /// Exact probability of each outcome implied by the tables.
  std::vector<double> outcome_probabilities() const;

 private:
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

/// `n` points (row-major, original units): a leaf by alias draw, then a
/// uniform point inside it.
std::vector<double> sample(const AliasSampler& sampler, const Approximation& approx, Rng& rng,
                           std::size_t n);

/// -sum_i p_i log(p_i / v_i) for cell probabilities p and volumes v.
double piecewise_entropy(std::span<const double> probabilities, std::span<const double> volumes);

/// Differential entropy (nats, original units) of the approximation.
double entropy(const Approximation& approx);

/// Midpoint-rule expectation of g under the normalised approximation.
double expectation(const Approximation& approx,
                   const std::function<double(std::span<const double>)>& g);

struct SubregionMass {
  double mass;         // integral of f over the region, original units
  double probability;  // mass / Z
};

/// Region given by bounds in original units; leaves straddling the region
/// contribute by overlapped volume fraction.
SubregionMass subregion_mass(const Approximation& approx, std::span<const double> lo,
                             std::span<const double> hi);

/// Marginal density over `kept_dims` at `at` (original units on those dims).
double marginal_density(const Approximation& approx, std::span<const int> kept_dims,
                        std::span<const double> at);

struct ConditionalCell {
  std::size_t leaf;                  // index into the approximation
  std::vector<Numerator> numerators;  // free dims only
  std::vector<Depth> depths;
  std::vector<double> lo, hi;        // original units, free dims
  double density;                    // normalised on the free dims
};

struct ConditionalSlice {
  std::vector<int> free_dims;
  std::vector<ConditionalCell> cells;
};

/// Conditional density of the free dims given `fixed_dims` = `values`.
/// Throws Error when the slice carries no mass.
ConditionalSlice conditional_slice(const Approximation& approx, std::span<const int> fixed_dims,
                                   std::span<const double> values);

}  // namespace defer
