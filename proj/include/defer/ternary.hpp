#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace defer {

/// Per-dimension depth cap. 3^40 still fits in an unsigned 64-bit numerator.
inline constexpr int kMaxDepth = 40;

using Numerator = std::uint64_t;
using Depth = std::uint8_t;

/// 3^k for 0 <= k <= kMaxDepth.
Numerator pow3(int k);

/// 3^-k rounded to double.
double inv_pow3(int k);

/// Hyperrectangular domain in original units.
struct DomainSpec {
  std::vector<double> lower;
  std::vector<double> upper;

  static DomainSpec unit_cube(std::size_t dim);

  std::size_t dim() const { return lower.size(); }

  /// Throws ConfigError unless bounds are finite, matched and strictly ordered.
  void validate() const;

  double width(std::size_t i) const { return upper[i] - lower[i]; }
  double log_volume() const;
  double volume() const;

  bool contains(std::span<const double> x) const;

  /// Original -> unit cube. Throws OutOfDomainError outside the closed domain.
  void to_normalized(std::span<const double> x, std::span<double> out) const;
  void to_original(std::span<const double> p, std::span<double> out) const;
};

/// Box prod_i [n_i / 3^k_i, (n_i + 1) / 3^k_i) in the unit cube.
struct TernaryBox {
  std::vector<Numerator> numerators;
  std::vector<Depth> depths;

  static TernaryBox unit(std::size_t dim);

  std::size_t dim() const { return depths.size(); }
  bool operator==(const TernaryBox&) const = default;
};

struct VolumeDiameter {
  double volume;
  double diameter;
  double volume_lo;  // 3^-s - volume, so volume + volume_lo is exact to ~1e-35
};

/// Normalized volume 3^-sum(k) and diameter sqrt(sum 3^-2k). Depends only on the
/// depth multiset.
VolumeDiameter volume_diameter(std::span<const Depth> depths);
inline VolumeDiameter volume_diameter(const TernaryBox& box) {
  return volume_diameter(std::span<const Depth>(box.depths));
}

struct MassTerms {
  double hi;
  double lo;
};

/// (volume + volume_lo) * w as an unevaluated sum. Summing these in double-double
/// makes e.g. a uniform density total exactly 1.
inline MassTerms mass_terms(double volume, double volume_lo, double w) {
  const double hi = volume * w;
  return {hi, std::fma(volume, w, -hi) + volume_lo * w};
}

/// Exact midpoint (2n + 1) / (2 * 3^k), rounded once.
double centroid_coordinate(Numerator n, Depth k);
void centroid(std::span<const Numerator> numerators, std::span<const Depth> depths,
              std::span<double> out);

/// Lower and upper normalized bound of one dimension.
double lower_bound(Numerator n, Depth k);
double upper_bound(Numerator n, Depth k);

/// Bounds of a box in original units. Faces on the domain boundary map to
/// the exact domain bounds.
void original_bounds(const DomainSpec& domain, std::span<const Numerator> numerators,
                     std::span<const Depth> depths, std::span<double> lo, std::span<double> hi);

/// Exact grid index floor(p * 3^40), clamped so the top face maps into the
/// last cell. p must lie in [0, 1].
Numerator quantize(double p);

/// Whether a quantized coordinate falls in [n / 3^k, (n + 1) / 3^k).
inline bool cell_contains(Numerator n, Depth k, Numerator q) {
  return q / pow3(kMaxDepth - k) == n;
}

bool box_contains(std::span<const Numerator> numerators, std::span<const Depth> depths,
                  std::span<const Numerator> quantized);

/// True iff the two boxes share no interior point (exact).
bool boxes_disjoint(const TernaryBox& a, const TernaryBox& b);

/// Exact check that a multiset of boxes has total volume 1: sum_i 3^-s_i == 1
/// with s_i the depth sum of box i.
bool volumes_sum_to_one(std::span<const int> depth_sums);

struct TrisectChild {
  TernaryBox box;
  std::vector<double> centroid;
  bool is_center = false;
};

/// Split a box along `ranked_dims` in order. For each ranked dimension the
/// two outer thirds of the remaining middle box become children; the final
/// middle box is the center child (returned last). Children tile the parent.
std::vector<TrisectChild> trisect_geometry(const TernaryBox& box,
                                           std::span<const int> ranked_dims);

}  // namespace defer
