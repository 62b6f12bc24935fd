#include "defer/ternary.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

#include "defer/error.hpp"

namespace defer {
namespace {

constexpr std::array<Numerator, kMaxDepth + 1> make_pow3() {
  std::array<Numerator, kMaxDepth + 1> out{};
  out[0] = 1;
  for (int k = 1; k <= kMaxDepth; ++k) out[k] = out[k - 1] * 3;
  return out;
}
constexpr auto kPow3 = make_pow3();

std::array<double, kMaxDepth + 1> make_inv_pow3() {
  std::array<double, kMaxDepth + 1> out{};
  for (int k = 0; k <= kMaxDepth; ++k) {
    out[k] = static_cast<double>(1.0L / static_cast<long double>(kPow3[k]));
  }
  return out;
}
const auto kInvPow3 = make_inv_pow3();

}  // namespace

Numerator pow3(int k) { return kPow3[k]; }
double inv_pow3(int k) { return kInvPow3[k]; }

DomainSpec DomainSpec::unit_cube(std::size_t dim) {
  return DomainSpec{std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
}

void DomainSpec::validate() const {
  if (lower.empty()) throw ConfigError("domain must have at least one dimension");
  if (lower.size() != upper.size()) {
    throw ConfigError("domain lower/upper bounds have different lengths");
  }
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (!std::isfinite(lower[i]) || !std::isfinite(upper[i])) {
      throw ConfigError("domain bound " + std::to_string(i) + " is not finite");
    }
    if (!(upper[i] > lower[i])) {
      throw ConfigError("domain upper bound must exceed lower bound in dimension " +
                        std::to_string(i));
    }
  }
}

double DomainSpec::log_volume() const {
  double s = 0.0;
  for (std::size_t i = 0; i < dim(); ++i) s += std::log(width(i));
  return s;
}

double DomainSpec::volume() const {
  double v = 1.0;
  for (std::size_t i = 0; i < dim(); ++i) v *= width(i);
  return v;
}

bool DomainSpec::contains(std::span<const double> x) const {
  if (x.size() != dim()) return false;
  for (std::size_t i = 0; i < dim(); ++i) {
    if (!(x[i] >= lower[i] && x[i] <= upper[i])) return false;
  }
  return true;
}

void DomainSpec::to_normalized(std::span<const double> x, std::span<double> out) const {
  if (!contains(x)) throw OutOfDomainError("point outside the domain bounds");
  for (std::size_t i = 0; i < dim(); ++i) {
    out[i] = std::clamp((x[i] - lower[i]) / width(i), 0.0, 1.0);
  }
}

void DomainSpec::to_original(std::span<const double> p, std::span<double> out) const {
  for (std::size_t i = 0; i < dim(); ++i) {
    out[i] = std::clamp(lower[i] + p[i] * width(i), lower[i], upper[i]);
  }
}

TernaryBox TernaryBox::unit(std::size_t dim) {
  return TernaryBox{std::vector<Numerator>(dim, 0), std::vector<Depth>(dim, 0)};
}

VolumeDiameter volume_diameter(std::span<const Depth> depths) {
  int total = 0;
  long double sq = 0.0L;
  for (Depth k : depths) {
    total += k;
    const long double side = 1.0L / static_cast<long double>(kPow3[k]);
    sq += side * side;
  }
  // 3^-s as a product of chunks 3^-k (k <= 40), each split into a double
  // hi + lo pair; the product is carried as a double-double.
  auto split = [](int k, double& hi, double& lo) {
    const long double exact = 1.0L / static_cast<long double>(kPow3[k]);
    hi = static_cast<double>(exact);
    // hi * 3^k - 1 = r * 2^(e-53) exactly, with hi = m * 2^(e-53).
    int e = 0;
    const double f = std::frexp(hi, &e);
    const auto m = static_cast<__int128>(std::ldexp(f, 53));
    const __int128 r = m * static_cast<__int128>(kPow3[k]) - (static_cast<__int128>(1) << (53 - e));
    lo = -static_cast<double>(static_cast<long double>(r) / static_cast<long double>(kPow3[k])) *
         std::ldexp(1.0, e - 53);
  };
  double volume = 1.0, volume_lo = 0.0;
  for (int left = total; left > 0;) {
    const int k = std::min(left, kMaxDepth);
    left -= k;
    double h = 0.0, l = 0.0;
    split(k, h, l);
    const double p = volume * h;
    const double e = std::fma(volume, h, -p) + (volume * l + volume_lo * h);
    volume = p + e;
    volume_lo = e - (volume - p);
  }
  return {volume, static_cast<double>(std::sqrt(sq)), volume_lo};
}

double centroid_coordinate(Numerator n, Depth k) {
  const long double num = 2.0L * static_cast<long double>(n) + 1.0L;
  return static_cast<double>(num / (2.0L * static_cast<long double>(kPow3[k])));
}

void centroid(std::span<const Numerator> numerators, std::span<const Depth> depths,
              std::span<double> out) {
  for (std::size_t i = 0; i < depths.size(); ++i) {
    out[i] = centroid_coordinate(numerators[i], depths[i]);
  }
}

double lower_bound(Numerator n, Depth k) {
  return static_cast<double>(static_cast<long double>(n) / static_cast<long double>(kPow3[k]));
}

double upper_bound(Numerator n, Depth k) {
  return static_cast<double>((static_cast<long double>(n) + 1.0L) /
                             static_cast<long double>(kPow3[k]));
}

void original_bounds(const DomainSpec& domain, std::span<const Numerator> numerators,
                     std::span<const Depth> depths, std::span<double> lo, std::span<double> hi) {
  for (std::size_t i = 0; i < depths.size(); ++i) {
    const double w = domain.width(i);
    const Numerator n = numerators[i];
    const Depth k = depths[i];
    lo[i] = n == 0 ? domain.lower[i] : domain.lower[i] + w * lower_bound(n, k);
    hi[i] = n + 1 == kPow3[k] ? domain.upper[i] : domain.lower[i] + w * upper_bound(n, k);
  }
}

Numerator quantize(double p) {
  // p = m * 2^(e - 53) with integer m < 2^53, so m * 3^40 < 2^117 is exact in
  // 128 bits and the floor is a right shift.
  if (!(p > 0.0)) return 0;
  const Numerator last = kPow3[kMaxDepth] - 1;
  if (p >= 1.0) return last;
  int e = 0;
  const double f = std::frexp(p, &e);
  const auto m = static_cast<unsigned __int128>(std::ldexp(f, 53));
  const unsigned __int128 prod = m * static_cast<unsigned __int128>(kPow3[kMaxDepth]);
  const int shift = 53 - e;
  if (shift >= 128) return 0;
  const auto q = static_cast<Numerator>(prod >> shift);
  return std::min(q, last);
}

bool box_contains(std::span<const Numerator> numerators, std::span<const Depth> depths,
                  std::span<const Numerator> quantized) {
  for (std::size_t i = 0; i < depths.size(); ++i) {
    if (!cell_contains(numerators[i], depths[i], quantized[i])) return false;
  }
  return true;
}

bool boxes_disjoint(const TernaryBox& a, const TernaryBox& b) {
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const int k = std::max(a.depths[i], b.depths[i]);
    const Numerator alo = a.numerators[i] * kPow3[k - a.depths[i]];
    const Numerator ahi = (a.numerators[i] + 1) * kPow3[k - a.depths[i]];
    const Numerator blo = b.numerators[i] * kPow3[k - b.depths[i]];
    const Numerator bhi = (b.numerators[i] + 1) * kPow3[k - b.depths[i]];
    if (ahi <= blo || bhi <= alo) return true;
  }
  return false;
}

bool volumes_sum_to_one(std::span<const int> depth_sums) {
  if (depth_sums.empty()) return false;
  const int top = *std::max_element(depth_sums.begin(), depth_sums.end());
  std::vector<unsigned __int128> count(static_cast<std::size_t>(top) + 1, 0);
  for (int s : depth_sums) {
    if (s < 0) return false;
    ++count[static_cast<std::size_t>(s)];
  }
  // Carry 3 boxes of volume 3^-s into one of volume 3^-(s-1).
  for (int s = top; s > 0; --s) {
    if (count[s] % 3 != 0) return false;
    count[s - 1] += count[s] / 3;
  }
  return count[0] == 1;
}

std::vector<TrisectChild> trisect_geometry(const TernaryBox& box,
                                           std::span<const int> ranked_dims) {
  const std::size_t dim = box.dim();
  if (ranked_dims.empty()) throw InvariantError("trisection needs at least one dimension");
  std::vector<bool> seen(dim, false);
  for (int d : ranked_dims) {
    if (d < 0 || static_cast<std::size_t>(d) >= dim || seen[d]) {
      throw InvariantError("trisection dimensions must be distinct and in range");
    }
    seen[d] = true;
    if (box.depths[d] >= kMaxDepth) {
      throw DepthLimitError("dimension " + std::to_string(d) + " reached the maximum depth of " +
                            std::to_string(kMaxDepth));
    }
  }

  std::vector<TrisectChild> children;
  children.reserve(2 * ranked_dims.size() + 1);
  TernaryBox middle = box;
  auto make_child = [&](TernaryBox b, bool is_center) {
    TrisectChild c{std::move(b), std::vector<double>(dim), is_center};
    centroid(c.box.numerators, c.box.depths, c.centroid);
    children.push_back(std::move(c));
  };
  for (int d : ranked_dims) {
    const Numerator n = middle.numerators[d] * 3;
    middle.depths[d] += 1;
    TernaryBox low = middle;
    low.numerators[d] = n;
    TernaryBox high = middle;
    high.numerators[d] = n + 2;
    middle.numerators[d] = n + 1;
    make_child(std::move(low), false);
    make_child(std::move(high), false);
  }
  make_child(std::move(middle), true);
  return children;
}

}  // namespace defer
