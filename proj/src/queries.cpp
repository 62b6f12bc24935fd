#include "defer/queries.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "defer/engine.hpp"
#include "defer/error.hpp"
#include "defer/extended_sum.hpp"

namespace defer {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string cell_key(std::span<const Depth> depths, std::span<const Numerator> numerators) {
  std::string key(depths.begin(), depths.end());
  key.append(reinterpret_cast<const char*>(numerators.data()), numerators.size_bytes());
  return key;
}

void check_dims(std::span<const int> dims, std::size_t dim, const char* what) {
  std::vector<bool> seen(dim, false);
  for (int d : dims) {
    if (d < 0 || static_cast<std::size_t>(d) >= dim || seen[d]) {
      throw ConfigError(std::string(what) + " must be distinct dimension indices below " +
                        std::to_string(dim));
    }
    seen[d] = true;
  }
}

/// Quantized normalized coordinate of x along one dimension.
Numerator quantize_on(const DomainSpec& domain, int d, double x) {
  if (!(x >= domain.lower[d] && x <= domain.upper[d])) {
    throw OutOfDomainError("coordinate " + std::to_string(x) + " outside the bounds of dimension " +
                           std::to_string(d));
  }
  return quantize(std::clamp((x - domain.lower[d]) / domain.width(d), 0.0, 1.0));
}

}  // namespace

Approximation::Approximation(DomainSpec domain, double log_offset, std::vector<Leaf> leaves,
                             std::vector<Numerator> numerators, std::vector<Depth> depths)
    : domain_(std::move(domain)),
      log_offset_(log_offset),
      leaves_(std::move(leaves)),
      numerators_(std::move(numerators)),
      depths_(std::move(depths)) {
  domain_.validate();
  const std::size_t d = dim();
  if (numerators_.size() != leaves_.size() * d || depths_.size() != leaves_.size() * d) {
    throw FormatError("leaf geometry does not match the leaf count");
  }
  if (leaves_.empty()) throw FormatError("approximation has no leaves");

  double shift = kNegInf;
  for (const Leaf& l : leaves_) {
    if (std::isnan(l.log_f) || l.log_f == std::numeric_limits<double>::infinity()) {
      throw FormatError("leaf log density must be finite or -inf");
    }
    shift = std::max(shift, l.log_f);
  }
  if (shift == kNegInf) shift = 0.0;

  mass_.resize(leaves_.size());
  mass_lo_.resize(leaves_.size());
  ExtendedSum total;
  std::vector<int> depth_sums(leaves_.size());
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    const auto k = this->depths(i);
    const auto n = this->numerators(i);
    int s = 0;
    for (std::size_t j = 0; j < d; ++j) {
      if (k[j] > kMaxDepth || n[j] >= pow3(k[j])) throw FormatError("leaf box out of range");
      s += k[j];
    }
    depth_sums[i] = s;
    const VolumeDiameter vd = volume_diameter(k);
    const MassTerms m = mass_terms(vd.volume, vd.volume_lo, std::exp(leaves_[i].log_f - shift));
    mass_[i] = m.hi;
    mass_lo_[i] = m.lo;
    total.add(m.hi);
    total.add(m.lo);

    std::vector<Depth> pattern(k.begin(), k.end());
    if (std::find(depth_patterns_.begin(), depth_patterns_.end(), pattern) == depth_patterns_.end()) {
      depth_patterns_.push_back(std::move(pattern));
    }
    if (!cell_lookup_.emplace(cell_key(k, n), i).second) throw FormatError("duplicate leaf box");
  }
  if (!volumes_sum_to_one(depth_sums)) throw FormatError("leaves do not tile the domain");
  total_mass_ = total.value();
  shift_ = shift;
  log_scale_ = shift - log_offset_ + domain_.log_volume();
}

Approximation Approximation::from_tree(const Tree& tree, double log_offset) {
  std::vector<Leaf> leaves;
  std::vector<Numerator> numerators;
  std::vector<Depth> depths;
  for (NodeId id : tree.leaves()) {
    leaves.push_back(Leaf{id, tree.node(id).log_f});
    const auto n = tree.numerators(id);
    const auto k = tree.depths(id);
    numerators.insert(numerators.end(), n.begin(), n.end());
    depths.insert(depths.end(), k.begin(), k.end());
  }
  return Approximation(tree.domain(), log_offset, std::move(leaves), std::move(numerators),
                       std::move(depths));
}

Approximation Approximation::from_engine(const Engine& engine) {
  return from_tree(engine.tree(), engine.log_offset());
}

void Approximation::bounds(std::size_t i, std::span<double> lo, std::span<double> hi) const {
  original_bounds(domain_, numerators(i), depths(i), lo, hi);
}

void Approximation::centroid(std::size_t i, std::span<double> out) const {
  defer::centroid(numerators(i), depths(i), out);
  for (std::size_t j = 0; j < dim(); ++j) out[j] = domain_.lower[j] + out[j] * domain_.width(j);
}

double Approximation::log_volume(std::size_t i) const {
  const auto k = depths(i);
  double s = domain_.log_volume();
  for (Depth kj : k) s -= static_cast<double>(kj) * std::log(3.0);
  return s;
}

std::size_t Approximation::find_quantized(std::span<const Numerator> q) const {
  std::vector<Numerator> n(dim());
  for (const auto& pattern : depth_patterns_) {
    for (std::size_t j = 0; j < dim(); ++j) n[j] = q[j] / pow3(kMaxDepth - pattern[j]);
    const auto it = cell_lookup_.find(cell_key(pattern, n));
    if (it != cell_lookup_.end()) return it->second;
  }
  throw InvariantError("no leaf contains the point");
}

std::size_t Approximation::locate(std::span<const double> x) const {
  if (x.size() != dim()) throw OutOfDomainError("point has the wrong dimension");
  std::vector<Numerator> q(dim());
  for (std::size_t j = 0; j < dim(); ++j) q[j] = quantize_on(domain_, static_cast<int>(j), x[j]);
  return find_quantized(q);
}

Evidence evidence(const Approximation& approx) {
  const double total = approx.total_mass();
  if (!(total > 0.0)) return Evidence{0.0, kNegInf, true};
  const double log_z = std::log(total) + approx.log_scale();
  return Evidence{std::exp(log_z), log_z, false};
}

double density(const Approximation& approx, std::span<const double> x) {
  const std::size_t i = approx.locate(x);
  if (!(approx.total_mass() > 0.0)) throw Error("approximation has zero mass");
  // f_i / Z in normalized units, then divided by the domain volume.
  const double w = std::exp(approx.leaf(i).log_f - approx.shift());
  return w / approx.total_mass() / approx.domain().volume();
}

AliasSampler::AliasSampler(std::span<const double> weights) {
  const std::size_t n = weights.size();
  if (n == 0) throw Error("cannot sample from an empty approximation");
  ExtendedSum total;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error("alias weights must be finite and non-negative");
    total.add(w);
  }
  if (!(total.value() > 0.0)) throw Error("cannot sample: all leaves have zero mass");

  prob_.assign(n, 0.0);
  alias_.assign(n, 0);
  std::vector<double> scaled(n);
  std::vector<std::uint32_t> small, large;
  const double scale = static_cast<double>(n) / total.value();
  for (std::size_t i = 0; i < n; ++i) {
    scaled[i] = weights[i] * scale;
    (scaled[i] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(i));
  }
  while (!small.empty() && !large.empty()) {
    const std::uint32_t l = small.back();
    small.pop_back();
    const std::uint32_t g = large.back();
    large.pop_back();
    prob_[l] = scaled[l];
    alias_[l] = g;
    scaled[g] = (scaled[g] + scaled[l]) - 1.0;
    (scaled[g] < 1.0 ? small : large).push_back(g);
  }
  // Leftovers are 1 up to rounding.
  for (std::uint32_t g : large) {
    prob_[g] = 1.0;
    alias_[g] = g;
  }
  for (std::uint32_t l : small) {
    prob_[l] = 1.0;
    alias_[l] = l;
  }
}

std::size_t AliasSampler::draw(Rng& rng) const {
  const std::size_t slot = rng.below(prob_.size());
  return rng.uniform() < prob_[slot] ? slot : alias_[slot];
}

std::vector<double> AliasSampler::outcome_probabilities() const {
  const std::size_t n = prob_.size();
  std::vector<ExtendedSum> acc(n);
  for (std::size_t s = 0; s < n; ++s) {
    acc[s].add(prob_[s] / static_cast<double>(n));
    acc[alias_[s]].add((1.0 - prob_[s]) / static_cast<double>(n));
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = acc[i].value();
  return out;
}

std::vector<double> sample(const AliasSampler& sampler, const Approximation& approx, Rng& rng,
                           std::size_t n) {
  const std::size_t dim = approx.dim();
  std::vector<double> out(n * dim);
  std::vector<double> lo(dim), hi(dim);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t leaf = sampler.draw(rng);
    approx.bounds(leaf, lo, hi);
    for (std::size_t j = 0; j < dim; ++j) {
      out[s * dim + j] = std::min(lo[j] + rng.uniform() * (hi[j] - lo[j]), hi[j]);
    }
  }
  return out;
}

double piecewise_entropy(std::span<const double> probabilities, std::span<const double> volumes) {
  ExtendedSum h;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double p = probabilities[i];
    if (p > 0.0) h.subtract(p * std::log(p / volumes[i]));
  }
  return h.value();
}

double entropy(const Approximation& approx) {
  const double total = approx.total_mass();
  if (!(total > 0.0)) throw Error("entropy undefined: approximation has zero mass");
  // With p_i = f_i / Z: H = log Vol + log Z_rel - sum_i (m_i / Z)(log f_i - shift).
  // A constant density gives exactly log Vol.
  ExtendedSum expect;
  for (std::size_t i = 0; i < approx.size(); ++i) {
    if (approx.mass(i) == 0.0) continue;
    expect.add(approx.mass(i) / total * (approx.leaf(i).log_f - approx.shift()));
  }
  return approx.domain().log_volume() + std::log(total) - expect.value();
}

double expectation(const Approximation& approx,
                   const std::function<double(std::span<const double>)>& g) {
  const double total = approx.total_mass();
  if (!(total > 0.0)) throw Error("expectation undefined: approximation has zero mass");
  std::vector<double> c(approx.dim());
  ExtendedSum acc;
  for (std::size_t i = 0; i < approx.size(); ++i) {
    if (approx.mass(i) == 0.0) continue;
    approx.centroid(i, c);
    const double v = g(c);
    if (std::isnan(v)) throw EvaluationError("expectation integrand returned NaN");
    acc.add(approx.mass(i) / total * v);
  }
  return acc.value();
}

SubregionMass subregion_mass(const Approximation& approx, std::span<const double> lo,
                             std::span<const double> hi) {
  const std::size_t dim = approx.dim();
  if (lo.size() != dim || hi.size() != dim) throw ConfigError("region has the wrong dimension");
  for (std::size_t j = 0; j < dim; ++j) {
    if (std::isnan(lo[j]) || std::isnan(hi[j]) || lo[j] > hi[j]) {
      throw ConfigError("region lower bound exceeds upper bound");
    }
  }
  std::vector<double> blo(dim), bhi(dim);
  ExtendedSum acc;
  for (std::size_t i = 0; i < approx.size(); ++i) {
    approx.bounds(i, blo, bhi);
    double fraction = 1.0;
    for (std::size_t j = 0; j < dim && fraction > 0.0; ++j) {
      const double overlap = std::min(bhi[j], hi[j]) - std::max(blo[j], lo[j]);
      fraction *= overlap > 0.0 ? overlap / (bhi[j] - blo[j]) : 0.0;
    }
    if (fraction > 0.0) {
      acc.add(approx.mass(i) * fraction);
      acc.add(approx.mass_lo(i) * fraction);
    }
  }
  const double rel = acc.value();
  if (!(rel > 0.0) || !(approx.total_mass() > 0.0)) return SubregionMass{0.0, 0.0};
  return SubregionMass{std::exp(std::log(rel) + approx.log_scale()), rel / approx.total_mass()};
}

double marginal_density(const Approximation& approx, std::span<const int> kept_dims,
                        std::span<const double> at) {
  check_dims(kept_dims, approx.dim(), "kept dims");
  if (kept_dims.empty() || at.size() != kept_dims.size()) {
    throw ConfigError("marginal needs one coordinate per kept dimension");
  }
  const double total = approx.total_mass();
  if (!(total > 0.0)) throw Error("marginal undefined: approximation has zero mass");
  const DomainSpec& domain = approx.domain();
  std::vector<Numerator> q(kept_dims.size());
  double log_kept_width = 0.0;
  for (std::size_t a = 0; a < kept_dims.size(); ++a) {
    q[a] = quantize_on(domain, kept_dims[a], at[a]);
    log_kept_width += std::log(domain.width(kept_dims[a]));
  }
  ExtendedSum acc;
  for (std::size_t i = 0; i < approx.size(); ++i) {
    const auto n = approx.numerators(i);
    const auto k = approx.depths(i);
    bool hit = true;
    int kept_depth = 0;
    for (std::size_t a = 0; a < kept_dims.size() && hit; ++a) {
      const int d = kept_dims[a];
      hit = cell_contains(n[d], k[d], q[a]);
      kept_depth += k[d];
    }
    if (!hit || approx.mass(i) == 0.0) continue;
    // p_i / (leaf volume on the kept dims)
    const double log_kept_volume = log_kept_width - kept_depth * std::log(3.0);
    acc.add(std::exp(std::log(approx.mass(i) / total) - log_kept_volume));
  }
  return acc.value();
}

ConditionalSlice conditional_slice(const Approximation& approx, std::span<const int> fixed_dims,
                                   std::span<const double> values) {
  const std::size_t dim = approx.dim();
  check_dims(fixed_dims, dim, "fixed dims");
  if (fixed_dims.empty() || fixed_dims.size() >= dim || values.size() != fixed_dims.size()) {
    throw ConfigError("conditional needs 1..D-1 fixed dimensions, one value each");
  }
  const DomainSpec& domain = approx.domain();
  std::vector<Numerator> q(fixed_dims.size());
  for (std::size_t a = 0; a < fixed_dims.size(); ++a) q[a] = quantize_on(domain, fixed_dims[a], values[a]);

  ConditionalSlice slice;
  std::vector<bool> fixed(dim, false);
  for (int d : fixed_dims) fixed[d] = true;
  for (std::size_t d = 0; d < dim; ++d) {
    if (!fixed[d]) slice.free_dims.push_back(static_cast<int>(d));
  }

  std::vector<double> lo(dim), hi(dim);
  std::vector<double> log_weight;
  double top = kNegInf;
  for (std::size_t i = 0; i < approx.size(); ++i) {
    const auto n = approx.numerators(i);
    const auto k = approx.depths(i);
    bool hit = true;
    for (std::size_t a = 0; a < fixed_dims.size() && hit; ++a) {
      hit = cell_contains(n[fixed_dims[a]], k[fixed_dims[a]], q[a]);
    }
    if (!hit) continue;
    approx.bounds(i, lo, hi);
    ConditionalCell cell{i, {}, {}, {}, {}, 0.0};
    double log_free_volume = 0.0;
    for (int d : slice.free_dims) {
      cell.numerators.push_back(n[d]);
      cell.depths.push_back(k[d]);
      cell.lo.push_back(lo[d]);
      cell.hi.push_back(hi[d]);
      log_free_volume += std::log(domain.width(d)) - k[d] * std::log(3.0);
    }
    const double lf = approx.leaf(i).log_f;
    log_weight.push_back(lf + log_free_volume);
    top = std::max(top, lf);
    slice.cells.push_back(std::move(cell));
  }
  if (top == kNegInf) throw Error("conditional slice has zero mass");

  ExtendedSum norm;
  for (double lw : log_weight) norm.add(std::exp(lw - top));
  const double log_norm = std::log(norm.value()) + top;
  for (std::size_t c = 0; c < slice.cells.size(); ++c) {
    slice.cells[c].density = std::exp(approx.leaf(slice.cells[c].leaf).log_f - log_norm);
  }
  return slice;
}

}  // namespace defer
