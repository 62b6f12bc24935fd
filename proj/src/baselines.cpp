#include "defer/baselines.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "defer/error.hpp"
#include "defer/extended_sum.hpp"

namespace defer {
namespace {

constexpr std::size_t kBatch = 1 << 16;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Streaming log-sum-exp of log f and of f log f, rescaled whenever a new
/// maximum shows up.
class LogAccumulator {
 public:
  void add(double lf) {
    if (std::isnan(lf)) throw EvaluationError("density returned NaN");
    if (lf == -std::numeric_limits<double>::infinity()) return;
    if (lf > top_) {
      const double r = std::exp(top_ - lf);
      scale(r);
      top_ = lf;
    }
    const double w = std::exp(lf - top_);
    sum_.add(w);
    weighted_.add(w * lf);
  }
  bool empty() const { return top_ == -std::numeric_limits<double>::infinity(); }
  double log_sum() const { return std::log(sum_.value()) + top_; }
  double mean_log_f() const { return weighted_.value() / sum_.value(); }

 private:
  void scale(double r) {
    if (empty()) return;
    const double s = sum_.value() * r, w = weighted_.value() * r;
    sum_ = ExtendedSum();
    weighted_ = ExtendedSum();
    sum_.add(s);
    weighted_.add(w);
  }

  double top_ = -std::numeric_limits<double>::infinity();
  ExtendedSum sum_;
  ExtendedSum weighted_;
};

}  // namespace

std::size_t grid_points_per_dim(std::size_t budget, std::size_t dim) {
  std::size_t g = static_cast<std::size_t>(std::floor(std::pow(static_cast<double>(budget), 1.0 / dim)));
  auto fits = [&](std::size_t v) {
    double p = 1.0;
    for (std::size_t i = 0; i < dim; ++i) p *= static_cast<double>(v);
    return p <= static_cast<double>(budget);
  };
  while (g > 1 && !fits(g)) --g;
  while (fits(g + 1)) ++g;
  return std::max<std::size_t>(g, 1);
}

BaselineEstimate grid_estimate(DensityFunction& density, const DomainSpec& domain,
                               std::size_t per_dim) {
  const std::size_t dim = domain.dim();
  if (per_dim == 0) throw ConfigError("grid needs at least one point per dimension");
  std::size_t total = 1;
  for (std::size_t i = 0; i < dim; ++i) total *= per_dim;

  LogAccumulator acc;
  std::vector<std::size_t> idx(dim, 0);
  std::vector<double> points, out;
  points.reserve(kBatch * dim);
  auto flush = [&] {
    out.resize(points.size() / dim);
    density.log_density(points, out);
    for (double lf : out) acc.add(lf);
    points.clear();
  };
  for (std::size_t n = 0; n < total; ++n) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double u = (static_cast<double>(idx[j]) + 0.5) / static_cast<double>(per_dim);
      points.push_back(domain.lower[j] + u * domain.width(j));
    }
    for (std::size_t j = 0; j < dim && ++idx[j] == per_dim; ++j) idx[j] = 0;
    if (points.size() == kBatch * dim) flush();
  }
  if (!points.empty()) flush();

  if (acc.empty()) return {-std::numeric_limits<double>::infinity(), kNaN, total};
  const double log_cell = domain.log_volume() - dim * std::log(static_cast<double>(per_dim));
  const double log_z = acc.log_sum() + log_cell;
  // p_i = f_i / Z on each cell, so -sum p_i V log p_i = log Z - E[log f].
  return {log_z, log_z - acc.mean_log_f(), total};
}

BaselineEstimate rejection_estimate(DensityFunction& density, const DomainSpec& domain,
                                    std::size_t n, Rng& rng) {
  const std::size_t dim = domain.dim();
  if (n == 0) throw ConfigError("rejection baseline needs at least one sample");
  LogAccumulator acc;
  std::vector<double> points, out;
  for (std::size_t done = 0; done < n;) {
    const std::size_t m = std::min(kBatch, n - done);
    points.resize(m * dim);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < dim; ++j) {
        points[i * dim + j] = domain.lower[j] + rng.uniform() * domain.width(j);
      }
    }
    out.resize(m);
    density.log_density(points, out);
    for (double lf : out) acc.add(lf);
    done += m;
  }
  if (acc.empty()) return {-std::numeric_limits<double>::infinity(), kNaN, n};
  const double log_z = acc.log_sum() - std::log(static_cast<double>(n)) + domain.log_volume();
  return {log_z, log_z - acc.mean_log_f(), n};
}

}  // namespace defer
