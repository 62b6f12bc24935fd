#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace defer {

/// Black-box unnormalised density, queried in log space. Entries of a batch
/// are independent, so implementations may evaluate them concurrently.
/// -inf encodes zero density; NaN is never a valid answer.
class DensityFunction {
 public:
  virtual ~DensityFunction() = default;

  virtual std::size_t dim() const = 0;

  /// `points` holds out.size() rows of dim() coordinates in original units.
  virtual void log_density(std::span<const double> points, std::span<double> out) = 0;
};

/// Adapts a per-point callable.
class PointwiseDensity final : public DensityFunction {
 public:
  using Fn = std::function<double(std::span<const double>)>;

  PointwiseDensity(std::size_t dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}

  std::size_t dim() const override { return dim_; }
  void log_density(std::span<const double> points, std::span<double> out) override {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn_(points.subspan(i * dim_, dim_));
  }

 private:
  std::size_t dim_;
  Fn fn_;
};

}  // namespace defer
