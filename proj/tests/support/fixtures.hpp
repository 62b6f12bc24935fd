#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "defer/density.hpp"
#include "defer/engine.hpp"
#include "defer/rng.hpp"

namespace fixture {

inline std::unique_ptr<defer::DensityFunction> constant(std::size_t dim, double log_f = 0.0) {
  return std::make_unique<defer::PointwiseDensity>(dim, [log_f](std::span<const double>) { return log_f; });
}

/// Sum of a few narrow Gaussian bumps with random centres and widths.
inline std::unique_ptr<defer::DensityFunction> random_bumps(std::size_t dim, defer::Rng& rng) {
  const std::size_t k = 1 + rng.below(3);
  std::vector<double> centres(k * dim), widths(k), weights(k);
  for (auto& c : centres) c = 0.1 + 0.8 * rng.uniform();
  for (auto& w : widths) w = 0.02 + 0.2 * rng.uniform();
  for (auto& w : weights) w = 0.5 + rng.uniform();
  return std::make_unique<defer::PointwiseDensity>(dim, [=](std::span<const double> x) {
    double f = 0.0;
    for (std::size_t b = 0; b < k; ++b) {
      double q = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double r = (x[j] - centres[b * dim + j]) / widths[b];
        q += r * r;
      }
      f += weights[b] * std::exp(-0.5 * q);
    }
    return std::log(f);
  });
}

/// Grows an engine to roughly `leaves` leaves, mixing regular steps with
/// divisions of randomly picked leaves so trees are not all alike.
inline void grow(defer::Engine& engine, defer::Rng& rng, std::size_t leaves) {
  while (engine.tree().leaf_count() < leaves) {
    if (rng.uniform() < 0.5) {
      engine.step();
    } else {
      const auto live = engine.tree().leaves();
      engine.divide(live[rng.below(live.size())]);
    }
  }
}

}  // namespace fixture
