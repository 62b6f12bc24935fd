#pragma once

#include <cstddef>

#include "defer/density.hpp"
#include "defer/rng.hpp"
#include "defer/ternary.hpp"

namespace defer {

struct BaselineEstimate {
  double log_z;
  double entropy;  // NaN when no mass was seen
  std::size_t evaluations;
};

/// Midpoint rule on a regular grid with `per_dim` cells per dimension.
BaselineEstimate grid_estimate(DensityFunction& density, const DomainSpec& domain,
                               std::size_t per_dim);

/// Largest g with g^D <= budget.
std::size_t grid_points_per_dim(std::size_t budget, std::size_t dim);

/// Plain Monte Carlo with uniform proposals. Evidence is the mean density
/// times the volume; entropy is log Z minus the self-normalised average of
/// log f.
BaselineEstimate rejection_estimate(DensityFunction& density, const DomainSpec& domain,
                                    std::size_t n, Rng& rng);

}  // namespace defer
