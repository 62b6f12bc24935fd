#include "defer/criteria.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "defer/error.hpp"

namespace defer {

void CriteriaConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be a positive finite number");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a positive finite number");
  if (!(phi > 1.0) || !std::isfinite(phi)) throw ConfigError("phi must be greater than 1");
  if (big_m == 0 || big_m < -1) throw ConfigError("big M must be positive");
  if (linear_points < 0) throw ConfigError("l must be non-negative");
  if (ball_points < -1) throw ConfigError("b must be non-negative");
}

std::size_t CriteriaConfig::resolved_big_m(std::size_t dim) const {
  return big_m < 0 ? std::min<std::size_t>(5, dim) : static_cast<std::size_t>(big_m);
}

std::size_t CriteriaConfig::resolved_ball_points(std::size_t dim) const {
  return ball_points < 0 ? dim : static_cast<std::size_t>(ball_points);
}

std::vector<HullMember> urqh(std::span<const HullPoint> candidates) {
  std::vector<HullMember> hull;
  if (candidates.empty()) return hull;

  // Collapse numerically equal abscissas to their max-ordinate point.
  std::vector<HullPoint> pts;
  pts.reserve(candidates.size());
  for (const HullPoint& c : candidates) {
    if (!pts.empty() && pts.back().x == c.x) {
      HullPoint& prev = pts.back();
      if (c.y > prev.y || (c.y == prev.y && c.node < prev.node)) prev = c;
      continue;
    }
    pts.push_back(c);
  }

  // Start at the highest ordinate; among equal ordinates the right-most one
  // dominates for every positive rate constant.
  std::size_t start = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    if (pts[i].y >= pts[start].y) start = i;
  }

  std::vector<HullPoint> chain;
  for (std::size_t i = start; i < pts.size(); ++i) {
    const HullPoint& c = pts[i];
    while (chain.size() >= 2) {
      const HullPoint& a = chain[chain.size() - 2];
      const HullPoint& b = chain.back();
      // b strictly below segment a-c: not on the upper hull.
      const double cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
      if (cross > 0.0) {
        chain.pop_back();
      } else {
        break;
      }
    }
    chain.push_back(c);
  }

  hull.reserve(chain.size());
  for (std::size_t i = 0; i < chain.size(); ++i) {
    double k = std::numeric_limits<double>::infinity();
    if (i + 1 < chain.size()) {
      k = (chain[i].y - chain[i + 1].y) / (chain[i + 1].x - chain[i].x);
    }
    hull.push_back(HullMember{chain[i], k});
  }
  return hull;
}

std::vector<NodeId> cr1_select(std::span<const HullMember> hull, double z_hat,
                               std::size_t leaf_count, double beta) {
  const double threshold = beta * z_hat / static_cast<double>(leaf_count + 1);
  std::vector<NodeId> out;
  for (const HullMember& m : hull) {
    if (std::isinf(m.k_upper) || m.point.y + m.k_upper * m.point.x >= threshold) {
      out.push_back(m.point.node);
    }
  }
  return out;
}

std::vector<NodeId> cr1_select(LeafIndex& index, const KeyTable& keys, double z_hat,
                               std::size_t leaf_count, double beta) {
  const auto candidates = index.hull_candidates(keys);
  const auto hull = urqh(candidates);
  return cr1_select(hull, z_hat, leaf_count, beta);
}

HighMassSet high_mass_set(std::span<const MassEntry> by_mass_desc, double z_hat,
                          std::size_t leaf_count, std::size_t m, double alpha) {
  HighMassSet h;
  const double threshold = alpha * z_hat / static_cast<double>(leaf_count + 1);
  const std::size_t n = std::min(m, by_mass_desc.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (by_mass_desc[i].mass >= threshold) h.members.push_back(by_mass_desc[i]);
  }
  if (h.members.size() <= 1) h.members.clear();
  return h;
}

namespace {

bool in_unit_cube(std::span<const double> p) {
  return std::all_of(p.begin(), p.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

void dedupe(PointSet& points) {
  const std::size_t dim = points.dim;
  const std::size_t n = points.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  auto row = [&](std::size_t i) { return points.coords.begin() + static_cast<std::ptrdiff_t>(i * dim); };
  auto less = [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(row(a), row(a) + dim, row(b), row(b) + dim);
  };
  auto equal = [&](std::size_t a, std::size_t b) { return std::equal(row(a), row(a) + dim, row(b)); };
  std::sort(order.begin(), order.end(), less);
  PointSet out{dim, {}};
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && equal(order[i], order[i - 1])) continue;
    out.push(points[order[i]]);
  }
  points = std::move(out);
}

}  // namespace

PointSet cr2_representers(const HighMassSet& high_mass, const Tree& tree, Rng& rng,
                          int linear_points) {
  const std::size_t dim = tree.dim();
  PointSet out{dim, {}};
  const std::size_t h = high_mass.size();
  if (h < 2) return out;

  std::vector<Eigen::VectorXd> centroids;
  for (const MassEntry& e : high_mass.members) {
    Eigen::VectorXd c(static_cast<Eigen::Index>(dim));
    tree.centroid(e.node, std::span<double>(c.data(), dim));
    centroids.push_back(std::move(c));
  }
  const Eigen::VectorXd cube_center = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim), 0.5);

  std::vector<double> point(dim);
  for (unsigned mask = 1; mask < (1u << h); ++mask) {
    const int s = std::popcount(mask);
    if (s < 2 || static_cast<std::size_t>(s - 1) > dim) continue;

    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < h; ++i) {
      if (mask & (1u << i)) members.push_back(i);
    }
    // Reference vertex: the member centroid closest to the cube center.
    std::size_t ref = members.front();
    double best = (centroids[ref] - cube_center).squaredNorm();
    for (std::size_t i : members) {
      const double d2 = (centroids[i] - cube_center).squaredNorm();
      if (d2 < best) {
        best = d2;
        ref = i;
      }
    }
    Eigen::MatrixXd edges(static_cast<Eigen::Index>(dim), s - 1);
    Eigen::Index col = 0;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    for (std::size_t i : members) {
      mean += centroids[i];
      if (i != ref) edges.col(col++) = centroids[i] - centroids[ref];
    }
    mean /= static_cast<double>(s);

    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(edges);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || !(sv(0) > 0.0) || sv(sv.size() - 1) < kDegeneracyTolerance * sv(0)) {
      continue;
    }

    out.push(std::span<const double>(mean.data(), dim));

    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(edges);
    const Eigen::MatrixXd basis =
        qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim), s - 1);
    for (int j = 0; j < linear_points; ++j) {
      Eigen::VectorXd u(static_cast<Eigen::Index>(dim));
      for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = rng.uniform();
      const Eigen::VectorXd r = centroids[ref] + basis * (basis.transpose() * (u - centroids[ref]));
      std::copy(r.data(), r.data() + dim, point.begin());
      if (in_unit_cube(point)) out.push(point);
    }
  }
  dedupe(out);
  return out;
}

PointSet cr3_representers(const HighMassSet& high_mass, const Tree& tree, Rng& rng, double phi,
                          std::size_t ball_points) {
  const std::size_t dim = tree.dim();
  PointSet out{dim, {}};
  if (high_mass.size() < 2) return out;
  std::vector<double> c(dim), z(dim), p(dim);
  for (const MassEntry& e : high_mass.members) {
    tree.centroid(e.node, c);
    const double radius = phi * volume_diameter(tree.depths(e.node)).diameter / 2.0;
    for (std::size_t j = 0; j < ball_points; ++j) {
      double norm2 = 0.0;
      do {
        norm2 = 0.0;
        for (double& v : z) {
          v = rng.normal();
          norm2 += v * v;
        }
      } while (!(norm2 > 0.0));
      const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(dim)) / std::sqrt(norm2);
      for (std::size_t i = 0; i < dim; ++i) p[i] = c[i] + r * z[i];
      if (in_unit_cube(p)) out.push(p);
    }
  }
  return out;
}

Selection select_to_divide(SelectionInputs in) {
  Selection sel;
  const auto candidates = in.index.hull_candidates(in.keys);
  sel.unique_keys = candidates.size();
  const auto hull = urqh(candidates);
  sel.nodes = cr1_select(hull, in.z_hat, in.tree.leaf_count(), in.config.beta);
  sel.from_cr1 = sel.nodes.size();

  if (!in.high_mass.empty()) {
    const PointSet linear = cr2_representers(in.high_mass, in.tree, in.cr2_rng, in.config.linear_points);
    const PointSet balls = cr3_representers(in.high_mass, in.tree, in.cr3_rng, in.config.phi,
                                            in.config.resolved_ball_points(in.tree.dim()));
    sel.cr2_points = linear.size();
    sel.cr3_points = balls.size();
    for (std::size_t i = 0; i < linear.size(); ++i) sel.nodes.push_back(in.tree.locate_normalized(linear[i]));
    for (std::size_t i = 0; i < balls.size(); ++i) sel.nodes.push_back(in.tree.locate_normalized(balls[i]));
  }
  std::sort(sel.nodes.begin(), sel.nodes.end());
  sel.nodes.erase(std::unique(sel.nodes.begin(), sel.nodes.end()), sel.nodes.end());
  return sel;
}

}  // namespace defer
