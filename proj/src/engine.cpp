#include "defer/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "defer/error.hpp"

namespace defer {
namespace {

constexpr double kLogGrid = 0x1.0p20;
// Masses are exp(log_f - shift); rebase before exp() can overflow.
constexpr double kRebaseMargin = 600.0;
constexpr double kZTolerance = 1e-9;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_raw(double v, std::span<const double> point) {
  if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
    std::string msg = "density returned ";
    msg += std::isnan(v) ? "NaN" : "+inf";
    msg += " at (";
    for (std::size_t i = 0; i < point.size(); ++i) {
      if (i) msg += ", ";
      msg += std::to_string(point[i]);
    }
    msg += ")";
    throw EvaluationError(msg);
  }
}

double evaluate_root(DensityFunction& density, const DomainSpec& domain) {
  domain.validate();
  if (density.dim() != domain.dim()) {
    throw ConfigError("density dimension " + std::to_string(density.dim()) +
                      " does not match domain dimension " + std::to_string(domain.dim()));
  }
  std::vector<double> center(domain.dim());
  for (std::size_t i = 0; i < domain.dim(); ++i) center[i] = domain.lower[i] + 0.5 * domain.width(i);
  double raw = 0.0;
  density.log_density(center, std::span<double>(&raw, 1));
  check_raw(raw, center);
  return raw;
}

}  // namespace

double relative_log_density(double raw, double log_offset) {
  if (raw == -std::numeric_limits<double>::infinity()) return raw;
  // + 0.0 folds a rounded -0 into +0 so dumps never print "-0".
  return std::nearbyint((raw + log_offset) * kLogGrid) / kLogGrid + 0.0;
}

void EngineConfig::validate() const {
  if (budget < 1) throw ConfigError("budget must be at least 1");
  if (!(checkpoint_growth > 0.0)) throw ConfigError("checkpoint growth must be positive");
  criteria.validate();
}

Engine::Engine(DensityFunction& density, DomainSpec domain, EngineConfig config)
    : Engine(density, domain, std::move(config), evaluate_root(density, domain)) {}

Engine::Engine(DensityFunction& density, DomainSpec domain, EngineConfig config, double root_raw)
    : density_(density),
      config_(std::move(config)),
      tree_(Tree::create_root(std::move(domain),
                              std::isfinite(root_raw) ? 0.0 : root_raw)),
      started_(Clock::now()) {
  config_.validate();
  std::sort(config_.checkpoints.begin(), config_.checkpoints.end());
  if (std::isfinite(root_raw)) log_offset_ = -root_raw;
  add_leaf(Tree::root());
  checkpoint(true);
}

MassTerms Engine::compute_mass(KeyId key, double log_f) const {
  return mass_terms(keys_.volume(key), keys_.volume_lo(key), std::exp(log_f - shift_));
}

void Engine::add_leaf(NodeId node) {
  if (mass_.size() <= node) {
    mass_.resize(std::size_t{node} + 1, 0.0);
    mass_lo_.resize(std::size_t{node} + 1, 0.0);
    key_.resize(std::size_t{node} + 1, 0);
  }
  const KeyId key = keys_.intern(tree_.depths(node));
  const MassTerms m = compute_mass(key, tree_.node(node).log_f);
  key_[node] = key;
  mass_[node] = m.hi;
  mass_lo_[node] = m.lo;
  index_.insert(node, key, m.hi);
  aggregates_.include(node, m.hi, m.lo);
}

void Engine::rebase(double new_shift) {
  shift_ = new_shift;
  index_.clear();
  aggregates_.clear();
  for (NodeId id : tree_.leaves()) {
    const MassTerms m = compute_mass(key_[id], tree_.node(id).log_f);
    mass_[id] = m.hi;
    mass_lo_[id] = m.lo;
    index_.insert(id, key_[id], m.hi);
    aggregates_.include(id, m.hi, m.lo);
  }
}

void Engine::evaluate(std::span<const double> normalized_points, std::span<double> out) {
  const std::size_t dim = tree_.dim();
  std::vector<double> original(normalized_points.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    tree_.domain().to_original(normalized_points.subspan(i * dim, dim),
                               std::span<double>(original).subspan(i * dim, dim));
  }
  const auto t0 = Clock::now();
  density_.log_density(original, out);
  eval_seconds_ += seconds_since(t0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    check_raw(out[i], std::span<const double>(original).subspan(i * dim, dim));
  }
}

std::vector<NodeId> Engine::divide(std::span<const NodeId> nodes) {
  const std::size_t dim = tree_.dim();

  // Dimensions of maximal side length (minimal depth) for each division.
  std::vector<std::vector<int>> dims(nodes.size());
  std::vector<std::size_t> probe_start(nodes.size());
  std::vector<double> probes;
  std::vector<double> c(dim);
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    const NodeId id = nodes[j];
    if (id >= tree_.node_count() || !tree_.is_leaf(id)) {
      throw InvariantError("node " + std::to_string(id) + " is not a live leaf");
    }
    const auto depth = tree_.depths(id);
    const auto num = tree_.numerators(id);
    const Depth min_depth = *std::min_element(depth.begin(), depth.end());
    if (min_depth >= kMaxDepth) {
      throw DepthLimitError("partition " + std::to_string(id) + " reached the maximum depth");
    }
    tree_.centroid(id, c);
    probe_start[j] = probes.size() / dim;
    for (std::size_t d = 0; d < dim; ++d) {
      if (depth[d] != min_depth) continue;
      dims[j].push_back(static_cast<int>(d));
      const auto k = static_cast<Depth>(depth[d] + 1);
      for (Numerator n : {3 * num[d], 3 * num[d] + 2}) {
        const std::size_t at = probes.size();
        probes.insert(probes.end(), c.begin(), c.end());
        probes[at + d] = centroid_coordinate(n, k);
      }
    }
  }

  std::vector<double> raw(probes.size() / dim);
  evaluate(probes, raw);

  if (!log_offset_) {
    for (double v : raw) {
      if (std::isfinite(v)) {
        log_offset_ = -v;
        break;
      }
    }
  }
  std::vector<double> rel(raw.size());
  double highest = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    rel[i] = relative_log_density(raw[i], log_offset());
    highest = std::max(highest, rel[i]);
  }
  if (highest > shift_ + kRebaseMargin) rebase(highest);

  std::vector<NodeId> created;
  std::vector<NewChild> children;
  std::vector<int> ranked;
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    const NodeId parent = nodes[j];
    const std::size_t m = dims[j].size();
    const double* values = rel.data() + probe_start[j];

    // Rank by the best value seen along each dimension, highest first.
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::max(values[2 * a], values[2 * a + 1]) > std::max(values[2 * b], values[2 * b + 1]);
    });
    ranked.clear();
    for (std::size_t i : order) ranked.push_back(dims[j][i]);

    auto geometry = trisect_geometry(tree_.box(parent), ranked);
    children.clear();
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t slot = order[i];
      children.push_back(NewChild{std::move(geometry[2 * i].box), values[2 * slot]});
      children.push_back(NewChild{std::move(geometry[2 * i + 1].box), values[2 * slot + 1]});
    }
    children.push_back(NewChild{std::move(geometry.back().box), tree_.node(parent).log_f});

    index_.remove(parent);
    aggregates_.exclude(parent, mass_[parent], mass_lo_[parent]);
    const NodeId first = tree_.divide(parent, children, 2 * m);
    for (NodeId id = first; id < first + children.size(); ++id) {
      add_leaf(id);
      created.push_back(id);
    }
  }

  if (aggregates_.z_hat() < 0.0) {
    const ExtendedSum direct = direct_sum();
    if (direct.value() < 0.0) throw InvariantError("mass total became negative");
    aggregates_.reset_sum(direct);
    ++resyncs_;
  }
  return created;
}

HighMassSet Engine::high_mass() const {
  const std::size_t m = config_.criteria.resolved_big_m(tree_.dim());
  const auto top = aggregates_.top(m);
  return high_mass_set(top, aggregates_.z_hat(), tree_.leaf_count(), m, config_.criteria.alpha);
}

Selection Engine::select_to_divide() {
  const HighMassSet h = high_mass();
  return defer::select_to_divide(SelectionInputs{
      tree_, index_, keys_, aggregates_.z_hat(), h, config_.criteria,
      Rng(config_.seed, {iteration_, 2}), Rng(config_.seed, {iteration_, 3})});
}

void Engine::step() {
  const auto t0 = Clock::now();
  const double eval_before = eval_seconds_;
  const Selection sel = select_to_divide();
  if (sel.nodes.empty()) throw InvariantError("no partition selected for division");
  divide(sel.nodes);
  ++iteration_;
  const double eval = eval_seconds_ - eval_before;
  const double decision = std::max(0.0, seconds_since(t0) - eval);
  decision_seconds_ += decision;
  steps_.push_back(StepRecord{tree_.leaf_count(), sel.nodes.size(), sel.unique_keys, decision, eval});
  checkpoint(false);
}

void Engine::run() {
  while (!finished()) step();
  if (timeline_.empty() || timeline_.back().evals != tree_.eval_count()) checkpoint(true);
}

void Engine::checkpoint(bool force) {
  const std::size_t evals = tree_.eval_count();
  const std::size_t last = timeline_.empty() ? 0 : timeline_.back().evals;
  bool due = force || evals >= next_checkpoint_;
  for (std::size_t c : config_.checkpoints) {
    if (c > last && c <= evals) due = true;
  }
  if (!due) return;

  const ExtendedSum direct_z = direct_sum();
  const double direct = direct_z.value();
  const double running = aggregates_.z_hat();
  const double scale = std::max(std::abs(direct), std::numeric_limits<double>::min());
  if (std::abs(running - direct) / scale > kZTolerance) {
    aggregates_.reset_sum(direct_z);
    ++resyncs_;
  }

  timeline_.push_back(TimelineRow{evals, log_evidence(), entropy(), decision_seconds_,
                                  seconds_since(started_)});
  const auto growth = static_cast<std::size_t>(std::ceil(static_cast<double>(evals) * config_.checkpoint_growth));
  next_checkpoint_ = evals + std::max<std::size_t>(1, growth);
}

ExtendedSum Engine::direct_sum() const {
  ExtendedSum z;
  for (NodeId id = 0; id < tree_.node_count(); ++id) {
    if (!tree_.is_leaf(id)) continue;
    z.add(mass_[id]);
    z.add(mass_lo_[id]);
  }
  return z;
}

double Engine::recompute_z_hat() const { return direct_sum().value(); }

double Engine::log_evidence() const {
  const double z = aggregates_.z_hat();
  if (!(z > 0.0)) return -std::numeric_limits<double>::infinity();
  return std::log(z) + shift_ - log_offset() + tree_.domain().log_volume();
}

double Engine::entropy() const {
  // H = log(Vol) + log Z - sum_i (m_i / Z) (log_f_i - shift)
  const double z = aggregates_.z_hat();
  if (!(z > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  ExtendedSum expect;
  for (NodeId id = 0; id < tree_.node_count(); ++id) {
    if (!tree_.is_leaf(id) || mass_[id] == 0.0) continue;
    expect.add(mass_[id] / z * (tree_.node(id).log_f - shift_));
  }
  return tree_.domain().log_volume() + std::log(z) - expect.value();
}

}  // namespace defer
