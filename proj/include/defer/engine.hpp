#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "defer/aggregates.hpp"
#include "defer/criteria.hpp"
#include "defer/density.hpp"
#include "defer/leaf_index.hpp"
#include "defer/tree.hpp"

namespace defer {

struct EngineConfig {
  std::size_t budget = 1000;  // stop once the leaf count reaches this
  std::uint64_t seed = 0;
  CriteriaConfig criteria;
  /// Geometric checkpoint cadence: a row is recorded whenever the evaluation
  /// count has grown by this fraction since the previous one.
  double checkpoint_growth = 0.1;
  /// Additional evaluation counts at which a checkpoint is forced.
  std::vector<std::size_t> checkpoints;

  void validate() const;
};

struct TimelineRow {
  std::size_t evals;
  double log_z;
  double entropy;
  double decision_seconds;  // cumulative
  double wall_seconds;
};

struct StepRecord {
  std::size_t leaf_count;  // after the step
  std::size_t divided;
  std::size_t unique_keys;  // U before the step
  double decision_seconds;
  double eval_seconds;
};

/// Log densities are stored relative to the first finite observation and
/// rounded to a 2^-20 grid. Rounding makes the relative values, and thus
/// every decision, identical when the black box is rescaled by a constant.
double relative_log_density(double raw, double log_offset);

/// The sequential decision loop. Owns the tree, the hull index and the
/// aggregates, and keeps them in sync across divisions.
class Engine {
 public:
  /// Evaluates the density once at the domain center.
  Engine(DensityFunction& density, DomainSpec domain, EngineConfig config);

  /// One iteration: select, divide everything selected, update.
  void step();
  /// Step until leaf_count() >= budget.
  void run();
  bool finished() const { return tree_.leaf_count() >= config_.budget; }

  /// Divide the given live leaves, evaluating all new centroids in a single
  /// batch. Returns the new child ids in creation order.
  std::vector<NodeId> divide(std::span<const NodeId> nodes);
  std::vector<NodeId> divide(NodeId node) { return divide(std::span<const NodeId>(&node, 1)); }

  Selection select_to_divide();
  HighMassSet high_mass() const;

  const Tree& tree() const { return tree_; }
  const KeyTable& keys() const { return keys_; }
  LeafIndex& index() { return index_; }
  const Aggregates& aggregates() const { return aggregates_; }
  const EngineConfig& config() const { return config_; }
  std::size_t iteration() const { return iteration_; }

  /// Current mass of a leaf, V * exp(log_f - mass_shift()).
  double mass(NodeId node) const { return mass_[node]; }
  KeyId key(NodeId node) const { return key_[node]; }
  double z_hat() const { return aggregates_.z_hat(); }
  double mass_shift() const { return shift_; }
  /// log of the raw density minus the stored relative value. Zero until a
  /// finite density has been observed.
  double log_offset() const { return log_offset_.value_or(0.0); }
  bool has_offset() const { return log_offset_.has_value(); }

  /// log Z in original units.
  double log_evidence() const;
  /// Entropy (nats, original units) of the current piecewise-constant
  /// approximation.
  double entropy() const;
  /// Direct double-double sum of leaf masses, independent of the running sum.
  double recompute_z_hat() const;

  const std::vector<TimelineRow>& timeline() const { return timeline_; }
  const std::vector<StepRecord>& steps() const { return steps_; }
  double total_decision_seconds() const { return decision_seconds_; }
  double total_eval_seconds() const { return eval_seconds_; }
  std::size_t resyncs() const { return resyncs_; }

 private:
  using Clock = std::chrono::steady_clock;

  Engine(DensityFunction& density, DomainSpec domain, EngineConfig config, double root_raw);

  void evaluate(std::span<const double> normalized_points, std::span<double> out);
  MassTerms compute_mass(KeyId key, double log_f) const;
  ExtendedSum direct_sum() const;
  void add_leaf(NodeId node);
  void rebase(double new_shift);
  void checkpoint(bool force);

  DensityFunction& density_;
  EngineConfig config_;
  Tree tree_;
  KeyTable keys_;
  LeafIndex index_;
  Aggregates aggregates_;
  std::vector<double> mass_;
  std::vector<double> mass_lo_;
  std::vector<KeyId> key_;
  std::optional<double> log_offset_;
  double shift_ = 0.0;

  std::size_t iteration_ = 0;
  std::vector<TimelineRow> timeline_;
  std::vector<StepRecord> steps_;
  std::size_t next_checkpoint_ = 0;
  std::size_t resyncs_ = 0;
  double decision_seconds_ = 0.0;
  double eval_seconds_ = 0.0;
  Clock::time_point started_;
};

}  // namespace defer
