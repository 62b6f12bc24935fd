#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace defer {

/// Counter-based generator: output i of a stream is a bijective mix of
/// (key, i), so streams keyed by (seed, purpose, ...) are independent and
/// reproducible without sharing state. All derived variates are computed
/// in-house so results do not depend on the standard library vendor.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {});

  /// Child stream; does not advance this generator.
  Rng split(std::uint64_t tag) const;

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in (0, 1].
  double uniform_open_closed() { return 1.0 - uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  Rng() = default;

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t mix64(std::uint64_t z);

}  // namespace defer
