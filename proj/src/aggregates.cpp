#include "defer/aggregates.hpp"

#include "defer/error.hpp"

namespace defer {

void Aggregates::include(NodeId node, double mass, double mass_lo) {
  if (!by_mass_.insert(MassEntry{mass, node}).second) {
    throw InvariantError("leaf included in the aggregates twice");
  }
  z_.add(mass);
  z_.add(mass_lo);
}

void Aggregates::exclude(NodeId node, double mass, double mass_lo) {
  if (by_mass_.erase(MassEntry{mass, node}) != 1) {
    throw InvariantError("excluded leaf was never included");
  }
  z_.subtract(mass);
  z_.subtract(mass_lo);
}

void Aggregates::update(std::span<const MassEntry> included, std::span<const MassEntry> excluded) {
  for (const MassEntry& e : included) include(e.node, e.mass);
  for (const MassEntry& e : excluded) exclude(e.node, e.mass);
}

std::vector<MassEntry> Aggregates::top(std::size_t m) const {
  std::vector<MassEntry> out;
  out.reserve(m);
  for (auto it = by_mass_.begin(); it != by_mass_.end() && out.size() < m; ++it) out.push_back(*it);
  return out;
}

void Aggregates::clear() {
  z_ = ExtendedSum{};
  by_mass_.clear();
}

}  // namespace defer
