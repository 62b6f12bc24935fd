#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "defer/engine.hpp"
#include "defer/queries.hpp"

namespace defer {

/// Writes `contents` to a sibling temp file, then renames it over `path`.
void atomic_write(const std::filesystem::path& path, const std::string& contents);

/// JSON Lines leaf dump in creation order: id, lo, hi, depths, log_f.
std::string format_partitions(const Approximation& approx);

/// Inverse of format_partitions. The domain, when not given, is taken as the
/// bounding box of the leaves. Throws FormatError on anything that does not
/// describe an exact tiling.
Approximation parse_partitions(std::istream& in, std::optional<DomainSpec> domain,
                               double log_offset);

/// timeline.csv. Without `timing` the time columns are written as 0.
std::string format_timeline(std::span<const TimelineRow> rows, bool timing);

/// Sample CSV with header x0..x{D-1}.
std::string format_samples(std::span<const double> points, std::size_t dim);

}  // namespace defer
