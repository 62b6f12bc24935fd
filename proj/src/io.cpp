#include "defer/io.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>

#include <json.hpp>

#include "defer/densities.hpp"
#include "defer/error.hpp"

namespace defer {
namespace {

using nlohmann::json;

void append_list(std::string& out, std::span<const double> v) {
  out.push_back('[');
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out.push_back(',');
    out += format_double(v[i]);
  }
  out.push_back(']');
}

double json_number(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "inf") return std::numeric_limits<double>::infinity();
  }
  throw FormatError("expected a number, got " + j.dump());
}

std::vector<double> json_numbers(const json& j, std::size_t dim) {
  if (!j.is_array() || (dim && j.size() != dim)) throw FormatError("bad coordinate list " + j.dump());
  std::vector<double> out;
  for (const auto& e : j) out.push_back(json_number(e));
  return out;
}

}  // namespace

void atomic_write(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + tmp.string());
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    f.flush();
    if (!f) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string format_partitions(const Approximation& approx) {
  const std::size_t dim = approx.dim();
  std::vector<double> lo(dim), hi(dim);
  std::string out;
  for (std::size_t i = 0; i < approx.size(); ++i) {
    approx.bounds(i, lo, hi);
    out += "{\"id\":" + std::to_string(approx.leaf(i).id) + ",\"lo\":";
    append_list(out, lo);
    out += ",\"hi\":";
    append_list(out, hi);
    out += ",\"depths\":[";
    const auto k = approx.depths(i);
    for (std::size_t j = 0; j < dim; ++j) {
      if (j) out.push_back(',');
      out += std::to_string(k[j]);
    }
    out += "],\"log_f\":";
    const double lf = approx.leaf(i).log_f;
    out += std::isinf(lf) ? "\"" + format_double(lf) + "\"" : format_double(lf);
    out += "}\n";
  }
  return out;
}

Approximation parse_partitions(std::istream& in, std::optional<DomainSpec> domain,
                               double log_offset) {
  struct Row {
    std::uint64_t id;
    std::vector<double> lo, hi;
    std::vector<int> depths;
    double log_f;
  };
  std::vector<Row> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = domain ? domain->dim() : 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Row r;
      r.id = j.at("id").get<std::uint64_t>();
      r.lo = json_numbers(j.at("lo"), dim);
      dim = r.lo.size();
      r.hi = json_numbers(j.at("hi"), dim);
      r.depths = j.at("depths").get<std::vector<int>>();
      if (r.depths.size() != dim) throw FormatError("depth list has the wrong length");
      r.log_f = json_number(j.at("log_f"));
      rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (rows.empty() || dim == 0) throw FormatError("partition file has no leaves");

  if (!domain) {
    DomainSpec d{std::vector<double>(dim, std::numeric_limits<double>::infinity()),
                 std::vector<double>(dim, -std::numeric_limits<double>::infinity())};
    for (const Row& r : rows) {
      for (std::size_t j = 0; j < dim; ++j) {
        d.lower[j] = std::min(d.lower[j], r.lo[j]);
        d.upper[j] = std::max(d.upper[j], r.hi[j]);
      }
    }
    domain = d;
  }
  try {
    domain->validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("partition bounds: ") + e.what());
  }

  std::vector<Approximation::Leaf> leaves;
  std::vector<Numerator> numerators;
  std::vector<Depth> depths;
  for (const Row& r : rows) {
    leaves.push_back({r.id, r.log_f});
    for (std::size_t j = 0; j < dim; ++j) {
      const int k = r.depths[j];
      if (k < 0 || k > kMaxDepth) throw FormatError("depth out of range");
      // Recover n from the cell midpoint; exact while 3^k stays well inside
      // double resolution, and the tiling check below catches anything else.
      const long double mid = (static_cast<long double>(r.lo[j]) + r.hi[j]) / 2 - domain->lower[j];
      const long double scaled = mid / domain->width(j) * static_cast<long double>(pow3(k)) - 0.5L;
      if (!(scaled > -0.5L && scaled < static_cast<long double>(pow3(k)) - 0.5L)) {
        throw FormatError("leaf lies outside the domain");
      }
      numerators.push_back(static_cast<Numerator>(std::llround(scaled)));
      depths.push_back(static_cast<Depth>(k));
    }
  }
  Approximation approx(*domain, log_offset, std::move(leaves), std::move(numerators),
                       std::move(depths));
  // The stored float bounds must agree with the recovered integer boxes.
  std::vector<double> lo(dim), hi(dim);
  for (std::size_t i = 0; i < approx.size(); ++i) {
    approx.bounds(i, lo, hi);
    for (std::size_t j = 0; j < dim; ++j) {
      const double tol = 1e-9 * domain->width(j);
      if (std::abs(lo[j] - rows[i].lo[j]) > tol || std::abs(hi[j] - rows[i].hi[j]) > tol) {
        throw FormatError("leaf " + std::to_string(rows[i].id) + " bounds are not ternary cells");
      }
    }
  }
  return approx;
}

std::string format_timeline(std::span<const TimelineRow> rows, bool timing) {
  std::string out = "evals,log_z,entropy,decision_seconds,wall_seconds\n";
  for (const TimelineRow& r : rows) {
    out += std::to_string(r.evals) + "," + format_double(r.log_z) + "," + format_double(r.entropy) +
           "," + (timing ? format_double(r.decision_seconds) : "0") + "," +
           (timing ? format_double(r.wall_seconds) : "0") + "\n";
  }
  return out;
}

std::string format_samples(std::span<const double> points, std::size_t dim) {
  std::string out;
  for (std::size_t j = 0; j < dim; ++j) out += (j ? ",x" : "x") + std::to_string(j);
  out.push_back('\n');
  for (std::size_t i = 0; i * dim < points.size(); ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      if (j) out.push_back(',');
      out += format_double(points[i * dim + j]);
    }
    out.push_back('\n');
  }
  return out;
}

}  // namespace defer
