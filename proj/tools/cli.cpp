#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "defer/baselines.hpp"
#include "defer/densities.hpp"
#include "defer/engine.hpp"
#include "defer/error.hpp"
#include "defer/io.hpp"
#include "defer/queries.hpp"

namespace defer::cli {
namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

constexpr const char* kVersion = "1.0.0";

struct TargetOptions {
  std::string target = "uniform";
  std::size_t dims = 2;
  std::string external_cmd;
  std::vector<double> lo, hi;
};

struct RunOptions {
  TargetOptions target;
  EngineConfig engine;
  std::string out = "out";
  bool no_timing = false;
};

void add_target_options(CLI::App* app, TargetOptions& t) {
  app->add_option("--target", t.target, "uniform|gaussian|student_t|canoe|mog4|cigar|external")
      ->capture_default_str();
  app->add_option("--dims", t.dims, "Dimensionality")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--external-cmd", t.external_cmd, "Shell command of an external density");
  app->add_option("--lo", t.lo, "Domain lower bounds (default 0)");
  app->add_option("--hi", t.hi, "Domain upper bounds (default 1)");
}

void add_criteria_options(CLI::App* app, CriteriaConfig& c) {
  app->add_option("--beta", c.beta, "CR1 mass threshold factor")->capture_default_str();
  app->add_option("--alpha", c.alpha, "High-mass outlier factor")->capture_default_str();
  app->add_option("--phi", c.phi, "CR3 ball diameter factor")->capture_default_str();
  app->add_option("--big-m", c.big_m, "Maximum high-mass set size (default min(5, D))");
  app->add_option("--l", c.linear_points, "Random CR2 points per subspace")->capture_default_str();
  app->add_option("--b", c.ball_points, "CR3 points per high-mass partition (default D)");
}

/// Flat `key = value` file; values are whitespace separated. Keys are the
/// long flag names of the subcommand, without dashes.
std::vector<std::pair<std::string, std::vector<std::string>>> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    std::istringstream key_in(line.substr(0, eq)), value_in(line.substr(eq + 1));
    std::string key, extra, token;
    key_in >> key;
    if (key.empty() || (key_in >> extra)) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": bad key");
    }
    std::vector<std::string> values;
    while (value_in >> token) values.push_back(token);
    if (values.empty()) throw ConfigError(path + ":" + std::to_string(line_no) + ": missing value");
    out.emplace_back(key, std::move(values));
  }
  return out;
}

/// Fills options that were not given on the command line from the config
/// file. Unknown keys are errors.
void apply_config(CLI::App* app, const std::string& path) {
  for (auto& [key, values] : read_config(path)) {
    std::string name = key;
    for (char& c : name) {
      if (c == '_') c = '-';
    }
    CLI::Option* opt = name == "config" ? nullptr : app->get_option_no_throw("--" + name);
    if (!opt) throw ConfigError("unknown config key '" + key + "'");
    if (opt->count() > 0) continue;
    try {
      opt->add_result(values);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
}

std::optional<DomainSpec> domain_from(const TargetOptions& t) {
  if (t.lo.empty() && t.hi.empty()) return std::nullopt;
  DomainSpec d{t.lo, t.hi};
  if (d.lower.empty()) d.lower.assign(t.dims, 0.0);
  if (d.upper.empty()) d.upper.assign(t.dims, 1.0);
  if (d.lower.size() != t.dims || d.upper.size() != t.dims) {
    throw ConfigError("--lo/--hi need one value per dimension");
  }
  d.validate();
  return d;
}

TargetSpec target_spec(const TargetOptions& t, std::uint64_t seed) {
  TargetSpec spec;
  spec.name = t.target;
  spec.dim = t.dims;
  spec.seed = seed;
  spec.external_command = t.external_cmd;
  spec.domain = domain_from(t);
  if (spec.name == "external" && spec.external_command.empty()) {
    throw ConfigError("--target external needs --external-cmd");
  }
  if (spec.name != "external" && !spec.external_command.empty()) {
    throw ConfigError("--external-cmd requires --target external");
  }
  return spec;
}

ordered_json number_or_string(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v < 0 ? "-inf" : "inf";
}

ordered_json criteria_json(const CriteriaConfig& c, std::size_t dim) {
  return {{"beta", c.beta},
          {"alpha", c.alpha},
          {"phi", c.phi},
          {"big_m", c.resolved_big_m(dim)},
          {"l", c.linear_points},
          {"b", c.resolved_ball_points(dim)}};
}

int cmd_run(const RunOptions& o, std::ostream& out) {
  const TargetSpec spec = target_spec(o.target, o.engine.seed);
  Target target = make_target(spec);
  Engine engine(*target.density, target.domain, o.engine);
  engine.run();
  const Approximation approx = Approximation::from_engine(engine);

  fs::create_directories(o.out);
  const fs::path dir(o.out);
  atomic_write(dir / "partitions.jsonl", format_partitions(approx));
  atomic_write(dir / "timeline.csv", format_timeline(engine.timeline(), !o.no_timing));

  const Evidence ev = evidence(approx);
  const double evals = static_cast<double>(engine.tree().eval_count());
  ordered_json meta;
  meta["version"] = kVersion;
  meta["target"] = spec.name;
  meta["dims"] = spec.dim;
  if (!target.means.empty()) meta["means"] = target.means;
  if (!spec.external_command.empty()) meta["external_cmd"] = spec.external_command;
  meta["domain"] = {{"lower", target.domain.lower}, {"upper", target.domain.upper}};
  meta["seed"] = o.engine.seed;
  meta["budget"] = o.engine.budget;
  meta["criteria"] = criteria_json(o.engine.criteria, spec.dim);
  meta["checkpoints"] = o.engine.checkpoints;
  meta["log_offset"] = engine.log_offset();
  meta["evals"] = engine.tree().eval_count();
  meta["leaves"] = engine.tree().leaf_count();
  meta["iterations"] = engine.iteration();
  meta["log_z"] = number_or_string(ev.log_z);
  meta["all_zero"] = ev.all_zero;
  meta["entropy"] = ev.all_zero ? ordered_json("nan") : number_or_string(entropy(approx));
  meta["unique_keys"] = engine.index().unique_keys();
  const double decision = o.no_timing ? 0.0 : engine.total_decision_seconds();
  meta["decision_seconds"] = {{"total", decision}, {"per_eval", decision / evals}};
  meta["eval_seconds"] = o.no_timing ? 0.0 : engine.total_eval_seconds();
  atomic_write(dir / "meta.json", meta.dump(2) + "\n");

  out << ordered_json{{"log_z", number_or_string(ev.log_z)},
                      {"evals", engine.tree().eval_count()},
                      {"unique_keys", engine.index().unique_keys()},
                      {"out", o.out}}
             .dump()
      << "\n";
  return kOk;
}

/// Reads a partition dump plus the meta.json written next to it, if any.
Approximation load_tree(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read tree file " + path);
  std::optional<DomainSpec> domain;
  double log_offset = 0.0;
  const fs::path meta_path = fs::path(path).parent_path() / "meta.json";
  if (fs::exists(meta_path)) {
    std::ifstream mf(meta_path);
    try {
      const auto meta = nlohmann::json::parse(mf);
      domain = DomainSpec{meta.at("domain").at("lower").get<std::vector<double>>(),
                          meta.at("domain").at("upper").get<std::vector<double>>()};
      log_offset = meta.at("log_offset").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(meta_path.string() + ": " + e.what());
    }
  }
  return parse_partitions(in, domain, log_offset);
}

struct SampleOptions {
  std::string tree;
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  std::string out = "samples.csv";
};

int cmd_sample(const SampleOptions& o, std::ostream& out) {
  const Approximation approx = load_tree(o.tree);
  const AliasSampler sampler = AliasSampler::build(approx);
  Rng rng(o.seed, {0x73616d706c65ULL});
  const auto points = sample(sampler, approx, rng, o.n);
  const fs::path path(o.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  atomic_write(path, format_samples(points, approx.dim()));
  out << ordered_json{{"samples", o.n}, {"out", o.out}}.dump() << "\n";
  return kOk;
}

struct QueryOptions {
  std::string kind;
  std::string tree;
  std::vector<double> at, lo, hi;
  std::vector<int> dims;
};

int cmd_query(const QueryOptions& o, std::ostream& out) {
  const Approximation approx = load_tree(o.tree);
  ordered_json r;
  r["query"] = o.kind;
  ordered_json args = ordered_json::object();
  if (!o.at.empty()) args["at"] = o.at;
  if (!o.lo.empty()) args["lo"] = o.lo;
  if (!o.hi.empty()) args["hi"] = o.hi;
  if (!o.dims.empty()) args["dims"] = o.dims;
  r["args"] = args;

  if (o.kind == "evidence") {
    const Evidence ev = evidence(approx);
    r["value"] = ev.z;
    r["log_z"] = number_or_string(ev.log_z);
    r["all_zero"] = ev.all_zero;
  } else if (o.kind == "entropy") {
    r["value"] = entropy(approx);
  } else if (o.kind == "density") {
    if (o.at.size() != approx.dim()) throw ConfigError("density needs --at with D coordinates");
    r["value"] = density(approx, o.at);
  } else if (o.kind == "subregion") {
    if (o.lo.size() != approx.dim() || o.hi.size() != approx.dim()) {
      throw ConfigError("subregion needs --lo and --hi with D coordinates");
    }
    const SubregionMass m = subregion_mass(approx, o.lo, o.hi);
    r["value"] = m.probability;
    r["mass"] = m.mass;
    r["probability"] = m.probability;
  } else if (o.kind == "marginal") {
    r["value"] = marginal_density(approx, o.dims, o.at);
  } else if (o.kind == "conditional") {
    const ConditionalSlice slice = conditional_slice(approx, o.dims, o.at);
    ordered_json cells = ordered_json::array();
    for (const ConditionalCell& c : slice.cells) {
      cells.push_back({{"lo", c.lo}, {"hi", c.hi}, {"depths", c.depths}, {"density", c.density}});
    }
    r["free_dims"] = slice.free_dims;
    r["values"] = cells;
  } else {
    throw ConfigError("unknown query '" + o.kind + "'");
  }
  out << r.dump() << "\n";
  return kOk;
}

struct BenchOptions {
  TargetOptions target;
  CriteriaConfig criteria;
  std::vector<std::size_t> budgets{1000, 10000};
  std::size_t seeds = 5;
  std::uint64_t first_seed = 0;
  std::vector<std::string> methods{"defer", "rejection_uniform", "grid"};
  std::string oracle;
  std::string out = "bench.csv";
  bool no_timing = false;
};

struct Oracle {
  double log_z;
  std::optional<double> entropy;
};

Oracle parse_and_compute_oracle(const std::string& oracle, Target& target) {
  const auto colon = oracle.find(':');
  const std::string kind = oracle.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : oracle.substr(colon + 1);
  try {
    if (kind == "analytic" && !arg.empty()) {
      std::size_t used = 0;
      const double v = std::stod(arg, &used);
      if (used == arg.size()) return Oracle{v, std::nullopt};
    } else if (kind == "grid" && !arg.empty()) {
      std::size_t used = 0;
      const long n = std::stol(arg, &used);
      if (used == arg.size() && n > 0) {
        // The oracle grid lives on the normalized cube, mapped to the domain.
        const BaselineEstimate g = grid_estimate(*target.density, target.domain, static_cast<std::size_t>(n));
        return Oracle{g.log_z, std::isnan(g.entropy) ? std::nullopt : std::optional<double>(g.entropy)};
      }
    }
  } catch (const std::logic_error&) {
  }
  throw ConfigError("--oracle must be analytic:<log Z> or grid:<points per dim>");
}

int cmd_bench(const BenchOptions& o, std::ostream& out) {
  if (o.oracle.empty()) throw ConfigError("bench needs --oracle analytic:<log Z> or grid:<points per dim>");
  for (const auto& m : o.methods) {
    if (m != "defer" && m != "rejection_uniform" && m != "grid") {
      throw ConfigError("unknown bench method '" + m + "'");
    }
  }
  if (o.budgets.empty() || o.seeds == 0) throw ConfigError("bench needs budgets and seeds");
  o.criteria.validate();

  std::string csv = "method,budget,seed,log_z_error,entropy_error,decision_seconds_per_eval\n";
  auto fmt = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  // Targets with seeded parameters get a fresh oracle per seed.
  const bool seeded_target = o.target.target == "student_t";
  std::optional<Oracle> shared;
  for (std::size_t s = 0; s < o.seeds; ++s) {
    const std::uint64_t seed = o.first_seed + s;
    Target target = make_target(target_spec(o.target, seed));
    if (!shared || seeded_target) shared = parse_and_compute_oracle(o.oracle, target);
    const Oracle oracle = *shared;
    auto entropy_error = [&](double h) {
      return oracle.entropy && std::isfinite(h) ? std::abs(h - *oracle.entropy)
                                                : std::numeric_limits<double>::quiet_NaN();
    };
    for (const auto& method : o.methods) {
      for (std::size_t budget : o.budgets) {
        double log_z = 0.0, h = 0.0, per_eval = 0.0;
        if (method == "defer") {
          EngineConfig config;
          config.budget = budget;
          config.seed = seed;
          config.criteria = o.criteria;
          Engine engine(*target.density, target.domain, config);
          engine.run();
          log_z = engine.log_evidence();
          h = engine.z_hat() > 0.0 ? engine.entropy() : std::numeric_limits<double>::quiet_NaN();
          if (!o.no_timing) {
            per_eval = engine.total_decision_seconds() / static_cast<double>(engine.tree().eval_count());
          }
        } else if (method == "rejection_uniform") {
          Rng rng(seed, {0x72656a656374ULL, budget});
          const BaselineEstimate e = rejection_estimate(*target.density, target.domain, budget, rng);
          log_z = e.log_z;
          h = e.entropy;
        } else {
          const BaselineEstimate e = grid_estimate(
              *target.density, target.domain, grid_points_per_dim(budget, target.domain.dim()));
          log_z = e.log_z;
          h = e.entropy;
        }
        const double err = std::isfinite(log_z) ? std::abs(log_z - oracle.log_z)
                                                : std::numeric_limits<double>::infinity();
        csv += method + "," + std::to_string(budget) + "," + std::to_string(seed) + "," +
               format_double(err) + "," + fmt(entropy_error(h)) + "," + format_double(per_eval) + "\n";
      }
    }
  }
  const fs::path path(o.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  atomic_write(path, csv);
  out << ordered_json{{"rows", o.seeds * o.methods.size() * o.budgets.size()}, {"out", o.out}}.dump()
      << "\n";
  return kOk;
}

struct ServeOptions {
  TargetOptions target;
  std::uint64_t seed = 0;
};

/// The external line protocol, answered by a built-in target.
int cmd_serve(const ServeOptions& o, std::istream& in, std::ostream& out) {
  if (o.target.target == "external") throw ConfigError("serve needs a built-in target");
  Target target = make_target(target_spec(o.target, o.seed));
  const std::size_t dim = target.domain.dim();
  std::string line;
  if (!std::getline(in, line) || line != "HELLO defer 1 " + std::to_string(dim)) {
    throw ConfigError("bad handshake: \"" + line + "\"");
  }
  out << "OK" << std::endl;
  std::vector<double> x(dim);
  double lf = 0.0;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    for (double& v : x) {
      std::string tok;
      row >> tok;
      v = std::strtod(tok.c_str(), nullptr);
    }
    target.density->log_density(x, std::span<double>(&lf, 1));
    out << format_double(lf) << std::endl;
  }
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Piecewise-constant approximation of black-box densities"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  RunOptions run;
  std::string run_config;
  auto* run_cmd = app.add_subcommand("run", "Build an approximation and write it to --out");
  add_target_options(run_cmd, run.target);
  add_criteria_options(run_cmd, run.engine.criteria);
  run_cmd->add_option("--budget", run.engine.budget, "Stop at this many evaluations")->capture_default_str();
  run_cmd->add_option("--seed", run.engine.seed, "Random seed")->capture_default_str();
  run_cmd->add_option("--out", run.out, "Output directory")->capture_default_str();
  run_cmd->add_option("--checkpoints", run.engine.checkpoints, "Extra timeline rows at these evals")
      ->delimiter(',');
  run_cmd->add_flag("--no-timing", run.no_timing, "Write 0 for wall-clock columns");
  run_cmd->add_option("--config", run_config, "key = value file; flags take precedence");

  SampleOptions smp;
  auto* sample_cmd = app.add_subcommand("sample", "Draw points from a saved approximation");
  sample_cmd->add_option("--tree", smp.tree, "partitions.jsonl")->required();
  sample_cmd->add_option("--n", smp.n, "Number of points")->capture_default_str();
  sample_cmd->add_option("--seed", smp.seed, "Random seed")->capture_default_str();
  sample_cmd->add_option("--out", smp.out, "Output CSV")->capture_default_str();

  QueryOptions qry;
  auto* query_cmd = app.add_subcommand("query", "Answer a query on a saved approximation");
  query_cmd->add_option("kind", qry.kind, "density|evidence|entropy|subregion|marginal|conditional")
      ->required();
  query_cmd->add_option("--tree", qry.tree, "partitions.jsonl")->required();
  query_cmd->add_option("--at", qry.at, "Point (density) or values on --dims");
  query_cmd->add_option("--lo", qry.lo, "Region lower bounds");
  query_cmd->add_option("--hi", qry.hi, "Region upper bounds");
  query_cmd->add_option("--dims", qry.dims, "Kept (marginal) or fixed (conditional) dims");

  BenchOptions bench;
  std::string bench_config;
  auto* bench_cmd = app.add_subcommand("bench", "Compare against uniform-rejection and grid baselines");
  add_target_options(bench_cmd, bench.target);
  add_criteria_options(bench_cmd, bench.criteria);
  bench_cmd->add_option("--budgets", bench.budgets, "Comma-separated budgets")->delimiter(',');
  bench_cmd->add_option("--seeds", bench.seeds, "Number of seeds")->capture_default_str();
  bench_cmd->add_option("--seed", bench.first_seed, "First seed")->capture_default_str();
  bench_cmd->add_option("--methods", bench.methods, "defer,rejection_uniform,grid")->delimiter(',');
  bench_cmd->add_option("--oracle", bench.oracle, "analytic:<log Z> or grid:<points per dim>");
  bench_cmd->add_option("--out", bench.out, "Output CSV")->capture_default_str();
  bench_cmd->add_flag("--no-timing", bench.no_timing, "Write 0 for timing columns");
  bench_cmd->add_option("--config", bench_config, "key = value file; flags take precedence");

  ServeOptions srv;
  auto* serve_cmd = app.add_subcommand("serve", "Answer the external density protocol on stdio");
  add_target_options(serve_cmd, srv.target);
  serve_cmd->add_option("--seed", srv.seed, "Seed of seeded targets")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion& e) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    for (auto* sub : app.get_subcommands()) {
      if (sub->get_help_ptr() && sub->get_help_ptr()->count()) {
        out << sub->help();
        return kOk;
      }
    }
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (run_cmd->parsed()) {
      if (!run_config.empty()) apply_config(run_cmd, run_config);
      run.engine.validate();
      return cmd_run(run, out);
    }
    if (sample_cmd->parsed()) return cmd_sample(smp, out);
    if (query_cmd->parsed()) return cmd_query(qry, out);
    if (bench_cmd->parsed()) {
      if (!bench_config.empty()) apply_config(bench_cmd, bench_config);
      return cmd_bench(bench, out);
    }
    if (serve_cmd->parsed()) return cmd_serve(srv, std::cin, std::cout);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const OutOfDomainError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kEvaluation;
  }
  return kUsage;
}

}  // namespace defer::cli
