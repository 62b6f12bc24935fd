#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "defer/density.hpp"
#include "defer/ternary.hpp"

namespace defer {

/// log N(x | mean, cov) with the Cholesky factor computed once.
/// Throws ConfigError when cov is not positive definite.
class GaussianLogPdf {
 public:
  GaussianLogPdf(Eigen::VectorXd mean, const Eigen::MatrixXd& cov);

  std::size_t dim() const { return static_cast<std::size_t>(mean_.size()); }
  double operator()(std::span<const double> x) const;
  const Eigen::VectorXd& mean() const { return mean_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double log_norm_;
  mutable Eigen::VectorXd work_;
};

/// c * J + d * I.
Eigen::MatrixXd equicorrelated(std::size_t dim, double c, double d);

class GaussianDensity final : public DensityFunction {
 public:
  GaussianDensity(Eigen::VectorXd mean, const Eigen::MatrixXd& cov) : pdf_(std::move(mean), cov) {}
  std::size_t dim() const override { return pdf_.dim(); }
  void log_density(std::span<const double> points, std::span<double> out) override;

 private:
  GaussianLogPdf pdf_;
};

/// Multivariate Student's t with isotropic scale matrix scale^2 * I.
class StudentTDensity final : public DensityFunction {
 public:
  StudentTDensity(std::vector<double> mean, double scale, double dof);
  std::size_t dim() const override { return mean_.size(); }
  void log_density(std::span<const double> points, std::span<double> out) override;
  double log_pdf(std::span<const double> x) const;
  const std::vector<double>& mean() const { return mean_; }

 private:
  std::vector<double> mean_;
  double scale_;
  double dof_;
  double log_norm_;
};

/// max(2 + 5 N(x|mu, S_in) - 10 N(x|mu, S_out), 0) with mu = 0.5.
class CanoeDensity final : public DensityFunction {
 public:
  explicit CanoeDensity(std::size_t dim);
  std::size_t dim() const override { return inner_.dim(); }
  void log_density(std::span<const double> points, std::span<double> out) override;
  double log_pdf(std::span<const double> x) const;

 private:
  GaussianLogPdf inner_;
  GaussianLogPdf outer_;
};

/// 2.5 N(x|mu_a, S_a) + N(x|mu_b, S_b) in 4D.
class MixtureDensity final : public DensityFunction {
 public:
  MixtureDensity();
  std::size_t dim() const override { return 4; }
  void log_density(std::span<const double> points, std::span<double> out) override;
  double log_pdf(std::span<const double> x) const;

  static Eigen::MatrixXd cov_a();
  static Eigen::MatrixXd cov_b();
  static Eigen::VectorXd mean_a();
  static Eigen::VectorXd mean_b();

 private:
  GaussianLogPdf a_;
  GaussianLogPdf b_;
};

/// Adds a constant to every log density. Used to check scale invariance.
class ScaledDensity final : public DensityFunction {
 public:
  ScaledDensity(DensityFunction& inner, double log_factor) : inner_(inner), log_factor_(log_factor) {}
  std::size_t dim() const override { return inner_.dim(); }
  void log_density(std::span<const double> points, std::span<double> out) override;

 private:
  DensityFunction& inner_;
  double log_factor_;
};

/// Black box in a child process speaking the line protocol: handshake
/// "HELLO defer 1 <D>" / "OK", then one point per line in, one log density
/// per line out. The command runs under /bin/sh -c.
class ExternalDensity final : public DensityFunction {
 public:
  ExternalDensity(std::string command, std::size_t dim);
  ~ExternalDensity() override;
  ExternalDensity(const ExternalDensity&) = delete;
  ExternalDensity& operator=(const ExternalDensity&) = delete;

  std::size_t dim() const override { return dim_; }
  void log_density(std::span<const double> points, std::span<double> out) override;

 private:
  void write_all(const std::string& data);
  std::string read_line();
  void shutdown();

  std::string command_;
  std::size_t dim_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

/// Parses one reply line of the protocol. Accepts finite floats and "-inf";
/// anything else raises EvaluationError quoting the line.
double parse_log_density(std::string_view line);

/// Shortest round-trip text of a double ("-inf"/"inf" for infinities).
std::string format_double(double v);

struct TargetSpec {
  std::string name;  // uniform, gaussian, student_t, canoe, mog4, cigar, external
  std::size_t dim = 2;
  std::uint64_t seed = 0;        // draws the student_t means
  std::string external_command;  // external only
  std::optional<DomainSpec> domain;  // defaults to the unit cube
};

struct Target {
  std::unique_ptr<DensityFunction> density;
  DomainSpec domain;
  std::vector<double> means;  // student_t: the per-run means
};

/// Per-run Student's t means, U(0.2, 0.8) per dimension.
std::vector<double> student_t_means(std::size_t dim, std::uint64_t seed);

Target make_target(const TargetSpec& spec);

}  // namespace defer
