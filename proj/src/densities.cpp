#include "defer/densities.hpp"

#include <fcntl.h>
#include <csignal>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include "defer/error.hpp"
#include "defer/rng.hpp"

extern char** environ;

namespace defer {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::size_t kPipeChunk = 256;  // points in flight per round trip

void check_batch(std::size_t dim, std::span<const double> points, std::span<double> out) {
  if (points.size() != out.size() * dim) throw EvaluationError("batch shape mismatch");
}

}  // namespace

GaussianLogPdf::GaussianLogPdf(Eigen::VectorXd mean, const Eigen::MatrixXd& cov)
    : mean_(std::move(mean)), llt_(cov), work_(mean_.size()) {
  if (cov.rows() != mean_.size() || cov.cols() != mean_.size()) {
    throw ConfigError("covariance shape does not match the mean");
  }
  if (llt_.info() != Eigen::Success || !cov.isApprox(cov.transpose())) {
    throw ConfigError("covariance matrix is not positive definite");
  }
  const Eigen::VectorXd diag = llt_.matrixLLT().diagonal();
  for (Eigen::Index i = 0; i < diag.size(); ++i) {
    if (!(diag[i] > 0.0)) throw ConfigError("covariance matrix is not positive definite");
  }
  log_norm_ = -0.5 * static_cast<double>(mean_.size()) * std::log(2.0 * std::numbers::pi) -
              diag.array().log().sum();
}

double GaussianLogPdf::operator()(std::span<const double> x) const {
  for (Eigen::Index i = 0; i < mean_.size(); ++i) work_[i] = x[i] - mean_[i];
  llt_.matrixL().solveInPlace(work_);
  return log_norm_ - 0.5 * work_.squaredNorm();
}

Eigen::MatrixXd equicorrelated(std::size_t dim, double c, double d) {
  const auto n = static_cast<Eigen::Index>(dim);
  return Eigen::MatrixXd::Constant(n, n, c) + d * Eigen::MatrixXd::Identity(n, n);
}

void GaussianDensity::log_density(std::span<const double> points, std::span<double> out) {
  check_batch(dim(), points, out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pdf_(points.subspan(i * dim(), dim()));
}

StudentTDensity::StudentTDensity(std::vector<double> mean, double scale, double dof)
    : mean_(std::move(mean)), scale_(scale), dof_(dof) {
  if (mean_.empty() || !(scale > 0.0) || !(dof > 0.0)) {
    throw ConfigError("student_t needs a mean, scale > 0 and dof > 0");
  }
  const double d = static_cast<double>(mean_.size());
  log_norm_ = std::lgamma(0.5 * (dof + d)) - std::lgamma(0.5 * dof) -
              0.5 * d * std::log(dof * std::numbers::pi) - d * std::log(scale);
}

double StudentTDensity::log_pdf(std::span<const double> x) const {
  double sq = 0.0;
  for (std::size_t i = 0; i < mean_.size(); ++i) {
    const double z = (x[i] - mean_[i]) / scale_;
    sq += z * z;
  }
  const double d = static_cast<double>(mean_.size());
  return log_norm_ - 0.5 * (dof_ + d) * std::log1p(sq / dof_);
}

void StudentTDensity::log_density(std::span<const double> points, std::span<double> out) {
  check_batch(dim(), points, out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = log_pdf(points.subspan(i * dim(), dim()));
}

CanoeDensity::CanoeDensity(std::size_t dim)
    : inner_(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim), 0.5),
             0.01 * equicorrelated(dim, 0.95, 0.05)),
      outer_(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim), 0.5),
             0.02 * equicorrelated(dim, 0.60, 0.40)) {
  if (dim < 2) throw ConfigError("canoe needs at least two dimensions");
}

double CanoeDensity::log_pdf(std::span<const double> x) const {
  // v = 2 + 5 a - 10 b evaluated as e^s (2 e^-s + 5 e^(la-s) - 10 e^(lb-s)).
  const double la = std::log(5.0) + inner_(x);
  const double lb = std::log(10.0) + outer_(x);
  const double s = std::max({std::log(2.0), la, lb});
  const double v = 2.0 * std::exp(-s) + std::exp(la - s) - std::exp(lb - s);
  return v > 0.0 ? s + std::log(v) : kNegInf;
}

void CanoeDensity::log_density(std::span<const double> points, std::span<double> out) {
  check_batch(dim(), points, out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = log_pdf(points.subspan(i * dim(), dim()));
}

Eigen::VectorXd MixtureDensity::mean_a() {
  return (Eigen::VectorXd(4) << 0.6326, 0.7401, 0.7232, 0.2471).finished();
}

Eigen::VectorXd MixtureDensity::mean_b() {
  return (Eigen::VectorXd(4) << 0.5139, 0.4667, 0.3777, 0.7995).finished();
}

Eigen::MatrixXd MixtureDensity::cov_a() {
  Eigen::MatrixXd m(4, 4);
  m << 2.25, -1.0, 0, 0,
       -1.0, 2.25, 0, 0,
       0, 0, 2.25, 0,
       0, 0, 0, 2.25;
  return 0.01 * 0.01 * m;
}

Eigen::MatrixXd MixtureDensity::cov_b() {
  const double s = 2.25 * 2.25;
  Eigen::MatrixXd m(4, 4);
  m << s, -2.25, 1.0, -1.0,
       -2.25, s, 0, 0,
       1.0, 0, s, 0,
       -1.0, 0, 0, s;
  return 0.01 * 0.01 * m;
}

MixtureDensity::MixtureDensity() : a_(mean_a(), cov_a()), b_(mean_b(), cov_b()) {}

double MixtureDensity::log_pdf(std::span<const double> x) const {
  const double la = std::log(2.5) + a_(x);
  const double lb = b_(x);
  const double s = std::max(la, lb);
  return s + std::log(std::exp(la - s) + std::exp(lb - s));
}

void MixtureDensity::log_density(std::span<const double> points, std::span<double> out) {
  check_batch(dim(), points, out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = log_pdf(points.subspan(i * dim(), dim()));
}

void ScaledDensity::log_density(std::span<const double> points, std::span<double> out) {
  inner_.log_density(points, out);
  for (double& v : out) v += log_factor_;
}

std::string format_double(double v) {
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_log_density(std::string_view line) {
  std::string_view s = line;
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  if (s == "-inf") return kNegInf;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw EvaluationError("malformed density reply: \"" + std::string(line) + "\"");
  }
  if (std::isnan(v)) throw EvaluationError("density reply is NaN: \"" + std::string(line) + "\"");
  if (!std::isfinite(v)) {
    throw EvaluationError("density reply is not finite: \"" + std::string(line) + "\"");
  }
  return v;
}

ExternalDensity::ExternalDensity(std::string command, std::size_t dim)
    : command_(std::move(command)), dim_(dim) {
  if (command_.empty()) throw ConfigError("external target needs a command");
  if (dim_ == 0) throw ConfigError("external target needs at least one dimension");
  // A dead child must surface as EPIPE, not kill the engine.
  std::signal(SIGPIPE, SIG_IGN);

  int in_pipe[2], out_pipe[2];
  if (pipe2(in_pipe, O_CLOEXEC) != 0 || pipe2(out_pipe, O_CLOEXEC) != 0) {
    throw EvaluationError(std::string("pipe: ") + std::strerror(errno));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  const char* argv[] = {"/bin/sh", "-c", command_.c_str(), nullptr};
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, "/bin/sh", &actions, nullptr, const_cast<char**>(argv), environ);
  posix_spawn_file_actions_destroy(&actions);
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  if (rc != 0) {
    shutdown();
    throw EvaluationError("cannot start external command: " + std::string(std::strerror(rc)));
  }
  pid_ = pid;

  try {
    write_all("HELLO defer 1 " + std::to_string(dim_) + "\n");
    std::string reply = read_line();
    if (!reply.empty() && reply.back() == '\r') reply.pop_back();
    if (reply != "OK") throw EvaluationError("external handshake failed: \"" + reply + "\"");
  } catch (...) {
    shutdown();
    throw;
  }
}

ExternalDensity::~ExternalDensity() { shutdown(); }

void ExternalDensity::shutdown() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    while (waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
    }
    pid_ = -1;
  }
}

void ExternalDensity::write_all(const std::string& data) {
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = write(to_child_, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw EvaluationError("external process closed its input: " + std::string(std::strerror(errno)));
    }
    done += static_cast<std::size_t>(n);
  }
}

std::string ExternalDensity::read_line() {
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    char chunk[4096];
    const ssize_t n = read(from_child_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw EvaluationError("reading from external process: " + std::string(std::strerror(errno)));
    }
    if (n == 0) throw EvaluationError("external process exited before replying");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void ExternalDensity::log_density(std::span<const double> points, std::span<double> out) {
  check_batch(dim_, points, out);
  if (to_child_ < 0) throw EvaluationError("external process is not running");
  for (std::size_t start = 0; start < out.size(); start += kPipeChunk) {
    const std::size_t stop = std::min(out.size(), start + kPipeChunk);
    std::string request;
    for (std::size_t i = start; i < stop; ++i) {
      for (std::size_t j = 0; j < dim_; ++j) {
        if (j) request.push_back(' ');
        request += format_double(points[i * dim_ + j]);
      }
      request.push_back('\n');
    }
    write_all(request);
    for (std::size_t i = start; i < stop; ++i) out[i] = parse_log_density(read_line());
  }
}

std::vector<double> student_t_means(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed, {0x73747564656e74ULL});
  std::vector<double> means(dim);
  for (double& m : means) m = 0.2 + 0.6 * rng.uniform();
  return means;
}

Target make_target(const TargetSpec& spec) {
  if (spec.dim == 0) throw ConfigError("target needs at least one dimension");
  Target t;
  t.domain = spec.domain.value_or(DomainSpec::unit_cube(spec.dim));
  t.domain.validate();
  if (t.domain.dim() != spec.dim) throw ConfigError("domain bounds do not match --dims");
  const auto n = static_cast<Eigen::Index>(spec.dim);

  if (spec.name == "uniform") {
    t.density = std::make_unique<PointwiseDensity>(spec.dim, [](std::span<const double>) { return 0.0; });
  } else if (spec.name == "gaussian") {
    t.density = std::make_unique<GaussianDensity>(Eigen::VectorXd::Constant(n, 0.5),
                                                  0.01 * Eigen::MatrixXd::Identity(n, n));
  } else if (spec.name == "student_t") {
    t.means = student_t_means(spec.dim, spec.seed);
    t.density = std::make_unique<StudentTDensity>(t.means, 0.01, 2.5 + 0.5 * static_cast<double>(spec.dim));
  } else if (spec.name == "canoe") {
    t.density = std::make_unique<CanoeDensity>(spec.dim);
  } else if (spec.name == "mog4") {
    if (spec.dim != 4) throw ConfigError("mog4 is four-dimensional");
    t.density = std::make_unique<MixtureDensity>();
  } else if (spec.name == "cigar") {
    if (spec.dim < 2) throw ConfigError("cigar needs at least two dimensions");
    t.density = std::make_unique<GaussianDensity>(Eigen::VectorXd::Constant(n, 0.5),
                                                  0.01 * equicorrelated(spec.dim, 0.99, 0.01));
  } else if (spec.name == "external") {
    t.density = std::make_unique<ExternalDensity>(spec.external_command, spec.dim);
  } else {
    throw ConfigError("unknown target '" + spec.name + "'");
  }
  return t;
}

}  // namespace defer
