#include "fedacross/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace fedacross {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Shape: return "shape";
    case ErrorCode::Index: return "index";
    case ErrorCode::DegenerateUpdate: return "degenerate-update";
    case ErrorCode::Statistics: return "statistics";
    case ErrorCode::Config: return "config";
    case ErrorCode::Scarcity: return "scarcity";
    case ErrorCode::Stratification: return "stratification";
    case ErrorCode::EmptySupport: return "empty-support";
    case ErrorCode::NotReady: return "not-ready";
    case ErrorCode::Unsupported: return "unsupported";
    case ErrorCode::NoTrainable: return "no-trainable-parameters";
    case ErrorCode::DegenerateStream: return "degenerate-stream";
    case ErrorCode::Exhaustion: return "exhaustion";
    case ErrorCode::Weighting: return "weighting";
    case ErrorCode::Protocol: return "protocol";
    case ErrorCode::Transport: return "transport";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::Io: return "io";
    case ErrorCode::Serialization: return "serialization";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_error(const char* op, std::size_t a, std::size_t b) {
  std::ostringstream os;
  os << op << ": dimension mismatch (" << a << " vs " << b << ")";
  throw Error(ErrorCode::Shape, os.str());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, Vector data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) shape_error("Matrix", data_.size(), rows_ * cols_);
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.cols(), b.rows());
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) shape_error("matmul_transposed", a.cols(), b.cols());
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) shape_error("matvec", a.cols(), x.size());
  Vector out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) out[i] = dot(a.row(i), x);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) shape_error("dot", a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

Vector log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw Error(ErrorCode::Shape, "softmax: empty input");
  const double max = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - max);
  const double log_norm = max + std::log(sum);
  Vector out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_norm;
  return out;
}

Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw Error(ErrorCode::Shape, "softmax: empty input");
  const double max = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

namespace {

void check_label(std::span<const double> logits, std::size_t label, double epsilon) {
  if (label >= logits.size()) {
    std::ostringstream os;
    os << "label " << label << " out of range for " << logits.size() << " classes";
    throw Error(ErrorCode::Index, os.str());
  }
  if (!(epsilon >= 0.0 && epsilon < 1.0))
    throw Error(ErrorCode::Config, "label smoothing epsilon must lie in [0, 1)");
}

}  // namespace

double label_smoothed_ce(std::span<const double> logits, std::size_t label, double epsilon) {
  check_label(logits, label, epsilon);
  const Vector logp = log_softmax(logits);
  const double off = epsilon / static_cast<double>(logits.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < logp.size(); ++i) {
    const double target = (i == label ? 1.0 - epsilon : 0.0) + off;
    loss -= target * logp[i];
  }
  return loss;
}

Vector label_smoothed_ce_grad(std::span<const double> logits, std::size_t label,
                              double epsilon) {
  check_label(logits, label, epsilon);
  Vector grad = softmax(logits);
  const double off = epsilon / static_cast<double>(logits.size());
  for (std::size_t i = 0; i < grad.size(); ++i) {
    grad[i] -= (i == label ? 1.0 - epsilon : 0.0) + off;
  }
  return grad;
}

void sgd_momentum_step(std::span<double> params, std::span<const double> grads,
                       OptimState& state) {
  if (params.size() != grads.size()) shape_error("sgd_momentum_step", params.size(), grads.size());
  if (state.velocity.empty()) state.velocity.assign(params.size(), 0.0);
  if (state.velocity.size() != params.size())
    shape_error("sgd_momentum_step velocity", state.velocity.size(), params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& v = state.velocity[i];
    v = state.momentum * v + (grads[i] + state.weight_decay * params[i]);
    params[i] -= state.lr * v;
  }
}

Matrix sherman_morrison_update(const Matrix& inv, std::span<const double> v) {
  const std::size_t n = inv.rows();
  if (inv.cols() != n) shape_error("sherman_morrison_update (square)", inv.rows(), inv.cols());
  if (v.size() != n) shape_error("sherman_morrison_update", v.size(), n);

  const Vector u = matvec(inv, v);  // inv symmetric, so v^T inv = u^T
  const double denom = 1.0 + dot(v, u);
  if (!(denom > 1e-12)) {
    throw Error(ErrorCode::DegenerateUpdate, "sherman_morrison_update: denominator <= 1e-12");
  }
  Matrix out = inv;
  for (std::size_t i = 0; i < n; ++i) {
    const double ui = u[i] / denom;
    for (std::size_t j = 0; j < n; ++j) out(i, j) -= ui * u[j];
  }
  // Re-symmetrise to keep rounding drift from accumulating over long streams.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (out(i, j) + out(j, i));
      out(i, j) = avg;
      out(j, i) = avg;
    }
  }
  return out;
}

double lr_schedule(std::size_t epoch, double initial_lr, const StepSchedule& schedule) {
  double lr = initial_lr;
  for (std::size_t milestone : schedule.milestones) {
    if (epoch >= milestone) lr *= schedule.factor;
  }
  return lr;
}

bool cholesky_succeeds(const Matrix& a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) return false;
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0)) return false;
    l(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return true;
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw Error(ErrorCode::Index, "Rng::index: empty range");
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

double Rng::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return mean + stddev * r * std::cos(theta);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace fedacross
