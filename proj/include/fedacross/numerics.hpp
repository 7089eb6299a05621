#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "fedacross/error.hpp"

namespace fedacross {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, Vector data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  Vector& data() noexcept { return data_; }
  const Vector& data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T without materialising the transpose.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
Vector matvec(const Matrix& a, std::span<const double> x);

double dot(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> values);

Vector softmax(std::span<const double> logits);
Vector log_softmax(std::span<const double> logits);

/// Cross entropy against the smoothed target (1 - eps) * e_y + eps / L.
double label_smoothed_ce(std::span<const double> logits, std::size_t label, double epsilon);
/// Gradient of label_smoothed_ce with respect to the logits: softmax - target.
Vector label_smoothed_ce_grad(std::span<const double> logits, std::size_t label,
                              double epsilon);

/// Momentum buffer and hyper-parameters for one parameter group.
struct OptimState {
  Vector velocity;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// Coupled weight decay: v = momentum * v + (g + wd * p); p -= lr * v.
/// An empty velocity buffer is sized to the parameters on first use.
void sgd_momentum_step(std::span<double> params, std::span<const double> grads,
                       OptimState& state);

/// Inverse of (A + v v^T) given inv = A^-1, symmetric.
Matrix sherman_morrison_update(const Matrix& inv, std::span<const double> v);

/// Piecewise-constant step decay: lr * factor^(number of milestones <= epoch).
struct StepSchedule {
  std::vector<std::size_t> milestones;
  double factor = 0.1;
};

double lr_schedule(std::size_t epoch, double initial_lr, const StepSchedule& schedule);

/// True when a Cholesky factorisation of the symmetric matrix succeeds.
bool cholesky_succeeds(const Matrix& a);

/// Deterministic generator: mt19937_64 engine with hand-rolled transforms so
/// sequences do not depend on the standard library's distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n > 0.
  std::size_t index(std::size_t n);
  double normal(double mean = 0.0, double stddev = 1.0);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Child seed for an independent stream; splitmix64 over (seed, tag).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace fedacross
