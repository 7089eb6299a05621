#include <doctest.h>

#include <cmath>

#include "fedacross/numerics.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace fedacross;

TEST_SUITE("numerics") {

TEST_CASE("matmul basics") {
  Rng rng(1);
  const Matrix b = testing::random_matrix(3, 4, rng);
  CHECK(matmul(Matrix::identity(3), b) == b);
  CHECK(matmul(Matrix(1, 1, 2.0), Matrix(1, 1, 3.0))(0, 0) == 6.0);
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), Error);
}

TEST_CASE("matmul agrees with the triple loop") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = testing::random_matrix(5, 4, rng);
    const Matrix b = testing::random_matrix(4, 3, rng);
    CHECK(oracle::max_abs_diff(matmul(a, b), oracle::matmul(a, b)) <= 1e-12);
    CHECK(oracle::max_abs_diff(matmul_transposed(a, transpose(b)), oracle::matmul(a, b)) <= 1e-12);
  }
}

TEST_CASE("identity associativity is exact") {
  Rng rng(3);
  const Matrix a = testing::random_matrix(6, 5, rng);
  const Matrix b = testing::random_matrix(5, 4, rng);
  CHECK(matmul(matmul(a, Matrix::identity(5)), b) == matmul(a, b));
}

TEST_CASE("matvec and dot") {
  const Matrix a(2, 2, Vector{1, 2, 3, 4});
  const Vector x{1, -1};
  CHECK(matvec(a, x) == Vector{-1, -1});
  CHECK(dot(Vector{1, 2, 3}, Vector{4, 5, 6}) == 32.0);
  CHECK_THROWS_AS(dot(Vector{1}, Vector{1, 2}), Error);
  CHECK(all_finite(Vector{1, 2}));
  CHECK_FALSE(all_finite(Vector{1, NAN}));
}

TEST_CASE("softmax") {
  const Vector u = softmax(Vector{0, 0, 0});
  for (double v : u) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const Vector z{0.3, -1.2, 2.5, 0.0};
  Vector shifted = z;
  for (double& v : shifted) v += 1000.0;
  const Vector a = softmax(z), b = softmax(shifted);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::fabs(a[i] - b[i]) <= 1e-12);

  const Vector big = softmax(Vector{700, 0});
  CHECK(all_finite(big));
  const long double ref = 1.0L / (1.0L + std::exp(-700.0L));
  CHECK(std::fabs(big[0] - static_cast<double>(ref)) <= 1e-15);
  CHECK(big[1] > 0.0);

  CHECK_THROWS_AS(softmax(Vector{}), Error);
}

TEST_CASE("softmax sums to one over random vectors") {
  Rng rng(4);
  double worst = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    Vector z(1 + rng.index(20));
    for (double& v : z) v = rng.normal(0.0, 10.0);
    double s = 0.0;
    for (double v : softmax(z)) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
      s += v;
    }
    worst = std::max(worst, std::fabs(s - 1.0));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("label smoothed cross entropy") {
  SUBCASE("epsilon zero is plain cross entropy") {
    const Vector z{1.0, 2.0, 0.5};
    const double expected = -std::log(softmax(z)[1]);
    CHECK(label_smoothed_ce(z, 1, 0.0) == doctest::Approx(expected).epsilon(1e-14));
  }
  SUBCASE("uniform logits give ln L") {
    double worst = 0.0;
    for (std::size_t L = 2; L <= 64; ++L)
      for (double eps : {0.0, 0.1, 0.3})
        for (std::size_t y : {std::size_t{0}, L - 1}) {
          const Vector z(L, 0.7);
          worst = std::max(worst, std::fabs(label_smoothed_ce(z, y, eps) - std::log(static_cast<double>(L))));
        }
    CHECK(worst <= 1e-12);
  }
  SUBCASE("matches the long double formula") {
    const Vector z{2, 0, 0};
    const double ref = static_cast<double>(oracle::smoothed_ce(z, 0, 0.1));
    CHECK(std::fabs(label_smoothed_ce(z, 0, 0.1) - ref) <= 1e-14);
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      Vector r(2 + rng.index(8));
      for (double& v : r) v = rng.normal(0.0, 5.0);
      const std::size_t y = rng.index(r.size());
      const double e = rng.uniform(0.0, 0.5);
      CHECK(std::fabs(label_smoothed_ce(r, y, e) - static_cast<double>(oracle::smoothed_ce(r, y, e))) <= 1e-12);
    }
  }
  SUBCASE("gradient matches finite differences") {
    Rng rng(6);
    Vector z(5);
    for (double& v : z) v = rng.normal();
    const Vector g = label_smoothed_ce_grad(z, 2, 0.1);
    for (std::size_t i = 0; i < z.size(); ++i) {
      Vector hi = z, lo = z;
      hi[i] += 1e-5;
      lo[i] -= 1e-5;
      const double fd = (label_smoothed_ce(hi, 2, 0.1) - label_smoothed_ce(lo, 2, 0.1)) / 2e-5;
      CHECK(g[i] == doctest::Approx(fd).epsilon(1e-6));
    }
  }
  SUBCASE("label out of range") {
    CHECK_THROWS_AS(label_smoothed_ce(Vector{0, 0}, 2, 0.1), Error);
    try {
      label_smoothed_ce(Vector{0, 0}, 2, 0.1);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Index);
    }
  }
}

TEST_CASE("sgd with momentum") {
  SUBCASE("zero gradient, zero decay leaves params") {
    Vector p{1.0, -2.0};
    OptimState s{{}, 0.1, 0.9, 0.0};
    sgd_momentum_step(p, Vector{0, 0}, s);
    CHECK(p == Vector{1.0, -2.0});
  }
  SUBCASE("vanilla reduction") {
    Vector p{1.0, -2.0};
    OptimState s{{}, 0.1, 0.0, 0.0};
    sgd_momentum_step(p, Vector{0.5, 1.0}, s);
    CHECK(p[0] == 1.0 - 0.1 * 0.5);
    CHECK(p[1] == -2.0 - 0.1 * 1.0);
  }
  SUBCASE("two steps follow the unrolled recurrence") {
    const double lr = 0.05, mom = 0.9, wd = 0.01;
    Vector p{2.0};
    OptimState s{{}, lr, mom, wd};
    const double g1 = 0.3, g2 = -0.7;
    sgd_momentum_step(p, Vector{g1}, s);
    sgd_momentum_step(p, Vector{g2}, s);
    const double v1 = g1 + wd * 2.0;
    const double p1 = 2.0 - lr * v1;
    const double v2 = mom * v1 + (g2 + wd * p1);
    const double p2 = p1 - lr * v2;
    CHECK(p[0] == doctest::Approx(p2).epsilon(1e-15));
    CHECK(s.velocity[0] == doctest::Approx(v2).epsilon(1e-15));
  }
  SUBCASE("shape mismatch") {
    Vector p{1.0, 2.0};
    OptimState s;
    CHECK_THROWS_AS(sgd_momentum_step(p, Vector{1.0}, s), Error);
  }
}

TEST_CASE("sherman morrison") {
  SUBCASE("zero vector keeps the inverse") {
    Rng rng(7);
    Matrix inv = oracle::inverse(oracle::random_spd(4, rng));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < i; ++j) inv(i, j) = inv(j, i);
    const Matrix out = sherman_morrison_update(inv, Vector(4, 0.0));
    CHECK(oracle::max_abs_diff(out, inv) == 0.0);
  }
  SUBCASE("scalar closed form") {
    const Matrix out = sherman_morrison_update(Matrix(1, 1, 1.0), Vector{1.0});
    CHECK(out(0, 0) == 0.5);
  }
  SUBCASE("agrees with direct inversion") {
    Rng rng(8);
    double worst = 0.0, asym = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = trial == 0 ? 8 : 1 + rng.index(16);
      const Matrix a = oracle::random_spd(n, rng);
      Vector v(n);
      for (double& x : v) x = rng.normal();
      Matrix updated = a;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) updated(i, j) += v[i] * v[j];
      const Matrix sm = sherman_morrison_update(oracle::inverse(a), v);
      worst = std::max(worst, oracle::frobenius_diff(sm, oracle::inverse(updated)));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) asym = std::max(asym, std::fabs(sm(i, j) - sm(j, i)));
    }
    CHECK(worst <= 1e-8);
    CHECK(asym <= 1e-9);
  }
  SUBCASE("degenerate denominator") {
    try {
      sherman_morrison_update(Matrix(1, 1, -1.0), Vector{1.0});
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegenerateUpdate);
    }
  }
}

TEST_CASE("step decay schedule") {
  const StepSchedule s{{150, 250}, 0.1};
  CHECK(lr_schedule(0, 0.01, s) == 0.01);
  CHECK(lr_schedule(149, 0.01, s) == 0.01);
  CHECK(lr_schedule(150, 0.01, s) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(lr_schedule(250, 0.01, s) == doctest::Approx(0.0001).epsilon(1e-15));
  for (std::size_t e = 1; e < 300; ++e) CHECK(lr_schedule(e, 0.01, s) <= lr_schedule(e - 1, 0.01, s));
}

TEST_CASE("cholesky check") {
  Rng rng(9);
  CHECK(cholesky_succeeds(oracle::random_spd(6, rng)));
  CHECK_FALSE(cholesky_succeeds(Matrix(2, 2, Vector{1, 2, 2, 1})));
}

TEST_CASE("rng determinism and ranges") {
  Rng a(123), b(123), c(124);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs |= x != c.next_u64();
  }
  CHECK(differs);

  Rng r(5);
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::fabs(sum / n) < 0.02);
  CHECK(std::fabs(sq / n - 1.0) < 0.02);
  for (int i = 0; i < 1000; ++i) CHECK(r.index(7) < 7);
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

}  // TEST_SUITE
