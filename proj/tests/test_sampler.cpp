#include <doctest.h>

#include <cmath>

#include "fedacross/data.hpp"
#include "helpers.hpp"
#include "samplercheck.hpp"

using namespace fedacross;

namespace {

/// Sampler whose controller bounds pin q to a single value.
SamplerState fixed_q(std::size_t m, double q) {
  SamplerState s = make_sampler(m, SamplerConfig{});
  s.q = s.config.q_min = s.config.q_max = q;
  return s;
}

ClassId ground_truth(const Sample& s) { return s.label; }

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("first observation has probability q") {
  SamplerState s = make_sampler(3, SamplerConfig{});
  Rng rng(1);
  const StreamDecision d = observe_embedding(s, Vector{0.3, -1.0, 2.0}, rng);
  CHECK(d.probability == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(s.t == 1);
}

TEST_CASE("zero embedding is never kept") {
  SamplerState s = make_sampler(3, SamplerConfig{});
  Rng rng(2);
  observe_embedding(s, Vector{1.0, 2.0, 0.5}, rng);
  for (int i = 0; i < 50; ++i) {
    const Matrix before = s.inv_cov;
    const StreamDecision d = observe_embedding(s, Vector(3, 0.0), rng);
    CHECK(d.probability == 0.0);
    CHECK_FALSE(d.keep);
    CHECK(s.inv_cov == before);
  }
}

TEST_CASE("zero trace is a degenerate stream") {
  SamplerState s = make_sampler(2, SamplerConfig{});
  Rng rng(3);
  try {
    observe_embedding(s, Vector{0.0, 0.0}, rng);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateStream);
  }
}

TEST_CASE("clamped probability one is always kept") {
  // In one dimension p_t = q t tau_t^2 / sum tau_j^2, which is >= 1 for a
  // growing sequence when q = 1.
  SamplerState s = fixed_q(1, 1.0);
  Rng rng(4);
  for (int t = 1; t <= 200; ++t) {
    const StreamDecision d = observe_embedding(s, Vector{static_cast<double>(t)}, rng);
    CHECK(d.probability == 1.0);
    CHECK(d.keep);
  }
  CHECK(s.selected == 200);
}

TEST_CASE("streamed state matches the from-scratch recomputation") {
  const auto r = testing::stream_check(5, 8, 1000);
  CHECK(r.probability <= 1e-10);
  CHECK(r.inv_cov <= 1e-10);
  CHECK(r.sum_outer <= 1e-10);
  CHECK(r.asymmetry <= 1e-9);
  CHECK(r.cholesky_ok);
  CHECK(r.selected > 0);
}

TEST_CASE("probabilities stay in range and match the formula") {
  SamplerState s = make_sampler(4, SamplerConfig{});
  Rng draw(6), coin(7);
  for (int t = 0; t < 500; ++t) {
    Vector tau(4);
    for (double& v : tau) v = draw.normal(0.0, t % 7 == 0 ? 5.0 : 1.0);
    const StreamDecision d = observe_embedding(s, tau, coin);
    CHECK(d.probability >= 0.0);
    CHECK(d.probability <= 1.0);
    CHECK(s.selected <= s.t);
    CHECK(s.q > s.config.q_min * 0.999999);
    CHECK(s.q <= s.config.q_max);
  }
}

TEST_CASE("keep rate matches the mean probability") {
  SamplerState s = fixed_q(4, 0.3);
  Rng draw(8), coin(9);
  double sum_p = 0.0, var = 0.0;
  std::uint64_t kept = 0;
  const int n = 10000;
  for (int t = 0; t < n; ++t) {
    Vector tau(4);
    for (double& v : tau) v = draw.normal();
    const StreamDecision d = observe_embedding(s, tau, coin);
    CHECK(d.q == 0.3);
    sum_p += d.probability;
    var += d.probability * (1.0 - d.probability);
    kept += d.keep;
  }
  const double se = std::sqrt(var);
  CHECK(std::fabs(static_cast<double>(kept) - sum_p) <= 3.0 * se);
}

TEST_CASE("label frequency controller") {
  SamplerState s = make_sampler(2, SamplerConfig{});
  s.t = 10;
  s.selected = 2;
  s.q = 0.37;
  update_label_frequency(s);
  CHECK(s.q == doctest::Approx(0.37).epsilon(1e-15));

  s.t = 100000;
  s.selected = 0;
  for (int i = 0; i < 20; ++i) update_label_frequency(s);
  CHECK(s.q == s.config.q_max);

  s.selected = s.t;
  update_label_frequency(s);
  CHECK(s.q < s.config.q_max);
}

TEST_CASE("closed loop tracks the budget") {
  for (double budget : {0.1, 0.2, 0.4}) {
    const double rate = testing::selection_rate(10, 8, 10000, budget);
    CAPTURE(budget);
    CHECK(std::fabs(rate - budget) <= 0.2 * budget);
  }
}

TEST_CASE("config validation") {
  SamplerConfig c;
  c.budget = 0.0;
  CHECK_THROWS_AS(validate(c), Error);
  c = SamplerConfig{};
  c.q_min = 0.5;
  c.q_max = 0.1;
  CHECK_THROWS_AS(validate(c), Error);
  CHECK_NOTHROW(validate(SamplerConfig{}));
}

TEST_CASE("populating a support set from a stream") {
  BaseClasses base;
  base.class_count = 3;
  base.height = base.width = 4;
  Rng mrng(11);
  const ModelParams model = testing::random_model(mrng, 16, {6}, 4, 3);
  const Dataset ds = generate_domain(base, DomainConfig{0.0, 1.0, 0.05, 0.0, 3}, 30);

  SUBCASE("k = 0") {
    DatasetStream stream(ds, 1);
    SamplerState s = make_sampler(4, SamplerConfig{});
    Rng rng(1);
    const ClassId classes[] = {0, 1, 2};
    const auto r = populate_support(stream, model, 0, classes, ground_truth, s, rng);
    CHECK(r.support.size() == 0);
    CHECK(r.labels_requested == 0);
  }
  SUBCASE("single-class stream") {
    const ClassId only[] = {0};
    const Dataset one = filter_classes(ds, only);
    {
      DatasetStream stream(one, 2);
      SamplerState s = make_sampler(4, SamplerConfig{});
      Rng rng(2);
      const auto r = populate_support(stream, model, 3, only, ground_truth, s, rng);
      CHECK(r.labels_requested == 3);
      CHECK(r.support.per_class.at(0).size() == 3);
      CHECK(r.telemetry.size() == r.observed);
    }
    DatasetStream stream(one, 2);
    SamplerState s = make_sampler(4, SamplerConfig{});
    Rng rng(2);
    const ClassId two[] = {0, 1};
    try {
      populate_support(stream, model, 3, two, ground_truth, s, rng);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Exhaustion);
      CHECK(std::string(e.what()).find("1=0/3") != std::string::npos);
    }
  }
  SUBCASE("two-class balanced stream") {
    const ClassId pair[] = {0, 1};
    DatasetStream stream(filter_classes(ds, pair), 3);
    SamplerState s = make_sampler(4, SamplerConfig{});
    Rng rng(3);
    const auto r = populate_support(stream, model, 5, pair, ground_truth, s, rng);
    CHECK(r.support.per_class.at(0).size() == 5);
    CHECK(r.support.per_class.at(1).size() == 5);
    CHECK_NOTHROW(r.support.check_balanced());
    CHECK(r.labels_requested >= 10);
    CHECK(r.labels_requested == 10 + r.discarded);
  }
  SUBCASE("generator stream and telemetry file") {
    GeneratorStream stream(base, DomainConfig{0.1, 0.9, 0.05, 5.0, 4}, 5, 5000);
    SamplerState s = make_sampler(4, SamplerConfig{});
    Rng rng(4);
    const ClassId classes[] = {0, 1, 2};
    const auto r = populate_support(stream, model, 4, classes, ground_truth, s, rng);
    CHECK(r.support.size() == 12);
    const auto dir = testing::scratch("telemetry");
    write_telemetry_csv(r.telemetry, (dir / "t.csv").string(), false);
    const std::string text = testing::slurp(dir / "t.csv");
    CHECK(static_cast<std::uint64_t>(std::count(text.begin(), text.end(), '\n')) == r.telemetry.size() + 1);
  }
}

TEST_CASE("observe embeds through the model") {
  Rng mrng(12);
  const ModelParams model = testing::random_model(mrng, 9, {}, 3, 2);
  Sample x;
  x.height = x.width = 3;
  x.pixels.assign(9, 0.4);
  SamplerState s = make_sampler(3, SamplerConfig{});
  Rng rng(1);
  const StreamDecision d = observe(s, x, model, rng);
  CHECK(d.embedding == embed(model, x.pixels));
}

}  // TEST_SUITE
