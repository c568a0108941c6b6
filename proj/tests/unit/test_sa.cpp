#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "doctest.h"
#include "jsa/errors.hpp"
#include "jsa/sa.hpp"
#include "support/sa_toys.hpp"

using namespace jsa;
using jsa::testing::GaussianDraw;
using jsa::testing::mean_residual;

namespace {

// Random-walk Metropolis on {0, ..., 9} with a non-uniform target, used
// wherever a kernel with genuine state dependence is needed.
struct RingWalk {
  int operator()(const int& z, std::span<const double>, std::mt19937_64& rng) const {
    std::uniform_int_distribution<int> step(0, 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int prop = (z + (step(rng) ? 1 : 9)) % 10;
    const double ratio = (1.0 + prop) / (1.0 + z);
    return u(rng) < ratio ? prop : z;
  }
};

std::vector<double> linear_in_z(std::span<const double> lambda, const int& z) {
  return {2.0 * z - lambda[0], -0.5 * z + 3.0 - lambda[1]};
}

}  // namespace

TEST_CASE("F identically zero leaves lambda unchanged") {
  std::mt19937_64 rng(1);
  SAState<int> s;
  s.lambda = {0.3, -1.2, 4.0};
  const auto zero = [](std::span<const double> l, const int&) { return std::vector<double>(l.size(), 0.0); };
  for (int i = 0; i < 50; ++i) sa_iterate(s, RingWalk{}, zero, SASchedule::constant(0.7), rng);
  CHECK(s.lambda == std::vector<double>{0.3, -1.2, 4.0});
  CHECK(s.t == 50);
}

TEST_CASE("mean finding with gamma = 1/t reproduces the sample mean") {
  std::mt19937_64 rng(2024), oracle_rng(2024);
  const double target = 2.5;
  SAState<double> s;
  s.lambda = {-7.0};
  const auto sched = SASchedule::robbins_monro(1.0, 0.0, 1.0);
  const std::size_t T = 100000;
  for (std::size_t t = 0; t < T; ++t) sa_iterate(s, GaussianDraw{target}, mean_residual, sched, rng);

  // gamma_1 = 1 wipes the start value, after which lambda_T is the running mean.
  double sum = 0.0;
  for (std::size_t t = 0; t < T; ++t) sum += std::normal_distribution<double>(target, 1.0)(oracle_rng);
  CHECK(std::abs(s.lambda[0] - sum / T) < 1e-9);
  CHECK(std::abs(s.lambda[0] - target) < 1e-2);
}

TEST_CASE("identity kernel with a deterministic gradient is gradient descent") {
  std::mt19937_64 rng(0);
  const std::vector<double> c{1.0, -2.0};
  const std::vector<double> scale{0.5, 3.0};
  // F = -grad of 0.5 * sum scale_i (lambda_i - c_i)^2
  const auto F = [&](std::span<const double> l, const int&) {
    return std::vector<double>{-scale[0] * (l[0] - c[0]), -scale[1] * (l[1] - c[1])};
  };
  const auto identity = [](const int& z, std::span<const double>, std::mt19937_64&) { return z; };
  SAState<int> s;
  s.lambda = {4.0, 4.0};
  std::vector<double> gd = s.lambda;
  const double lr = 0.1;
  for (int i = 0; i < 40; ++i) {
    sa_iterate(s, identity, F, SASchedule::constant(lr), rng);
    for (int k = 0; k < 2; ++k) gd[k] += lr * (-scale[k] * (gd[k] - c[k]));
    CHECK(s.lambda[0] == gd[0]);
    CHECK(s.lambda[1] == gd[1]);
  }
}

TEST_CASE("multiple_moves with K = 1 is bit-identical to sa_iterate") {
  std::mt19937_64 r1(77), r2(77);
  SAState<int> a, b;
  a.lambda = b.lambda = {0.1, 0.2};
  a.z = b.z = 4;
  a.optimizer = AdamState::for_params(2, 0.01);
  b.optimizer = AdamState::for_params(2, 0.01);
  const auto sched = SASchedule::robbins_monro(0.05, 10.0, 0.75);
  for (int i = 0; i < 500; ++i) {
    sa_iterate(a, RingWalk{}, linear_in_z, sched, r1);
    multiple_moves(b, RingWalk{}, linear_in_z, 1, sched, r2);
  }
  CHECK(a.lambda == b.lambda);
  CHECK(a.z == b.z);
  CHECK(a.t == b.t);
  CHECK(a.optimizer->m == b.optimizer->m);
  CHECK(a.optimizer->v == b.optimizer->v);
  CHECK(r1() == r2());
}

TEST_CASE("K = 4 with F linear in z equals F at the mean visited state") {
  std::mt19937_64 rng(5), replay(5);
  SAState<int> s;
  s.lambda = {1.0, 1.0};
  s.z = 3;
  const double gamma = 0.25;
  multiple_moves(s, RingWalk{}, linear_in_z, 4, SASchedule::constant(gamma), rng);

  int z = 3;
  double zbar = 0.0;
  for (int k = 0; k < 4; ++k) {
    z = RingWalk{}(z, {}, replay);
    zbar += z / 4.0;
  }
  const double f0 = 2.0 * zbar - 1.0, f1 = -0.5 * zbar + 3.0 - 1.0;
  CHECK(s.lambda[0] == doctest::Approx(1.0 + gamma * f0).epsilon(1e-14));
  CHECK(s.lambda[1] == doctest::Approx(1.0 + gamma * f1).epsilon(1e-14));
  CHECK(s.z == z);
  CHECK(s.t == 1);
  CHECK_THROWS_AS(multiple_moves(s, RingWalk{}, linear_in_z, 0, SASchedule::constant(gamma), rng),
                  domain_error);
}

TEST_CASE("averaging over moves does not increase update variance") {
  // 1000 trials from the same lambda, each chain started from an exact draw
  // of the stationary law so that only the move count differs.
  std::mt19937_64 rng(9);
  std::discrete_distribution<int> stationary({1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  const auto sched = SASchedule::constant(1.0);
  const auto F = [](std::span<const double>, const int& z) { return std::vector<double>{double(z)}; };
  auto variance = [&](std::size_t K) {
    double s = 0, s2 = 0;
    const int n = 1000;
    for (int i = 0; i < n; ++i) {
      SAState<int> st;
      st.lambda = {0.0};
      st.z = stationary(rng);
      multiple_moves(st, RingWalk{}, F, K, sched, rng);
      s += st.lambda[0];
      s2 += st.lambda[0] * st.lambda[0];
    }
    return s2 / n - (s / n) * (s / n);
  };
  const double v1 = variance(1), v4 = variance(4);
  MESSAGE("single-move variance " << v1 << ", four-move variance " << v4);
  CHECK(v4 <= v1);
}

TEST_CASE("robbins-monro schedule: divergent sum, convergent sum of squares") {
  const auto s = SASchedule::robbins_monro(1.0, 0.0, 1.0);
  double sum = 0.0, sq = 0.0;
  const std::size_t N = 1000000;
  for (std::size_t t = 1; t <= N; ++t) {
    const double g = s.gamma(t);
    sum += g;
    sq += g * g;
    if (t == 1000) CHECK(sum > 7.0);
  }
  CHECK(sum > 14.0);  // harmonic sum grows like log N without bound
  // Tail of sum 1/t^2 beyond N is within [1/(N+1), 1/N].
  CHECK(std::abs(sq + 1.0 / (N + 0.5) - std::numbers::pi * std::numbers::pi / 6.0) < 1e-12);

  CHECK_THROWS_AS(SASchedule::robbins_monro(1.0, 0.0, 0.5), domain_error);
  CHECK_THROWS_AS(SASchedule::robbins_monro(1.0, 0.0, 1.2), domain_error);
  CHECK_THROWS_AS(SASchedule::constant(0.0), domain_error);
  CHECK(SASchedule::constant(0.3).gamma(12345) == 0.3);
  CHECK(SASchedule::robbins_monro(2.0, 3.0, 0.75).gamma(13) == doctest::Approx(2.0 / std::pow(16.0, 0.75)));
}

TEST_CASE("mean-finding error shrinks like one over root T") {
  const std::vector<std::size_t> ts{100, 1000, 10000, 100000};
  const auto err = jsa::testing::mean_finding_errors(ts, 40, 2.5, 100);
  const double slope = jsa::testing::log_log_slope(ts, err);
  MESSAGE("log-log slope " << slope);
  CHECK(std::abs(slope + 0.5) < 0.15);
}

TEST_CASE("non-finite measurement and divergence abort without touching the state") {
  std::mt19937_64 rng(3);
  SAState<int> s;
  s.lambda = {1.0};
  s.t = 6;
  const auto bad = [](std::span<const double>, const int&) { return std::vector<double>{NAN}; };
  try {
    sa_iterate(s, RingWalk{}, bad, SASchedule::constant(0.1), rng);
    FAIL("expected numeric_error");
  } catch (const numeric_error& e) {
    CHECK(std::string(e.what()).find("t=7") != std::string::npos);
  }
  CHECK(s.lambda == std::vector<double>{1.0});
  CHECK(s.t == 6);

  const auto push = [](std::span<const double>, const int&) { return std::vector<double>{100.0}; };
  CHECK_THROWS_AS(sa_iterate(s, RingWalk{}, push, SASchedule::constant(1.0), rng, 50.0), numeric_error);
  CHECK(s.lambda == std::vector<double>{1.0});
  sa_iterate(s, RingWalk{}, push, SASchedule::constant(0.1), rng, 50.0);
  CHECK(s.lambda[0] == 11.0);
  CHECK(s.t == 7);

  const auto wrong = [](std::span<const double>, const int&) { return std::vector<double>{1.0, 2.0}; };
  CHECK_THROWS_AS(sa_iterate(s, RingWalk{}, wrong, SASchedule::constant(0.1), rng), shape_error);
}

TEST_CASE("t is monotone and the Adam path uses gamma as the learning rate") {
  std::mt19937_64 rng(4);
  SAState<int> s;
  s.lambda = {0.0};
  s.optimizer = AdamState::for_params(1, 123.0);
  const auto one = [](std::span<const double>, const int&) { return std::vector<double>{1.0}; };
  sa_iterate(s, RingWalk{}, one, SASchedule::constant(0.02), rng);
  // First bias-corrected Adam step has magnitude lr in the ascent direction.
  CHECK(s.lambda[0] == doctest::Approx(0.02).epsilon(1e-6));
  std::size_t prev = s.t;
  for (int i = 0; i < 20; ++i) {
    sa_iterate(s, RingWalk{}, one, SASchedule::robbins_monro(0.5, 1.0, 0.6), rng);
    CHECK(s.t == prev + 1);
    prev = s.t;
  }
}
