#include <cmath>
#include <random>

#include "doctest.h"
#include "jsa/errors.hpp"
#include "jsa/net.hpp"

using namespace jsa;

namespace {

// Scalar loss sum_r sum_j target[r,j] * out[r,j] so that grad_output == target.
double weighted_output(const LayeredNet& net, const DenseArray& input, const DenseArray& target) {
  const auto acts = net.forward(input);
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) s += target[i] * acts.back()[i];
  return s;
}

DenseArray random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  DenseArray a = DenseArray::matrix(r, c);
  for (double& v : a.storage()) v = u(rng);
  return a;
}

void check_backward_against_fd(LayeredNet net, const DenseArray& input, std::mt19937_64& rng) {
  const DenseArray target = random_matrix(input.rows(), net.output_width(), rng);
  const auto acts = net.forward(input);
  const NetGradients g = net.backward(acts, target);

  const DenseArray p0 = DenseArray::vector(std::vector<double>(net.params().begin(), net.params().end()));
  auto fn = [&](std::span<const double> p) {
    LayeredNet copy = net;
    std::copy(p.begin(), p.end(), copy.params().begin());
    return weighted_output(copy, input, target);
  };
  const DenseArray fd = finite_diff_grad(fn, p0, 1e-5);
  for (std::size_t i = 0; i < fd.size(); ++i) {
    CAPTURE(i);
    CHECK(relative_error(g.params[i], fd[i]) < 1e-4);
  }

  auto fn_in = [&](std::span<const double> x) {
    return weighted_output(net, DenseArray(input.shape(), std::vector<double>(x.begin(), x.end())), target);
  };
  const DenseArray fd_in = finite_diff_grad(fn_in, input, 1e-5);
  for (std::size_t i = 0; i < fd_in.size(); ++i) CHECK(relative_error(g.input[i], fd_in[i]) < 1e-4);
}

}  // namespace

TEST_CASE("forward examples") {
  SUBCASE("identity linear layer") {
    LayeredNet net(2);
    net.add_linear(2);
    auto p = net.params();
    p[0] = 1.0;  // W[0,0]
    p[3] = 1.0;  // W[1,1]
    const auto out = net.forward(DenseArray::vector({0.3, -0.2})).back();
    CHECK(out[0] == doctest::Approx(0.3));
    CHECK(out[1] == doctest::Approx(-0.2));
  }
  SUBCASE("sigmoid of zero") {
    LayeredNet net(1);
    net.add_linear(1).add_sigmoid();
    CHECK(net.forward(DenseArray::vector({0.0})).back()[0] == 0.5);
  }
  SUBCASE("leaky relu slope 0.01") {
    LayeredNet net(1);
    net.add_linear(1).add_leaky_relu(0.01);
    net.params()[0] = 1.0;
    CHECK(net.forward(DenseArray::vector({-1.0})).back()[0] == doctest::Approx(-0.01));
  }
  SUBCASE("width mismatch is a shape error") {
    LayeredNet net(3);
    net.add_linear(2);
    CHECK_THROWS_AS(net.forward(DenseArray::vector({1.0, 2.0})), shape_error);
  }
}

TEST_CASE("sigmoid clamps and group softmax normalizes") {
  std::mt19937_64 rng(3);
  LayeredNet sig(2);
  sig.add_linear(2).add_sigmoid();
  sig.params()[4] = 80.0;
  sig.params()[5] = -80.0;
  const auto s = sig.forward(DenseArray::vector({0.0, 0.0})).back();
  CHECK(s[0] == 1.0 - kProbClamp);
  CHECK(s[1] == kProbClamp);

  LayeredNet soft(6);
  soft.add_linear(12).add_group_softmax(4, 3);
  soft.init_params(rng);
  const auto out = soft.forward(random_matrix(5, 6, rng, 3.0)).back();
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t g = 0; g < 4; ++g) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 3; ++j) sum += out(r, g * 3 + j);
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("backward of a single linear layer") {
  LayeredNet net(3);
  net.add_linear(1);
  const DenseArray x = DenseArray::vector({0.5, -1.5, 2.0});
  const auto g = net.backward(net.forward(x), DenseArray::vector({1.0}));
  // Weight gradient equals the input, bias gradient is 1.
  CHECK(g.params[0] == 0.5);
  CHECK(g.params[1] == -1.5);
  CHECK(g.params[2] == 2.0);
  CHECK(g.params[3] == 1.0);

  const auto z = net.backward(net.forward(x), DenseArray::vector({0.0}));
  for (double v : z.params.values()) CHECK(v == 0.0);
  for (double v : z.input.values()) CHECK(v == 0.0);
}

TEST_CASE("backward matches finite differences for every layer type") {
  std::mt19937_64 rng(11);
  SUBCASE("leaky relu stack") {
    LayeredNet net(5);
    net.add_linear(7).add_leaky_relu().add_linear(4).add_leaky_relu().add_linear(3).add_sigmoid();
    net.init_params(rng);
    check_backward_against_fd(net, random_matrix(4, 5, rng), rng);
  }
  SUBCASE("tanh stack") {
    LayeredNet net(4);
    net.add_linear(6).add_tanh().add_linear(6).add_tanh().add_linear(2).add_sigmoid();
    net.init_params(rng);
    check_backward_against_fd(net, random_matrix(3, 4, rng), rng);
  }
  SUBCASE("group softmax head") {
    LayeredNet net(4);
    net.add_linear(5).add_leaky_relu().add_linear(6).add_group_softmax(2, 3);
    net.init_params(rng);
    check_backward_against_fd(net, random_matrix(3, 4, rng), rng);
  }
  SUBCASE("zero-input bias-only net") {
    LayeredNet net(0);
    net.add_linear(3).add_sigmoid();
    net.init_params(rng);
    check_backward_against_fd(net, DenseArray({2, 0}), rng);
  }
}

TEST_CASE("backward rejects a foreign activation list") {
  LayeredNet a(2), b(2);
  a.add_linear(2).add_tanh();
  b.add_linear(2);
  const auto acts = b.forward(DenseArray::vector({1.0, 2.0}));
  CHECK_THROWS_AS(a.backward(acts, DenseArray::vector({1.0, 1.0})), state_error);
}

TEST_CASE("forward is deterministic") {
  std::mt19937_64 rng(5);
  LayeredNet net(8);
  net.add_linear(16).add_leaky_relu().add_linear(4).add_sigmoid();
  net.init_params(rng);
  const DenseArray x = random_matrix(6, 8, rng);
  CHECK(net.forward(x) == net.forward(x));
}

TEST_CASE("init uses the Glorot bound and zero biases") {
  std::mt19937_64 rng(1);
  LayeredNet net(30);
  net.add_linear(10);
  net.init_params(rng);
  const double a = std::sqrt(6.0 / 40.0);
  for (std::size_t i = 0; i < 300; ++i) CHECK(std::abs(net.params()[i]) <= a);
  for (std::size_t i = 300; i < 310; ++i) CHECK(net.params()[i] == 0.0);
}

TEST_CASE("finite_diff_grad examples") {
  auto square = [](std::span<const double> p) { return p[0] * p[0]; };
  const auto g = finite_diff_grad(square, DenseArray::vector({3.0}), 1e-5);
  CHECK(std::abs(g[0] - 6.0) < 1e-6);

  auto constant = [](std::span<const double>) { return 4.2; };
  const auto z = finite_diff_grad(constant, DenseArray::vector({1.0, -2.0, 3.0}), 1e-5);
  for (double v : z.values()) CHECK(v == 0.0);

  auto bad = [](std::span<const double> p) { return std::log(p[0]); };
  CHECK_THROWS_AS(finite_diff_grad(bad, DenseArray::vector({0.0}), 1e-5), numeric_error);
  CHECK_THROWS_AS(finite_diff_grad(square, DenseArray::vector({1.0}), 0.0), domain_error);
}

TEST_CASE("adam_step examples") {
  SUBCASE("first step moves by about lr in the gradient sign") {
    std::vector<double> p{0.0, 0.0, 0.0};
    const std::vector<double> g{2.0, -0.5, 1e-12};
    AdamState s = AdamState::for_params(3, 0.01);
    adam_step(p, g, s);
    CHECK(s.step == 1);
    CHECK(p[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(std::abs(p[2]) <= 0.01);
    CHECK(std::abs(p[2]) < 0.001);  // |g| << eps stays small
  }
  SUBCASE("zero gradients leave params unchanged") {
    std::vector<double> p{1.0, -2.0};
    const std::vector<double> g{0.0, 0.0};
    AdamState s = AdamState::for_params(2, 0.1);
    for (int i = 0; i < 5; ++i) adam_step(p, g, s);
    CHECK(p == std::vector<double>{1.0, -2.0});
  }
  SUBCASE("second step with constant gradient is bounded by lr") {
    std::vector<double> p{0.0};
    const std::vector<double> g{3.0};
    AdamState s = AdamState::for_params(1, 0.05);
    adam_step(p, g, s);
    const double before = p[0];
    adam_step(p, g, s);
    CHECK(std::abs(p[0] - before) <= 0.05 + 1e-12);
    for (double v : s.v) CHECK(v >= 0.0);
  }
  SUBCASE("non-finite gradient is rejected") {
    std::vector<double> p{0.0};
    const std::vector<double> g{NAN};
    AdamState s = AdamState::for_params(1, 0.05);
    CHECK_THROWS_AS(adam_step(p, g, s), numeric_error);
  }
}
