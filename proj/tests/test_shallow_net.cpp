#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "sane/numerics.hpp"
#include "sane/shallow_net.hpp"

using Catch::Approx;
using namespace sane;

namespace {

double rel_err(std::span<const double> a, std::span<const double> b) {
  double diff2 = 0.0, ref2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff2 += (a[i] - b[i]) * (a[i] - b[i]);
    ref2 += b[i] * b[i];
  }
  return std::sqrt(diff2) / std::max(std::sqrt(ref2), 1e-30);
}

}  // namespace

TEST_CASE("init_gaussian builds the fixed sign pattern", "[shallow_net]") {
  SeededRng rng(1, "test.init");
  const ShallowNet net = init_gaussian(4, 3, Activation::Softplus, rng);
  REQUIRE(net.v == std::vector<double>{0.5, 0.5, -0.5, -0.5});
  REQUIRE(norm2(net.v) == Approx(1.0).margin(1e-12));

  SeededRng r1(7, "test.init");
  SeededRng r2(7, "test.init");
  const ShallowNet a = init_gaussian(8, 5, Activation::Tanh, r1);
  const ShallowNet b = init_gaussian(8, 5, Activation::Tanh, r2);
  REQUIRE(a.W == b.W);

  SeededRng rng_odd(1, "test.init");
  REQUIRE_THROWS_AS(init_gaussian(5, 3, Activation::Softplus, rng_odd),
                    std::invalid_argument);
}

TEST_CASE("init_gaussian entries have near-zero mean", "[shallow_net]") {
  // CLT bound 3 / sqrt(k d) with k d = 1e6.
  SeededRng rng(11, "test.init");
  const ShallowNet net = init_gaussian(1000, 1000, Activation::Linear, rng);
  double mean = 0.0;
  for (double w : net.W.storage()) mean += w;
  mean /= static_cast<double>(net.W.size());
  REQUIRE(std::abs(mean) <= 0.004);
}

TEST_CASE("forward computes v' phi(W x)", "[shallow_net]") {
  ShallowNet net;
  net.activation = Activation::Linear;
  net.W = Matrix{{1, 0}, {0, 1}};
  const double a = 1.0 / std::sqrt(2.0);
  net.v = {a, -a};
  const std::vector<double> x{1.0, 0.0};
  REQUIRE(forward(net, x) == Approx(0.7071).margin(1e-6));

  const std::vector<double> wrong{1.0, 0.0, 0.0};
  REQUIRE_THROWS_AS(forward(net, wrong), std::invalid_argument);

  // phi(0) = 0 activations map the origin to zero.
  SeededRng rng(2, "test.fwd");
  for (Activation act : {Activation::Linear, Activation::Tanh}) {
    const ShallowNet n = init_gaussian(6, 4, act, rng);
    const std::vector<double> zero(4, 0.0);
    REQUIRE(forward(n, zero) == Approx(0.0).margin(1e-15));
  }
}

TEST_CASE("tanh forward is odd in the input", "[shallow_net]") {
  SeededRng rng(3, "test.fwd");
  const ShallowNet net = init_gaussian(8, 5, Activation::Tanh, rng);
  std::vector<double> x(5), neg(5);
  for (std::size_t i = 0; i < 5; ++i) {
    x[i] = rng.normal();
    neg[i] = -x[i];
  }
  REQUIRE(forward(net, neg) == Approx(-forward(net, x)).margin(1e-12));
  ShallowNet flipped = net;
  for (double& w : flipped.W.storage()) w = -w;
  REQUIRE(forward(flipped, x) == Approx(-forward(net, x)).margin(1e-12));
}

TEST_CASE("linear activation makes forward linear in W", "[shallow_net]") {
  SeededRng rng(4, "test.fwd");
  const ShallowNet n1 = init_gaussian(6, 4, Activation::Linear, rng);
  ShallowNet n2 = n1;
  for (double& w : n2.W.storage()) w = rng.normal();
  ShallowNet sum = n1;
  for (std::size_t i = 0; i < sum.W.size(); ++i)
    sum.W.storage()[i] = n1.W.storage()[i] + n2.W.storage()[i];
  std::vector<double> x(4);
  for (double& v : x) v = rng.normal();
  REQUIRE(forward(sum, x) ==
          Approx(forward(n1, x) + forward(n2, x)).margin(1e-10));
}

TEST_CASE("quadratic_grad zero at interpolation and linear in residual",
          "[shallow_net]") {
  SeededRng rng(5, "test.grad");
  const ShallowNet net = init_gaussian(8, 4, Activation::Softplus, rng);
  Matrix X(3, 4);
  for (double& v : X.storage()) v = rng.normal();
  const std::vector<double> fit = forward_batch(net, X);

  const Matrix zero = quadratic_grad(net, X, fit);
  for (double g : zero.storage()) REQUIRE(g == Approx(0.0).margin(1e-14));

  // Doubling every residual doubles the gradient.
  std::vector<double> labels(3), labels2(3);
  for (std::size_t i = 0; i < 3; ++i) {
    const double r = rng.normal();
    labels[i] = fit[i] - r;
    labels2[i] = fit[i] - 2.0 * r;
  }
  const Matrix g1 = quadratic_grad(net, X, labels);
  const Matrix g2 = quadratic_grad(net, X, labels2);
  for (std::size_t i = 0; i < g1.size(); ++i)
    REQUIRE(g2.storage()[i] == Approx(2.0 * g1.storage()[i]).margin(1e-10));
}

TEST_CASE("quadratic_grad matches finite differences on every activation",
          "[shallow_net]") {
  SeededRng rng(6, "test.grad");
  for (Activation act : {Activation::Linear, Activation::Tanh,
                         Activation::Sigmoid, Activation::Softplus}) {
    const std::size_t k = 6, d = 4, n = 3;
    const ShallowNet net = init_gaussian(k, d, act, rng);
    Matrix X(n, d);
    for (double& v : X.storage()) v = rng.normal();
    std::vector<double> labels(n);
    for (double& v : labels) v = rng.normal();

    const Matrix g = quadratic_grad(net, X, labels);
    auto loss = [&](std::span<const double> w) {
      ShallowNet probe = net;
      std::copy(w.begin(), w.end(), probe.W.storage().begin());
      const std::vector<double> f = forward_batch(probe, X);
      double L = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        L += 0.5 * (f[i] - labels[i]) * (f[i] - labels[i]);
      return L;
    };
    const std::vector<double> fd =
        finite_diff_grad(loss, net.W.storage(), 1e-5);
    REQUIRE(rel_err(g.storage(), fd) <= 1e-5);
  }
}

TEST_CASE("gd_step algebra", "[shallow_net]") {
  SeededRng rng(7, "test.step");
  const ShallowNet net = init_gaussian(4, 3, Activation::Softplus, rng);

  const Matrix zero(4, 3);
  REQUIRE(gd_step(net, zero, 0.5).W == net.W);

  const ShallowNet wiped = gd_step(net, net.W, 1.0);
  for (double w : wiped.W.storage()) REQUIRE(w == 0.0);

  Matrix g(4, 3);
  for (double& v : g.storage()) v = rng.normal();
  const ShallowNet twice = gd_step(gd_step(net, g, 0.05), g, 0.05);
  const ShallowNet once = gd_step(net, g, 0.1);
  for (std::size_t i = 0; i < once.W.size(); ++i)
    REQUIRE(twice.W.storage()[i] ==
            Approx(once.W.storage()[i]).margin(1e-14));

  REQUIRE_THROWS_AS(gd_step(net, g, 0.0), std::invalid_argument);
  REQUIRE(gd_step(net, g, 0.1).v == net.v);
}

TEST_CASE("jacobian collapses to X for the trivial linear net",
          "[shallow_net]") {
  ShallowNet net;
  net.activation = Activation::Linear;
  net.W = Matrix(1, 3);
  net.v = {1.0};
  Matrix X{{1, 2, 3}, {4, 5, 6}};
  const Matrix J = jacobian(net, X);
  REQUIRE(J == X);
}

TEST_CASE("jacobian is consistent with quadratic_grad", "[shallow_net]") {
  SeededRng rng(8, "test.jac");
  const std::size_t k = 6, d = 4, n = 5;
  const ShallowNet net = init_gaussian(k, d, Activation::Softplus, rng);
  Matrix X(n, d);
  for (double& v : X.storage()) v = rng.normal();
  std::vector<double> labels(n);
  for (double& v : labels) v = rng.normal();

  const std::vector<double> f = forward_batch(net, X);
  const Matrix J = jacobian(net, X);
  Matrix from_j(k, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = f[i] - labels[i];
    for (std::size_t c = 0; c < k * d; ++c)
      from_j.storage()[c] += r * J(i, c);
  }
  const Matrix g = quadratic_grad(net, X, labels);
  for (std::size_t i = 0; i < g.size(); ++i)
    REQUIRE(from_j.storage()[i] == Approx(g.storage()[i]).margin(1e-10));
}

TEST_CASE("duplicate inputs duplicate jacobian rows and cap the rank",
          "[shallow_net]") {
  SeededRng rng(9, "test.jac");
  const std::size_t k = 8, d = 5, K = 3;
  const ShallowNet net = init_gaussian(k, d, Activation::Softplus, rng);
  Matrix centers(K, d);
  for (double& v : centers.storage()) v = rng.normal();
  Matrix X(12, d);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < d; ++j) X(i, j) = centers(i % K, j);

  const Matrix J = jacobian(net, X);
  for (std::size_t i = K; i < 12; ++i)
    for (std::size_t c = 0; c < k * d; ++c) REQUIRE(J(i, c) == J(i - K, c));
  const std::vector<double> sv = singular_values(J);
  REQUIRE(sv[K] <= 1e-10 * sv[0]);
}

TEST_CASE("jacobian row norms respect the activation bound", "[shallow_net]") {
  SeededRng rng(10, "test.jac");
  for (Activation act : {Activation::Tanh, Activation::Softplus}) {
    const ShallowNet net = init_gaussian(16, 6, act, rng);
    Matrix X(4, 6);
    for (std::size_t i = 0; i < 4; ++i) {
      double n2 = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        X(i, j) = rng.normal();
        n2 += X(i, j) * X(i, j);
      }
      for (std::size_t j = 0; j < 6; ++j) X(i, j) /= std::sqrt(n2);
    }
    const Matrix J = jacobian(net, X);
    const double gamma = activation_spec(act).gamma_bound;
    for (std::size_t i = 0; i < 4; ++i)
      REQUIRE(norm2(J.row(i)) <= gamma + 1e-12);
  }
}

TEST_CASE("activation derivative bounds hold on a grid", "[shallow_net]") {
  for (Activation act : {Activation::Linear, Activation::Tanh,
                         Activation::Sigmoid, Activation::Softplus}) {
    const ActivationSpec& spec = activation_spec(act);
    REQUIRE(spec.gamma_bound >= 1.0);
    REQUIRE(std::abs(spec.phi(0.0)) <= spec.gamma_bound);
    for (double z = -20.0; z <= 20.0; z += 0.05) {
      REQUIRE(std::abs(spec.dphi(z)) <= spec.gamma_bound + 1e-12);
      REQUIRE(std::abs(spec.d2phi(z)) <= spec.gamma_bound + 1e-12);
    }
  }
}

TEST_CASE("checkpoint round-trip is bit exact", "[shallow_net]") {
  SeededRng rng(12, "test.ckpt");
  const ShallowNet net = init_gaussian(6, 4, Activation::Sigmoid, rng);
  std::ostringstream os;
  save_checkpoint(net, os);
  std::istringstream is(os.str());
  const ShallowNet back = load_checkpoint(is);
  REQUIRE(back.W == net.W);
  REQUIRE(back.v == net.v);
  REQUIRE(back.activation == net.activation);

  std::ostringstream os2;
  save_checkpoint(back, os2);
  REQUIRE(os.str() == os2.str());
}
