#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "sane/numerics.hpp"

using Catch::Approx;
using namespace sane;

TEST_CASE("softmax_temp matches closed forms", "[numerics]") {
  {
    const std::vector<double> s{1.0, 1.0};
    const ProbVector p = softmax_temp(s, 0.2);
    REQUIRE(p[0] == Approx(0.5).margin(1e-15));
    REQUIRE(p[1] == Approx(0.5).margin(1e-15));
  }
  {
    // e / (1 + e)
    const std::vector<double> s{1.0, 0.0};
    const ProbVector p = softmax_temp(s, 1.0);
    REQUIRE(p[0] == Approx(0.7311).margin(1e-4));
    REQUIRE(p[1] == Approx(0.2689).margin(1e-4));
  }
  {
    // e^2 / (1 + e^2)
    const std::vector<double> s{1.0, 0.0};
    const ProbVector p = softmax_temp(s, 0.5);
    REQUIRE(p[0] == Approx(0.8808).margin(1e-4));
    REQUIRE(p[1] == Approx(0.1192).margin(1e-4));
  }
}

TEST_CASE("softmax_temp rejects bad input", "[numerics]") {
  const std::vector<double> s{1.0, 2.0};
  REQUIRE_THROWS_AS(softmax_temp(s, 0.0), std::invalid_argument);
  REQUIRE_THROWS_AS(softmax_temp(s, -1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(softmax_temp(std::vector<double>{}, 1.0),
                    std::invalid_argument);
}

TEST_CASE("softmax_temp sums to one and is overflow-safe", "[numerics]") {
  SeededRng rng(7, "test.softmax");
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(1 + rng.uniform_below(20));
    for (double& v : s) v = 2000.0 * (rng.uniform() - 0.5);
    const ProbVector p = softmax_temp(s, 0.1 + rng.uniform());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += p[i];
    REQUIRE(sum == Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("softmax_temp is permutation equivariant", "[numerics]") {
  const std::vector<double> s{0.3, -1.2, 2.0, 0.0};
  const std::vector<double> rev{0.0, 2.0, -1.2, 0.3};
  const ProbVector p = softmax_temp(s, 0.7);
  const ProbVector pr = softmax_temp(rev, 0.7);
  for (std::size_t i = 0; i < s.size(); ++i)
    REQUIRE(p[i] == Approx(pr[s.size() - 1 - i]).margin(1e-15));
}

TEST_CASE("softmax sharpening equals effective temperature", "[numerics]") {
  // Raising softmax(., tau) outputs to 1/tau' and renormalizing reproduces
  // softmax(., tau * tau'); the refinery relies on this identity.
  SeededRng rng(11, "test.sharpen");
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(5);
    for (double& v : s) v = 4.0 * (rng.uniform() - 0.5);
    const double tau = 0.2 + rng.uniform();
    const double tau_prime = 0.05 + 0.95 * rng.uniform();
    const ProbVector base = softmax_temp(s, tau);
    std::vector<double> sharp(5);
    double z = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      sharp[i] = std::pow(base[i], 1.0 / tau_prime);
      z += sharp[i];
    }
    const ProbVector direct = softmax_temp(s, tau * tau_prime);
    for (std::size_t i = 0; i < 5; ++i)
      REQUIRE(sharp[i] / z == Approx(direct[i]).margin(1e-10));
  }
}

TEST_CASE("cosine_similarity basics", "[numerics]") {
  const std::vector<double> e1{1.0, 0.0};
  const std::vector<double> e2{0.0, 1.0};
  const std::vector<double> ones{1.0, 1.0};
  REQUIRE(cosine_similarity(e1, e1) == Approx(1.0).margin(1e-15));
  REQUIRE(cosine_similarity(e1, e2) == Approx(0.0).margin(1e-15));
  REQUIRE(cosine_similarity(ones, e1) == Approx(0.7071).margin(1e-4));
  const std::vector<double> zero{0.0, 0.0};
  REQUIRE_THROWS_AS(cosine_similarity(zero, e1), DegenerateInputError);
  const std::vector<double> short_v{1.0};
  REQUIRE_THROWS_AS(cosine_similarity(short_v, e1), std::invalid_argument);
}

TEST_CASE("smallest_eigenvalue on known matrices", "[numerics]") {
  Matrix id3{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  REQUIRE(smallest_eigenvalue(id3) == Approx(1.0).margin(1e-12));
  Matrix diag{{2, 0}, {0, 5}};
  REQUIRE(smallest_eigenvalue(diag) == Approx(2.0).margin(1e-12));
  // Characteristic polynomial roots 1 and 3.
  Matrix m{{2, 1}, {1, 2}};
  REQUIRE(smallest_eigenvalue(m) == Approx(1.0).margin(1e-8));
  Matrix asym{{1, 2}, {0, 1}};
  REQUIRE_THROWS_AS(smallest_eigenvalue(asym), std::invalid_argument);
}

TEST_CASE("smallest_eigenvalue lower-bounds Rayleigh quotients", "[numerics]") {
  SeededRng rng(3, "test.rayleigh");
  Matrix a(6, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i; j < 6; ++j) {
      const double v = rng.normal();
      a(i, j) = v;
      a(j, i) = v;
    }
  const double lmin = smallest_eigenvalue(a);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(6);
    for (double& x : v) x = rng.normal();
    const double n2 = dot(v, v);
    double quad = 0.0;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 6; ++j) quad += v[i] * a(i, j) * v[j];
    REQUIRE(lmin <= quad / n2 + 1e-10);
  }
}

TEST_CASE("singular_values on known matrices", "[numerics]") {
  Matrix id2{{1, 0}, {0, 1}};
  const std::vector<double> sv = singular_values(id2);
  REQUIRE(sv.size() == 2);
  REQUIRE(sv[0] == Approx(1.0).margin(1e-12));
  REQUIRE(sv[1] == Approx(1.0).margin(1e-12));

  Matrix rank1{{1, 1}, {1, 1}};
  const std::vector<double> sv1 = singular_values(rank1);
  REQUIRE(sv1[0] == Approx(2.0).margin(1e-8));
  REQUIRE(sv1[1] == Approx(0.0).margin(1e-8));
}

TEST_CASE("singular_values preserve the Frobenius norm", "[numerics]") {
  SeededRng rng(5, "test.svd");
  Matrix a(5, 3);
  double frob2 = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      a(i, j) = rng.normal();
      frob2 += a(i, j) * a(i, j);
    }
  const std::vector<double> sv = singular_values(a);
  REQUIRE(sv.size() == 3);
  double s2 = 0.0;
  for (double s : sv) s2 += s * s;
  REQUIRE(s2 == Approx(frob2).epsilon(1e-8));
  REQUIRE(std::is_sorted(sv.rbegin(), sv.rend()));
}

TEST_CASE("sample_beta support and moments", "[numerics]") {
  SeededRng rng(17, "test.beta");
  for (double kappa : {0.1, 1.0, 2.0, 5.0})
    for (int i = 0; i < 100; ++i) {
      const double x = sample_beta(kappa, rng);
      REQUIRE(x >= 0.0);
      REQUIRE(x <= 1.0);
    }
  REQUIRE_THROWS_AS(sample_beta(0.0, rng), std::invalid_argument);
  REQUIRE_THROWS_AS(sample_beta(-1.0, rng), std::invalid_argument);

  // Beta(1,1) is uniform: mean 1/2.
  SeededRng rng_mean(23, "test.beta.mean");
  double mean = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) mean += sample_beta(1.0, rng_mean);
  mean /= n;
  REQUIRE(mean == Approx(0.5).margin(0.01));

  // Var Beta(k,k) = 1 / (4 (2k + 1)); k = 2 gives 0.05.
  SeededRng rng_var(29, "test.beta.var");
  std::vector<double> draws(n);
  double m = 0.0;
  for (double& x : draws) {
    x = sample_beta(2.0, rng_var);
    m += x;
  }
  m /= n;
  double var = 0.0;
  for (double x : draws) var += (x - m) * (x - m);
  var /= n;
  REQUIRE(var == Approx(0.05).margin(0.005));
}

TEST_CASE("finite_diff_grad matches analytic derivatives", "[numerics]") {
  auto square = [](std::span<const double> w) { return w[0] * w[0]; };
  const std::vector<double> at3{3.0};
  REQUIRE(finite_diff_grad(square, at3, 1e-5)[0] == Approx(6.0).margin(1e-6));

  auto linear = [](std::span<const double> w) { return 3.0 * w[0]; };
  REQUIRE(finite_diff_grad(linear, at3, 1e-5)[0] == Approx(3.0).margin(1e-9));

  auto bad = [](std::span<const double>) {
    return std::numeric_limits<double>::quiet_NaN();
  };
  REQUIRE_THROWS_AS(finite_diff_grad(bad, at3, 1e-5), NumericFailureError);
}

TEST_CASE("seeded rng streams are reproducible and distinct", "[numerics]") {
  SeededRng a(42, "stream.a");
  SeededRng b(42, "stream.a");
  SeededRng c(42, "stream.b");
  bool all_equal_c = true;
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t va = a.next_u64();
    REQUIRE(va == b.next_u64());
    if (va != c.next_u64()) all_equal_c = false;
  }
  REQUIRE_FALSE(all_equal_c);
}

TEST_CASE("spearman correlation on rank patterns", "[numerics]") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{2, 4, 5, 7, 11};
  const std::vector<double> down{5, 4, 3, 2, 1};
  REQUIRE(spearman_correlation(x, up) == Approx(1.0));
  REQUIRE(spearman_correlation(x, down) == Approx(-1.0));
  // One adjacent swap costs 0.1 on five points.
  const std::vector<double> swapped{2, 4, 5, 11, 7};
  REQUIRE(spearman_correlation(x, swapped) == Approx(0.9));
}

TEST_CASE("prob vector validation", "[numerics]") {
  REQUIRE_THROWS_AS(ProbVector(std::vector<double>{0.5, 0.4}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(ProbVector(std::vector<double>{1.2, -0.2}),
                    std::invalid_argument);
  const ProbVector p = ProbVector::one_hot(4, 2);
  REQUIRE(p[2] == 1.0);
  REQUIRE(p[0] == 0.0);
}
