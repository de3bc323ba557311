#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "sane/errors.hpp"
#include "sane/matrix.hpp"
#include "sane/rng.hpp"

namespace sane {

// Probability vector over a finite key set: nonnegative entries summing to 1
// within 1e-12. Constructed checked; every producer in this library keeps the
// invariant by normalizing explicitly.
class ProbVector {
public:
  ProbVector() = default;

  explicit ProbVector(std::vector<double> entries)
      : entries_(std::move(entries)) {
    double sum = 0.0;
    for (double p : entries_) {
      if (!(p >= 0.0))
        throw std::invalid_argument("ProbVector: negative or NaN entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw std::invalid_argument("ProbVector: entries must sum to 1");
  }

  static ProbVector one_hot(std::size_t size, std::size_t index) {
    std::vector<double> e(size, 0.0);
    e.at(index) = 1.0;
    return ProbVector(std::move(e));
  }

  std::size_t size() const { return entries_.size(); }
  double operator[](std::size_t i) const { return entries_[i]; }
  const std::vector<double>& entries() const { return entries_; }
  std::span<const double> span() const { return entries_; }

  double max_entry() const {
    return *std::max_element(entries_.begin(), entries_.end());
  }

private:
  std::vector<double> entries_;
};

// softmax with temperature: exp(s_i/tau) / sum_l exp(s_l/tau), max-shifted.
inline ProbVector softmax_temp(std::span<const double> scores, double tau) {
  if (scores.empty())
    throw std::invalid_argument("softmax_temp: empty score vector");
  if (!(tau > 0.0))
    throw std::invalid_argument("softmax_temp: temperature must be positive");
  for (double s : scores)
    if (!std::isfinite(s))
      throw std::invalid_argument("softmax_temp: non-finite score");

  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp((scores[i] - m) / tau);
    z += out[i];
  }
  for (double& p : out) p /= z;
  return ProbVector(std::move(out));
}

inline double cosine_similarity(std::span<const double> a,
                                std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: length mismatch");
  if (a.empty()) throw std::invalid_argument("cosine_similarity: empty input");
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0)
    throw DegenerateInputError("cosine_similarity: zero-norm input");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

namespace detail {

// Cyclic Jacobi rotations; returns the eigenvalues of a symmetric matrix.
// Dense, O(n^3) per sweep, fine for the desk-scale matrices used here.
inline std::vector<double> jacobi_eigenvalues(Matrix a,
                                              std::size_t max_sweeps) {
  const std::size_t n = a.rows();
  if (n == 0) throw std::invalid_argument("jacobi_eigenvalues: empty matrix");
  double frob = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) frob += a(i, j) * a(i, j);
  frob = std::sqrt(frob);
  const double tol = 1e-14 * std::max(frob, 1e-300);

  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (std::sqrt(2.0 * off) <= tol) {
      std::vector<double> eig(n);
      for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
      return eig;
    }
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= tol / static_cast<double>(n)) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a(i, p), aiq = a(i, q);
          a(i, p) = c * aip - s * aiq;
          a(i, q) = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double api = a(p, i), aqi = a(q, i);
          a(p, i) = c * api - s * aqi;
          a(q, i) = s * api + c * aqi;
        }
      }
    }
  }
  throw NumericFailureError("jacobi_eigenvalues: no convergence within sweep cap");
}

}  // namespace detail

// Smallest eigenvalue of a symmetric matrix. Input must be symmetric within
// 1e-10 (absolute); it is symmetrized exactly before iterating.
inline double smallest_eigenvalue(const Matrix& a) {
  if (a.rows() != a.cols())
    throw std::invalid_argument("smallest_eigenvalue: matrix not square");
  if (a.rows() == 0)
    throw std::invalid_argument("smallest_eigenvalue: empty matrix");
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-10)
        throw std::invalid_argument("smallest_eigenvalue: matrix not symmetric");

  Matrix w = a;
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = i + 1; j < w.cols(); ++j) {
      const double m = 0.5 * (w(i, j) + w(j, i));
      w(i, j) = m;
      w(j, i) = m;
    }
  const std::vector<double> eig = detail::jacobi_eigenvalues(std::move(w), 10000);
  return *std::min_element(eig.begin(), eig.end());
}

// Singular values in descending order, length min(rows, cols). One-sided
// Jacobi on the taller orientation; accurate for tiny singular values, which
// the rank certificates downstream rely on.
inline std::vector<double> singular_values(const Matrix& a) {
  if (a.rows() == 0 || a.cols() == 0)
    throw std::invalid_argument("singular_values: empty matrix");
  if (!a.all_finite())
    throw std::invalid_argument("singular_values: non-finite entry");

  // Work on columns of the taller orientation.
  const bool transpose = a.rows() < a.cols();
  const std::size_t m = transpose ? a.cols() : a.rows();
  const std::size_t p = transpose ? a.rows() : a.cols();
  std::vector<std::vector<double>> col(p, std::vector<double>(m));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (transpose)
        col[i][j] = a(i, j);
      else
        col[j][i] = a(i, j);
    }

  const double tol = 1e-15;
  const std::size_t max_sweeps = 10000;
  bool converged = false;
  for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t i = 0; i + 1 < p; ++i) {
      for (std::size_t j = i + 1; j < p; ++j) {
        const double aii = dot(col[i], col[i]);
        const double ajj = dot(col[j], col[j]);
        const double aij = dot(col[i], col[j]);
        if (aii == 0.0 || ajj == 0.0) continue;
        if (std::abs(aij) <= tol * std::sqrt(aii * ajj)) continue;
        converged = false;
        const double zeta = (ajj - aii) / (2.0 * aij);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(zeta * zeta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        double* ci = col[i].data();
        double* cj = col[j].data();
        for (std::size_t r = 0; r < m; ++r) {
          const double vi = ci[r], vj = cj[r];
          ci[r] = c * vi - s * vj;
          cj[r] = s * vi + c * vj;
        }
      }
    }
  }
  if (!converged)
    throw NumericFailureError("singular_values: no convergence within sweep cap");

  std::vector<double> sv(p);
  for (std::size_t j = 0; j < p; ++j) sv[j] = norm2(col[j]);
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

// One draw from the symmetric Beta(kappa, kappa) distribution.
inline double sample_beta(double kappa, SeededRng& rng) {
  if (!(kappa > 0.0))
    throw std::invalid_argument("sample_beta: kappa must be positive");
  const double g1 = rng.gamma(kappa);
  const double g2 = rng.gamma(kappa);
  const double s = g1 + g2;
  if (s == 0.0) return 0.5;  // both draws underflowed; measure-zero event
  return g1 / s;
}

// Central-difference gradient oracle used by the gradient-check tests.
inline std::vector<double> finite_diff_grad(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> point, double h) {
  if (!(h > 0.0))
    throw std::invalid_argument("finite_diff_grad: step must be positive");
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericFailureError("finite_diff_grad: non-finite function value");
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

// Spearman rank correlation; average ranks on ties.
inline double spearman_correlation(std::span<const double> a,
                                   std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("spearman_correlation: need two equal-length series");
  auto ranks = [](std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> ra = ranks(a);
  const std::vector<double> rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0)
    throw DegenerateInputError("spearman_correlation: constant series");
  return cov / std::sqrt(va * vb);
}

}  // namespace sane
