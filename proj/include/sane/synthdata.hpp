#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sane/errors.hpp"
#include "sane/matrix.hpp"
#include "sane/rng.hpp"

namespace sane {

// K unit-norm cluster centers with scalar class values on a delta-spaced grid.
struct CenterSet {
  Matrix C;                         // K x d, unit rows
  std::vector<double> class_values; // gamma per center, in [-1, 1]
  std::vector<int> class_index;     // 0-based, in [0, Kbar)
  std::vector<double> class_grid;   // the Kbar distinct values, ascending

  std::size_t num_centers() const { return C.rows(); }
  std::size_t dim() const { return C.cols(); }
  std::size_t num_classes() const { return class_grid.size(); }
};

// Corrupted clusterable dataset: unit crops within an eps-cap of their
// center, per-center counts in [c_l n/K, c_u n/K], and at most
// floor(rho * n_i) wrong labels per center (exactly that many by
// construction, so tests are deterministic).
struct CropDataset {
  Matrix X;                        // n x d, unit rows
  std::vector<int> center_of;      // 0-based center index per crop
  std::vector<double> y_star;      // true class values
  std::vector<double> y;           // possibly corrupted class values
  std::vector<int> per_center_counts;
  double epsilon = 0.0;
  double rho = 0.0;

  std::size_t num_crops() const { return X.rows(); }
  std::size_t dim() const { return X.cols(); }

  std::vector<std::vector<int>> crops_by_center() const {
    std::vector<std::vector<int>> by(per_center_counts.size());
    for (std::size_t i = 0; i < center_of.size(); ++i)
      by[static_cast<std::size_t>(center_of[i])].push_back(static_cast<int>(i));
    return by;
  }
};

struct PositivePairBatch {
  std::vector<int> queries;
  std::vector<int> positives;

  std::size_t size() const { return queries.size(); }
};

struct DatasetParams {
  std::size_t K = 4;
  std::size_t Kbar = 2;
  std::size_t d = 16;
  std::size_t n = 200;
  double eps = 0.0;
  double delta = 1.8;
  double c_l = 0.5;
  double c_u = 2.0;
};

namespace detail {

inline void sample_unit_vector(std::span<double> out, SeededRng& rng) {
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& x : out) {
      x = rng.normal();
      n2 += x * x;
    }
  } while (n2 == 0.0);
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : out) x *= inv;
}

inline double row_distance(std::span<const double> a,
                           std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return std::sqrt(s);
}

}  // namespace detail

// One unit crop within the eps-cap of a unit center: Gaussian tangent
// direction, uniform radius in [0, eps], renormalized to the sphere.
// eps = 0 returns the center verbatim (bit-exact, no rng draws).
inline std::vector<double> sample_crop_around(std::span<const double> center,
                                              double eps, SeededRng& rng) {
  std::vector<double> x(center.begin(), center.end());
  if (eps == 0.0) return x;
  const std::size_t d = center.size();
  std::vector<double> g(d);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    double tan_n2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) g[i] = rng.normal();
    const double proj = dot(g, center);
    for (std::size_t i = 0; i < d; ++i) {
      g[i] -= proj * center[i];
      tan_n2 += g[i] * g[i];
    }
    if (tan_n2 == 0.0) continue;
    const double r = eps * rng.uniform();
    const double scale = r / std::sqrt(tan_n2);
    double n2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      x[i] = center[i] + scale * g[i];
      n2 += x[i] * x[i];
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (double& v : x) v *= inv;
    if (detail::row_distance(x, center) <= eps) return x;
  }
  throw GenerationFailureError("sample_crop_around: cap sampling failed");
}

// Checks every structural invariant of a (CenterSet, CropDataset) pair and
// throws on the first violation. Called after generation, corruption and
// import.
inline void validate_dataset(const CenterSet& centers, const CropDataset& data) {
  const std::size_t K = centers.num_centers();
  const std::size_t n = data.num_crops();
  if (centers.class_values.size() != K || centers.class_index.size() != K)
    throw std::invalid_argument("dataset: center field sizes disagree");
  if (data.center_of.size() != n || data.y_star.size() != n ||
      data.y.size() != n || data.per_center_counts.size() != K)
    throw std::invalid_argument("dataset: crop field sizes disagree");

  for (std::size_t i = 0; i < K; ++i) {
    if (std::abs(norm2(centers.C.row(i)) - 1.0) > 1e-12)
      throw std::invalid_argument("dataset: center not unit norm");
    for (std::size_t j = i + 1; j < K; ++j)
      if (detail::row_distance(centers.C.row(i), centers.C.row(j)) <
          2.0 * data.epsilon)
        throw std::invalid_argument("dataset: centers closer than 2*eps");
  }
  for (std::size_t a = 0; a < centers.class_grid.size(); ++a) {
    if (std::abs(centers.class_grid[a]) > 1.0 + 1e-12)
      throw std::invalid_argument("dataset: class value outside [-1, 1]");
    if (a > 0 && !(centers.class_grid[a] > centers.class_grid[a - 1]))
      throw std::invalid_argument("dataset: class grid not strictly ascending");
  }

  std::vector<int> counts(K, 0);
  std::vector<int> wrong(K, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = data.center_of[i];
    if (c < 0 || static_cast<std::size_t>(c) >= K)
      throw std::invalid_argument("dataset: center index out of range");
    ++counts[static_cast<std::size_t>(c)];
    if (std::abs(norm2(data.X.row(i)) - 1.0) > 1e-12)
      throw std::invalid_argument("dataset: crop not unit norm");
    if (detail::row_distance(data.X.row(i),
                             centers.C.row(static_cast<std::size_t>(c))) >
        data.epsilon + 1e-12)
      throw std::invalid_argument("dataset: crop outside eps-cap");
    if (data.y_star[i] != centers.class_values[static_cast<std::size_t>(c)])
      throw std::invalid_argument("dataset: y_star disagrees with center class");
    const bool on_grid =
        std::find(centers.class_grid.begin(), centers.class_grid.end(),
                  data.y[i]) != centers.class_grid.end();
    if (!on_grid)
      throw std::invalid_argument("dataset: label off the class grid");
    if (data.y[i] != data.y_star[i]) ++wrong[static_cast<std::size_t>(c)];
  }
  for (std::size_t c = 0; c < K; ++c) {
    if (counts[c] != data.per_center_counts[c])
      throw std::invalid_argument("dataset: per-center count mismatch");
    const int cap = static_cast<int>(
        std::floor(data.rho * static_cast<double>(counts[c])));
    if (wrong[c] > cap)
      throw std::invalid_argument("dataset: too many corrupted labels in center");
  }
}

// Generates an uncorrupted (rho = 0) clusterable dataset matching the
// corrupted-dataset model; corruption is a separate step.
inline std::pair<CenterSet, CropDataset> generate_dataset(
    const DatasetParams& p, SeededRng& rng) {
  if (p.Kbar < 2 || p.K < p.Kbar)
    throw std::invalid_argument("generate_dataset: need K >= Kbar >= 2");
  if (!(p.delta > 0.0))
    throw std::invalid_argument("generate_dataset: delta must be positive");
  if (p.delta > 2.0 / static_cast<double>(p.Kbar - 1) + 1e-15)
    throw std::invalid_argument(
        "generate_dataset: delta too large for Kbar values in [-1, 1]");
  if (!(p.c_l <= 1.0 && 1.0 <= p.c_u))
    throw std::invalid_argument("generate_dataset: need c_l <= 1 <= c_u");
  if (p.eps < 0.0)
    throw std::invalid_argument("generate_dataset: eps must be nonnegative");
  if (p.d < 2) throw std::invalid_argument("generate_dataset: need d >= 2");

  // Centers: rejection-sampled on the sphere until pairwise separation
  // reaches max(2*eps, 0.1). The floor keeps lambda(C) away from zero when
  // eps = 0.
  const double min_sep = std::max(2.0 * p.eps, 0.1);
  CenterSet centers;
  centers.C = Matrix(p.K, p.d);
  std::size_t rounds = 0;
  for (std::size_t i = 0; i < p.K; ++i) {
    for (;;) {
      if (++rounds > 10000)
        throw GenerationFailureError(
            "generate_dataset: center separation infeasible");
      detail::sample_unit_vector(centers.C.row(i), rng);
      bool ok = true;
      for (std::size_t j = 0; j < i; ++j)
        if (detail::row_distance(centers.C.row(i), centers.C.row(j)) < min_sep) {
          ok = false;
          break;
        }
      if (ok) break;
    }
  }

  // Class grid: Kbar values spaced exactly delta, centered at zero. Round-
  // robin assignment over centers.
  centers.class_grid.resize(p.Kbar);
  for (std::size_t t = 0; t < p.Kbar; ++t)
    centers.class_grid[t] =
        (static_cast<double>(t) - static_cast<double>(p.Kbar - 1) / 2.0) *
        p.delta;
  centers.class_index.resize(p.K);
  centers.class_values.resize(p.K);
  for (std::size_t i = 0; i < p.K; ++i) {
    centers.class_index[i] = static_cast<int>(i % p.Kbar);
    centers.class_values[i] = centers.class_grid[i % p.Kbar];
  }

  // Per-center counts: uniform in [ceil(c_l n/K), floor(c_u n/K)], then
  // random increments/decrements until they sum to n.
  const double nk = static_cast<double>(p.n) / static_cast<double>(p.K);
  const long lo = static_cast<long>(std::ceil(p.c_l * nk));
  const long hi = static_cast<long>(std::floor(p.c_u * nk));
  if (lo > hi || lo * static_cast<long>(p.K) > static_cast<long>(p.n) ||
      hi * static_cast<long>(p.K) < static_cast<long>(p.n))
    throw std::invalid_argument("generate_dataset: count range infeasible");
  std::vector<long> counts(p.K);
  long total = 0;
  for (std::size_t i = 0; i < p.K; ++i) {
    counts[i] = lo + static_cast<long>(
                         rng.uniform_below(static_cast<std::uint64_t>(hi - lo + 1)));
    total += counts[i];
  }
  while (total != static_cast<long>(p.n)) {
    const std::size_t i =
        static_cast<std::size_t>(rng.uniform_below(p.K));
    if (total > static_cast<long>(p.n) && counts[i] > lo) {
      --counts[i];
      --total;
    } else if (total < static_cast<long>(p.n) && counts[i] < hi) {
      ++counts[i];
      ++total;
    }
  }

  CropDataset data;
  data.X = Matrix(p.n, p.d);
  data.center_of.resize(p.n);
  data.y_star.resize(p.n);
  data.y.resize(p.n);
  data.per_center_counts.assign(p.K, 0);
  data.epsilon = p.eps;
  data.rho = 0.0;
  std::size_t row = 0;
  for (std::size_t c = 0; c < p.K; ++c) {
    data.per_center_counts[c] = static_cast<int>(counts[c]);
    for (long j = 0; j < counts[c]; ++j, ++row) {
      const std::vector<double> crop =
          sample_crop_around(centers.C.row(c), p.eps, rng);
      std::copy(crop.begin(), crop.end(), data.X.row(row).begin());
      data.center_of[row] = static_cast<int>(c);
      data.y_star[row] = centers.class_values[c];
      data.y[row] = centers.class_values[c];
    }
  }

  validate_dataset(centers, data);
  return {std::move(centers), std::move(data)};
}

// Reassigns exactly floor(rho * n_i) labels per center to a uniformly chosen
// wrong class value. Requires an uncorrupted input.
inline CropDataset corrupt_labels(const CenterSet& centers,
                                  const CropDataset& input, double rho,
                                  SeededRng& rng) {
  if (!(rho >= 0.0 && rho <= 1.0))
    throw std::invalid_argument("corrupt_labels: rho must be in [0, 1]");
  if (input.y != input.y_star)
    throw std::invalid_argument("corrupt_labels: input already corrupted");

  CropDataset out = input;
  out.rho = rho;
  const auto by_center = input.crops_by_center();
  for (const std::vector<int>& members : by_center) {
    const std::size_t m = static_cast<std::size_t>(
        std::floor(rho * static_cast<double>(members.size())));
    // Partial Fisher-Yates: the first m entries become the corrupted set.
    std::vector<int> pool = members;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t j =
          i + static_cast<std::size_t>(rng.uniform_below(pool.size() - i));
      std::swap(pool[i], pool[j]);
      const int crop = pool[i];
      std::vector<double> wrong;
      for (double g : centers.class_grid)
        if (g != out.y_star[static_cast<std::size_t>(crop)]) wrong.push_back(g);
      out.y[static_cast<std::size_t>(crop)] =
          wrong[rng.uniform_below(wrong.size())];
    }
  }
  validate_dataset(centers, out);
  return out;
}

// s positive pairs, each drawn from one uniformly chosen center: two distinct
// crops of that center, or the same crop twice when the center holds a single
// crop and eps = 0.
inline PositivePairBatch make_positive_pairs(const CropDataset& data,
                                             std::size_t s, SeededRng& rng) {
  if (s == 0) throw std::invalid_argument("make_positive_pairs: empty batch");
  const auto by_center = data.crops_by_center();
  PositivePairBatch batch;
  batch.queries.reserve(s);
  batch.positives.reserve(s);
  for (std::size_t i = 0; i < s; ++i) {
    const std::size_t c =
        static_cast<std::size_t>(rng.uniform_below(by_center.size()));
    const std::vector<int>& members = by_center[c];
    if (members.size() >= 2) {
      const std::size_t a =
          static_cast<std::size_t>(rng.uniform_below(members.size()));
      std::size_t b =
          static_cast<std::size_t>(rng.uniform_below(members.size() - 1));
      if (b >= a) ++b;
      batch.queries.push_back(members[a]);
      batch.positives.push_back(members[b]);
    } else if (members.size() == 1 && data.epsilon == 0.0) {
      batch.queries.push_back(members[0]);
      batch.positives.push_back(members[0]);
    } else {
      throw PairingFailureError(
          "make_positive_pairs: center cannot supply a positive pair");
    }
  }
  return batch;
}

namespace detail {

inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Flat text export: header `K Kbar d n eps delta rho`, one line per center
// (`gamma class_index c_1..c_d`, 1-based class index), one line per crop
// (`center_of y_star y x_1..x_d`, 1-based center index). 17 significant
// digits; round-trips bit-exactly.
inline void export_dataset(const CenterSet& centers, const CropDataset& data,
                           std::ostream& os) {
  os << centers.num_centers() << ' ' << centers.num_classes() << ' '
     << centers.dim() << ' ' << data.num_crops() << ' '
     << detail::fmt17(data.epsilon) << ' '
     << detail::fmt17(centers.class_grid.size() > 1
                          ? centers.class_grid[1] - centers.class_grid[0]
                          : 0.0)
     << ' ' << detail::fmt17(data.rho) << '\n';
  for (std::size_t i = 0; i < centers.num_centers(); ++i) {
    os << detail::fmt17(centers.class_values[i]) << ' '
       << centers.class_index[i] + 1;
    for (double v : centers.C.row(i)) os << ' ' << detail::fmt17(v);
    os << '\n';
  }
  for (std::size_t i = 0; i < data.num_crops(); ++i) {
    os << data.center_of[i] + 1 << ' ' << detail::fmt17(data.y_star[i]) << ' '
       << detail::fmt17(data.y[i]);
    for (double v : data.X.row(i)) os << ' ' << detail::fmt17(v);
    os << '\n';
  }
}

inline std::pair<CenterSet, CropDataset> import_dataset(std::istream& is) {
  std::size_t K = 0, Kbar = 0, d = 0, n = 0;
  double eps = 0.0, delta = 0.0, rho = 0.0;
  if (!(is >> K >> Kbar >> d >> n >> eps >> delta >> rho))
    throw IoError("import_dataset: bad header");
  CenterSet centers;
  centers.C = Matrix(K, d);
  centers.class_values.resize(K);
  centers.class_index.resize(K);
  for (std::size_t i = 0; i < K; ++i) {
    int cls = 0;
    if (!(is >> centers.class_values[i] >> cls))
      throw IoError("import_dataset: bad center line");
    centers.class_index[i] = cls - 1;
    for (std::size_t j = 0; j < d; ++j)
      if (!(is >> centers.C(i, j))) throw IoError("import_dataset: bad center row");
  }
  centers.class_grid.resize(Kbar);
  for (std::size_t t = 0; t < Kbar; ++t)
    centers.class_grid[t] =
        (static_cast<double>(t) - static_cast<double>(Kbar - 1) / 2.0) * delta;
  // Prefer exact stored values over the reconstruction when they are present.
  for (std::size_t i = 0; i < K; ++i)
    centers.class_grid[static_cast<std::size_t>(centers.class_index[i])] =
        centers.class_values[i];

  CropDataset data;
  data.X = Matrix(n, d);
  data.center_of.resize(n);
  data.y_star.resize(n);
  data.y.resize(n);
  data.per_center_counts.assign(K, 0);
  data.epsilon = eps;
  data.rho = rho;
  for (std::size_t i = 0; i < n; ++i) {
    int c = 0;
    if (!(is >> c >> data.y_star[i] >> data.y[i]))
      throw IoError("import_dataset: bad crop line");
    data.center_of[i] = c - 1;
    ++data.per_center_counts[static_cast<std::size_t>(c - 1)];
    for (std::size_t j = 0; j < d; ++j)
      if (!(is >> data.X(i, j))) throw IoError("import_dataset: bad crop row");
  }
  validate_dataset(centers, data);
  return {std::move(centers), std::move(data)};
}

}  // namespace sane
