#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sane/contrastive.hpp"
#include "sane/errors.hpp"
#include "sane/matrix.hpp"
#include "sane/numerics.hpp"
#include "sane/refinery.hpp"
#include "sane/rng.hpp"
#include "sane/shallow_net.hpp"
#include "sane/synthdata.hpp"

namespace sane {

// ---------------------------------------------------------------------------
// Spectral diagnostics
// ---------------------------------------------------------------------------

struct CovarianceResult {
  Matrix sigma;       // K x K network covariance
  double lambda_min;  // its smallest eigenvalue
};

// Monte Carlo estimate of Sigma(C) = (C C') .* E_u[phi'(C u) phi'(C u)'] with
// u ~ N(0, I_d), and its minimum eigenvalue.
inline CovarianceResult network_covariance(const Matrix& C, Activation act,
                                           std::size_t n_mc, SeededRng& rng) {
  if (n_mc < 1000)
    throw std::invalid_argument("network_covariance: n_mc must be >= 1000");
  const std::size_t K = C.rows();
  const std::size_t d = C.cols();
  if (K == 0 || d == 0)
    throw std::invalid_argument("network_covariance: empty center matrix");
  const ActivationSpec& spec = activation_spec(act);

  Matrix m(K, K);
  std::vector<double> u(d), g(K);
  for (std::size_t t = 0; t < n_mc; ++t) {
    for (double& v : u) v = rng.normal();
    for (std::size_t i = 0; i < K; ++i) g[i] = spec.dphi(dot(C.row(i), u));
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j) m(i, j) += g[i] * g[j];
  }

  CovarianceResult out;
  out.sigma = Matrix(K, K);
  const double inv = 1.0 / static_cast<double>(n_mc);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < K; ++j)
      out.sigma(i, j) = dot(C.row(i), C.row(j)) * m(i, j) * inv;
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = i + 1; j < K; ++j) {
      const double s = 0.5 * (out.sigma(i, j) + out.sigma(j, i));
      out.sigma(i, j) = s;
      out.sigma(j, i) = s;
    }
  out.lambda_min = smallest_eigenvalue(out.sigma);
  return out;
}

// Projector onto the support subspace S+ (vectors constant within each
// cluster), applied as per-cluster averaging. zeta = n / min cluster size is
// the tight diffusedness constant of this subspace.
class SupportProjector {
public:
  explicit SupportProjector(std::vector<std::vector<int>> clusters,
                            std::size_t n)
      : clusters_(std::move(clusters)), n_(n) {}

  std::size_t dimension() const { return clusters_.size(); }
  std::size_t vector_length() const { return n_; }

  double zeta() const {
    std::size_t min_size = n_;
    for (const auto& c : clusters_) min_size = std::min(min_size, c.size());
    return static_cast<double>(n_) / static_cast<double>(min_size);
  }

  std::vector<double> apply(std::span<const double> v) const {
    if (v.size() != n_)
      throw std::invalid_argument("SupportProjector: length mismatch");
    std::vector<double> out(n_, 0.0);
    for (const auto& cluster : clusters_) {
      double mean = 0.0;
      for (int i : cluster) mean += v[static_cast<std::size_t>(i)];
      mean /= static_cast<double>(cluster.size());
      for (int i : cluster) out[static_cast<std::size_t>(i)] = mean;
    }
    return out;
  }

private:
  std::vector<std::vector<int>> clusters_;
  std::size_t n_;
};

inline SupportProjector support_projector(std::span<const int> center_of) {
  if (center_of.empty())
    throw std::invalid_argument("support_projector: empty assignment");
  int max_c = 0;
  for (int c : center_of) max_c = std::max(max_c, c);
  std::vector<std::vector<int>> clusters(static_cast<std::size_t>(max_c) + 1);
  for (std::size_t i = 0; i < center_of.size(); ++i)
    clusters[static_cast<std::size_t>(center_of[i])].push_back(
        static_cast<int>(i));
  for (const auto& c : clusters)
    if (c.empty())
      throw std::invalid_argument("support_projector: empty cluster");
  return SupportProjector(std::move(clusters), center_of.size());
}

// Orthogonal decomposition of a residual: (|P_{S+} r|, |P_{S-} r|).
inline std::pair<double, double> residual_split(std::span<const double> r,
                                                const SupportProjector& proj) {
  if (r.size() != proj.vector_length())
    throw std::invalid_argument("residual_split: length mismatch");
  const std::vector<double> plus = proj.apply(r);
  double np = 0.0, nm = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    np += plus[i] * plus[i];
    const double rest = r[i] - plus[i];
    nm += rest * rest;
  }
  return {std::sqrt(np), std::sqrt(nm)};
}

struct BimodalityReport {
  std::vector<double> top_singular_values;  // sigma_1 .. sigma_{K+1}
  double ratio = 0.0;                       // sigma_{K+1} / sigma_K
};

// Top of the Jacobian spectrum and the bimodality ratio. At eps = 0 the
// Jacobian has rank <= K (duplicate rows), so sigma_{K+1} collapses.
inline BimodalityReport jacobian_bimodality(const Matrix& J, std::size_t K) {
  if (J.rows() < K + 1)
    throw std::invalid_argument("jacobian_bimodality: need at least K+1 rows");
  const std::vector<double> sv = singular_values(J);
  BimodalityReport out;
  out.top_singular_values.assign(sv.begin(), sv.begin() + static_cast<long>(K + 1));
  out.ratio = sv[K - 1] > 0.0 ? sv[K] / sv[K - 1] : 0.0;
  return out;
}

// Index of the nearest class value; ties break to the lowest index.
inline std::size_t round_to_class(double value, std::span<const double> gamma) {
  if (gamma.empty()) throw std::invalid_argument("round_to_class: empty grid");
  std::size_t best = 0;
  double best_d = std::abs(value - gamma[0]);
  for (std::size_t k = 1; k < gamma.size(); ++k) {
    const double d = std::abs(value - gamma[k]);
    if (d < best_d) {
      best = k;
      best_d = d;
    }
  }
  return best;
}

// Ground-truth soft label for synthetic data: uniform mass over keys sharing
// the query's class.
inline ProbVector true_soft_label(int query_class,
                                  std::span<const int> key_classes) {
  std::size_t m = 0;
  for (int c : key_classes)
    if (c == query_class) ++m;
  if (m == 0)
    throw DegenerateInputError("true_soft_label: no same-class key");
  std::vector<double> out(key_classes.size(), 0.0);
  const double w = 1.0 / static_cast<double>(m);
  for (std::size_t l = 0; l < key_classes.size(); ++l)
    if (key_classes[l] == query_class) out[l] = w;
  return ProbVector(std::move(out));
}

// ---------------------------------------------------------------------------
// Label-recovery experiment (the Theorem-2 testbed)
// ---------------------------------------------------------------------------

struct RecoveryConfig {
  DatasetParams data;
  double rho = 0.05;
  std::size_t k = 1024;
  Activation activation = Activation::Softplus;
  double eta = 0.004;
  std::size_t iters = 3000;
  std::vector<double> alpha;  // length iters + 1
  std::uint64_t seed = 1;
};

inline std::vector<double> alpha_ramp(std::size_t iters, double alpha_max,
                                      std::size_t ramp_iters) {
  std::vector<double> a(iters + 1);
  for (std::size_t t = 0; t <= iters; ++t)
    a[t] = std::min(alpha_max, static_cast<double>(t) /
                                   static_cast<double>(std::max<std::size_t>(
                                       ramp_iters, 1)));
  return a;
}

inline std::vector<double> alpha_constant(std::size_t iters, double value) {
  return std::vector<double>(iters + 1, value);
}

struct RunRecord {
  struct Row {
    std::size_t iter;
    double loss;
    double label_err;            // |y_hat^t - y*| / sqrt(n)
    double pred_err;             // |f(W_t, X) - y*| / sqrt(n)
    double frac_label_correct;   // refined labels rounding to y*
    double frac_pred_correct;    // predictions rounding to y*
    double resid_splus;          // |P_{S+}(f - y_hat)|
    double resid_sminus;         // |P_{S-}(f - y_hat)|
  };
  std::vector<Row> rows;

  // Final-state summary.
  double y_err = 0.0;  // |y - y*| / sqrt(n), fixed per run
  double final_frac_label_correct = 0.0;
  double final_frac_pred_correct = 0.0;
  double fresh_frac_pred_correct = 0.0;  // fresh crops resampled within eps
  double final_label_err = 0.0;
  double final_pred_err = 0.0;
  double frac_fit_corrupted = 0.0;  // corrupted crops whose prediction rounds
                                    // to the corrupted label
};

// Gradient descent on the quadratic loss with scalar-refinery labels
// y_hat^t_i = (1 - alpha_t) y_i + alpha_t f(W_t, positive_i). Rows are
// recorded at iterations 0..T, each describing the state before that
// iteration's step (row T is the final state).
inline RunRecord run_recovery(const RecoveryConfig& cfg) {
  if (cfg.alpha.size() != cfg.iters + 1)
    throw std::invalid_argument("run_recovery: alpha schedule must have iters+1 entries");
  for (double a : cfg.alpha)
    if (!(a >= 0.0 && a <= 1.0))
      throw std::invalid_argument("run_recovery: alpha outside [0, 1]");

  SeededRng rng_data(cfg.seed, "recovery.data");
  SeededRng rng_corrupt(cfg.seed, "recovery.corrupt");
  SeededRng rng_pos(cfg.seed, "recovery.positives");
  SeededRng rng_init(cfg.seed, "recovery.init");
  SeededRng rng_fresh(cfg.seed, "recovery.fresh");

  auto [centers, clean] = generate_dataset(cfg.data, rng_data);
  const CropDataset data = corrupt_labels(centers, clean, cfg.rho, rng_corrupt);
  const std::size_t n = data.num_crops();

  // Fixed positive crop per training crop, sampled once from the same center.
  Matrix positives(n, data.dim());
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> crop = sample_crop_around(
        centers.C.row(static_cast<std::size_t>(data.center_of[i])),
        data.epsilon, rng_pos);
    std::copy(crop.begin(), crop.end(), positives.row(i).begin());
  }
  const bool positives_equal_inputs = positives == data.X;

  ShallowNet net =
      init_gaussian(cfg.k, cfg.data.d, cfg.activation, rng_init);
  const SupportProjector proj = support_projector(data.center_of);

  const double sqrt_n = std::sqrt(static_cast<double>(n));
  RunRecord rec;
  rec.rows.reserve(cfg.iters + 1);
  {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = data.y[i] - data.y_star[i];
      s += d * d;
    }
    rec.y_err = std::sqrt(s) / sqrt_n;
  }

  std::vector<double> yhat(n), resid(n);
  std::vector<std::size_t> true_class(n);
  for (std::size_t i = 0; i < n; ++i)
    true_class[i] = round_to_class(data.y_star[i], centers.class_grid);

  for (std::size_t t = 0; t <= cfg.iters; ++t) {
    const std::vector<double> pred = forward_batch(net, data.X);
    const std::vector<double> pred_pos =
        positives_equal_inputs ? pred : forward_batch(net, positives);
    const double alpha_t = cfg.alpha[t];

    double loss = 0.0, label_err2 = 0.0, pred_err2 = 0.0;
    std::size_t label_ok = 0, pred_ok = 0;
    for (std::size_t i = 0; i < n; ++i) {
      yhat[i] = refine_label_regression(data.y[i], pred_pos[i], alpha_t);
      const double r = pred[i] - yhat[i];
      resid[i] = r;
      loss += 0.5 * r * r;
      const double le = yhat[i] - data.y_star[i];
      label_err2 += le * le;
      const double pe = pred[i] - data.y_star[i];
      pred_err2 += pe * pe;
      if (round_to_class(yhat[i], centers.class_grid) == true_class[i])
        ++label_ok;
      if (round_to_class(pred[i], centers.class_grid) == true_class[i])
        ++pred_ok;
    }
    const auto [rp, rm] = residual_split(resid, proj);
    rec.rows.push_back({t, loss, std::sqrt(label_err2) / sqrt_n,
                        std::sqrt(pred_err2) / sqrt_n,
                        static_cast<double>(label_ok) / static_cast<double>(n),
                        static_cast<double>(pred_ok) / static_cast<double>(n),
                        rp, rm});
    if (!(loss <= 1e6))
      throw DivergenceError("run_recovery: loss exceeded 1e6", t);
    if (t == cfg.iters) break;

    const Matrix grad = quadratic_grad(net, data.X, yhat);
    net = gd_step(net, grad, cfg.eta);
  }

  const RunRecord::Row& last = rec.rows.back();
  rec.final_frac_label_correct = last.frac_label_correct;
  rec.final_frac_pred_correct = last.frac_pred_correct;
  rec.final_label_err = last.label_err;
  rec.final_pred_err = last.pred_err;

  // Fraction of corrupted crops whose final prediction rounds to the wrong
  // label they were assigned (memorization probe).
  {
    const std::vector<double> pred = forward_batch(net, data.X);
    std::size_t corrupted = 0, fitted = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (data.y[i] == data.y_star[i]) continue;
      ++corrupted;
      if (round_to_class(pred[i], centers.class_grid) ==
          round_to_class(data.y[i], centers.class_grid))
        ++fitted;
    }
    rec.frac_fit_corrupted =
        corrupted == 0
            ? 0.0
            : static_cast<double>(fitted) / static_cast<double>(corrupted);
  }

  // Fresh crops resampled within eps of each training crop's center.
  {
    std::size_t ok = 0;
    std::vector<double> fresh(data.dim());
    for (std::size_t i = 0; i < n; ++i) {
      const std::vector<double> crop = sample_crop_around(
          centers.C.row(static_cast<std::size_t>(data.center_of[i])),
          data.epsilon, rng_fresh);
      const double f = forward(net, crop);
      if (round_to_class(f, centers.class_grid) == true_class[i]) ++ok;
    }
    rec.fresh_frac_pred_correct =
        static_cast<double>(ok) / static_cast<double>(n);
  }

  return rec;
}

// ---------------------------------------------------------------------------
// Generalization-gap experiment (the Theorem-1 testbed)
// ---------------------------------------------------------------------------

struct GapConfig {
  DatasetParams data{8, 4, 16, 400, 0.1, 0.5, 0.5, 2.0};
  std::size_t hidden = 64;
  std::size_t feature = 8;
  Activation activation = Activation::Softplus;
  std::size_t s = 20;       // batch size; rho * s integral on the grid
  std::size_t b = 64;       // queue capacity
  double tau = 0.2;
  double iota = 0.05;
  double eta = 1.0;
  std::size_t steps = 1500;
  std::size_t eval_batches = 50;
  std::uint64_t seed = 1;
};

struct GapReport {
  struct Cell {
    double rho;
    std::uint64_t seed;
    double label_err;     // measured E|y - y*| over training batches
    double train_risk;    // empirical-risk estimator, assigned labels
    double heldout_risk;  // population-risk estimator, true soft labels
    double gap;           // heldout_risk - train_risk
    bool converged = true;
  };
  std::vector<Cell> cells;
  std::vector<double> rho_grid;
  std::vector<double> mean_label_err;  // per grid entry, converged cells
  std::vector<double> mean_gap;
  double spearman = 0.0;
  std::vector<std::string> warnings;
};

namespace detail {

// FIFO feature queue with the class of each stored key tracked alongside.
struct ClassedQueue {
  KeyQueue features;
  std::deque<int> classes;

  explicit ClassedQueue(std::size_t capacity) : features(capacity) {}

  void push(std::span<const std::vector<double>> keys,
            std::span<const int> key_classes) {
    features = refresh_keys(std::move(features), keys);
    for (int c : key_classes) classes.push_back(c);
    while (classes.size() > features.capacity()) classes.pop_front();
  }
};

struct GapCellResult {
  double label_err = 0.0;
  double train_risk = 0.0;
  double heldout_risk = 0.0;
  bool converged = true;
};

// One (rho, seed) cell: train with Eq.-(4)-style one-hot labels where
// floor(rho*s) queries per batch carry a swapped positive-key identity (the
// pair partner comes from a center of the crop's corrupted class), then
// estimate the empirical and population risks with frozen parameters.
inline GapCellResult run_gap_cell(const GapConfig& cfg, double rho,
                                  std::uint64_t cell_seed) {
  SeededRng rng_data(cell_seed, "gap.data");
  SeededRng rng_corrupt(cell_seed, "gap.corrupt");
  SeededRng rng_init(cell_seed, "gap.init");
  SeededRng rng_train(cell_seed, "gap.train");
  SeededRng rng_eval_train(cell_seed, "gap.eval.train");
  SeededRng rng_eval_held(cell_seed, "gap.eval.held");

  auto [centers, clean] = generate_dataset(cfg.data, rng_data);
  const CropDataset data = corrupt_labels(centers, clean, rho, rng_corrupt);
  const std::size_t n = data.num_crops();
  const auto by_center = data.crops_by_center();

  std::vector<std::vector<std::size_t>> centers_of_class(centers.num_classes());
  for (std::size_t c = 0; c < centers.num_centers(); ++c)
    centers_of_class[static_cast<std::size_t>(centers.class_index[c])]
        .push_back(c);

  std::vector<std::size_t> corrupted_pool, clean_pool;
  for (std::size_t i = 0; i < n; ++i)
    (data.y[i] != data.y_star[i] ? corrupted_pool : clean_pool).push_back(i);

  const std::size_t s = cfg.s;
  std::size_t swaps = static_cast<std::size_t>(
      std::floor(rho * static_cast<double>(s)));
  if (corrupted_pool.empty()) swaps = 0;

  const std::vector<std::size_t> widths{cfg.data.d, cfg.hidden, cfg.feature};
  MomentumPair pair;
  pair.online = make_encoder(widths, cfg.activation, rng_init);
  pair.target = pair.online;
  pair.iota = cfg.iota;
  ClassedQueue queue(cfg.b);

  auto crop_class = [&](std::size_t crop) {
    return centers.class_index[static_cast<std::size_t>(data.center_of[crop])];
  };

  // Builds one batch: query crop indices (first `swaps` corrupted), the
  // matching positive crops, and the class carried by each positive key.
  struct Batch {
    std::vector<std::size_t> queries;
    Matrix positives;
    std::vector<int> positive_classes;
  };
  auto sample_batch = [&](SeededRng& rng) {
    Batch batch;
    batch.queries.resize(s);
    batch.positives = Matrix(s, cfg.data.d);
    batch.positive_classes.resize(s);
    for (std::size_t i = 0; i < s; ++i) {
      const bool corrupt = i < swaps;
      const auto& pool = corrupt ? corrupted_pool : clean_pool;
      batch.queries[i] = pool[rng.uniform_below(pool.size())];
    }
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t qi = batch.queries[i];
      std::size_t pos_crop;
      if (i < swaps) {
        // Swapped positive-key identity: partner drawn from a center of the
        // crop's corrupted class.
        const std::size_t wrong_class = round_to_class(
            data.y[qi], centers.class_grid);
        const auto& cands = centers_of_class[wrong_class];
        const std::size_t center = cands[rng.uniform_below(cands.size())];
        const auto& members = by_center[center];
        pos_crop = static_cast<std::size_t>(
            members[rng.uniform_below(members.size())]);
      } else {
        const auto& members =
            by_center[static_cast<std::size_t>(data.center_of[qi])];
        std::size_t a = rng.uniform_below(members.size());
        if (static_cast<std::size_t>(members[a]) == qi && members.size() > 1)
          a = (a + 1) % members.size();
        pos_crop = static_cast<std::size_t>(members[a]);
      }
      std::copy(data.X.row(pos_crop).begin(), data.X.row(pos_crop).end(),
                batch.positives.row(i).begin());
      batch.positive_classes[i] = crop_class(pos_crop);
    }
    return batch;
  };

  GapCellResult out;
  out.label_err =
      std::sqrt(2.0) * static_cast<double>(swaps) / static_cast<double>(s);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Batch batch = sample_batch(rng_train);
    std::vector<std::vector<double>> pos_features(s);
    for (std::size_t i = 0; i < s; ++i)
      pos_features[i] = encode(pair.target, batch.positives.row(i));
    const KeySet keys = make_key_set(pos_features, queue.features);

    Matrix queries(s, cfg.data.d);
    for (std::size_t i = 0; i < s; ++i)
      std::copy(data.X.row(batch.queries[i]).begin(),
                data.X.row(batch.queries[i]).end(), queries.row(i).begin());
    std::vector<ProbVector> labels;
    labels.reserve(s);
    for (std::size_t i = 0; i < s; ++i)
      labels.push_back(ProbVector::one_hot(keys.size(), i));

    const ContrastiveLossResult res =
        contrastive_batch_loss(pair.online, queries, labels, keys, cfg.tau);
    if (!std::isfinite(res.loss)) {
      out.converged = false;
      return out;
    }
    pair.online = apply_sgd_step(pair.online, res.grads, cfg.eta);
    pair = ema_update(std::move(pair));
    queue.push(pos_features, batch.positive_classes);
  }

  // Eq. (2) estimator: same batch process, frozen parameters and queue.
  double train_sum = 0.0;
  for (std::size_t e = 0; e < cfg.eval_batches; ++e) {
    const Batch batch = sample_batch(rng_eval_train);
    std::vector<std::vector<double>> pos_features(s);
    for (std::size_t i = 0; i < s; ++i)
      pos_features[i] = encode(pair.target, batch.positives.row(i));
    const KeySet keys = make_key_set(pos_features, queue.features);
    for (std::size_t i = 0; i < s; ++i) {
      const std::vector<double> q =
          encode(pair.online, data.X.row(batch.queries[i]));
      const std::vector<double> logits = similarity_logits(q, keys, cfg.tau);
      train_sum +=
          soft_ce_loss(logits, ProbVector::one_hot(keys.size(), i)).loss;
    }
  }
  out.train_risk =
      train_sum / (static_cast<double>(cfg.eval_batches) * static_cast<double>(s));

  // Eq. (3) estimator: fresh crops, clean pairs, true soft labels.
  double held_sum = 0.0;
  for (std::size_t e = 0; e < cfg.eval_batches; ++e) {
    std::vector<std::vector<double>> pos_features(s);
    std::vector<int> pos_classes(s);
    std::vector<std::vector<double>> fresh_queries(s);
    std::vector<int> query_classes(s);
    for (std::size_t i = 0; i < s; ++i) {
      const std::size_t anchor = rng_eval_held.uniform_below(n);
      const std::size_t center =
          static_cast<std::size_t>(data.center_of[anchor]);
      fresh_queries[i] =
          sample_crop_around(centers.C.row(center), data.epsilon, rng_eval_held);
      const std::vector<double> pos = sample_crop_around(
          centers.C.row(center), data.epsilon, rng_eval_held);
      pos_features[i] = encode(pair.target, pos);
      pos_classes[i] = centers.class_index[center];
      query_classes[i] = centers.class_index[center];
    }
    const KeySet keys = make_key_set(pos_features, queue.features);
    std::vector<int> key_classes(pos_classes.begin(), pos_classes.end());
    for (int c : queue.classes) key_classes.push_back(c);
    for (std::size_t i = 0; i < s; ++i) {
      const std::vector<double> q = encode(pair.online, fresh_queries[i]);
      const std::vector<double> logits = similarity_logits(q, keys, cfg.tau);
      held_sum +=
          soft_ce_loss(logits, true_soft_label(query_classes[i], key_classes))
              .loss;
    }
  }
  out.heldout_risk =
      held_sum / (static_cast<double>(cfg.eval_batches) * static_cast<double>(s));
  return out;
}

}  // namespace detail

inline GapReport run_gap_experiment(std::span<const double> rho_grid,
                                    const GapConfig& cfg, std::size_t seeds) {
  if (rho_grid.size() < 2)
    throw std::invalid_argument("run_gap_experiment: need at least two grid points");
  if (!std::is_sorted(rho_grid.begin(), rho_grid.end()))
    throw std::invalid_argument("run_gap_experiment: grid must be ascending");
  if (seeds < 3)
    throw std::invalid_argument("run_gap_experiment: need at least 3 seeds");

  GapReport report;
  report.rho_grid.assign(rho_grid.begin(), rho_grid.end());
  for (std::size_t g = 0; g < rho_grid.size(); ++g) {
    for (std::size_t j = 0; j < seeds; ++j) {
      const std::uint64_t cell_seed =
          cfg.seed + 1000003ULL * g + 7919ULL * j;
      const detail::GapCellResult cell =
          detail::run_gap_cell(cfg, rho_grid[g], cell_seed);
      report.cells.push_back({rho_grid[g], cell_seed, cell.label_err,
                              cell.train_risk, cell.heldout_risk,
                              cell.heldout_risk - cell.train_risk,
                              cell.converged});
      if (!cell.converged) {
        char buf[128];
        std::snprintf(buf, sizeof(buf),
                      "gap cell rho=%g seed=%llu did not converge; excluded",
                      rho_grid[g],
                      static_cast<unsigned long long>(cell_seed));
        report.warnings.emplace_back(buf);
      }
    }
  }

  report.mean_label_err.assign(rho_grid.size(), 0.0);
  report.mean_gap.assign(rho_grid.size(), 0.0);
  for (std::size_t g = 0; g < rho_grid.size(); ++g) {
    double le = 0.0, gap = 0.0;
    std::size_t count = 0;
    for (const GapReport::Cell& c : report.cells) {
      if (c.rho != rho_grid[g] || !c.converged) continue;
      le += c.label_err;
      gap += c.gap;
      ++count;
    }
    if (count == 0)
      throw NumericFailureError("run_gap_experiment: all cells diverged at one grid point");
    report.mean_label_err[g] = le / static_cast<double>(count);
    report.mean_gap[g] = gap / static_cast<double>(count);
  }
  report.spearman =
      spearman_correlation(report.mean_gap, report.mean_label_err);
  return report;
}

// ---------------------------------------------------------------------------
// CSV schemas
// ---------------------------------------------------------------------------

namespace detail {

inline void csv_value(std::ostream& os, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

}  // namespace detail

inline void write_run_record_csv(const RunRecord& rec, std::ostream& os) {
  os << "iter,loss,label_err,pred_err,frac_label_correct,frac_pred_correct,"
        "resid_splus,resid_sminus\n";
  for (const RunRecord::Row& r : rec.rows) {
    os << r.iter << ',';
    detail::csv_value(os, r.loss);
    os << ',';
    detail::csv_value(os, r.label_err);
    os << ',';
    detail::csv_value(os, r.pred_err);
    os << ',';
    detail::csv_value(os, r.frac_label_correct);
    os << ',';
    detail::csv_value(os, r.frac_pred_correct);
    os << ',';
    detail::csv_value(os, r.resid_splus);
    os << ',';
    detail::csv_value(os, r.resid_sminus);
    os << '\n';
  }
}

inline void write_gap_csv(const GapReport& report, std::ostream& os) {
  os << "rho,seed,label_err,train_risk,heldout_risk,gap\n";
  for (const GapReport::Cell& c : report.cells) {
    detail::csv_value(os, c.rho);
    os << ',' << c.seed << ',';
    detail::csv_value(os, c.label_err);
    os << ',';
    detail::csv_value(os, c.train_risk);
    os << ',';
    detail::csv_value(os, c.heldout_risk);
    os << ',';
    detail::csv_value(os, c.gap);
    os << '\n';
  }
}

}  // namespace sane
