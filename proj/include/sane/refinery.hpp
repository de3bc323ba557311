#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "sane/contrastive.hpp"
#include "sane/errors.hpp"
#include "sane/matrix.hpp"
#include "sane/numerics.hpp"
#include "sane/rng.hpp"

namespace sane {

struct RefineryConfig {
  double tau_prime = 0.8;  // sharpening exponent, in (0, 1]
  double m1 = 0.0;         // mu schedule start
  double m2 = 1.0;         // mu schedule end
  double kappa = 2.0;      // Beta(kappa, kappa) mixup parameter
  double lambda = 0.5;     // weight of the mixup loss term
  std::size_t total_iters = 1000;
};

// Refined label over the s+b key set together with the confidence weights
// that produced it.
struct RefinedLabel {
  ProbVector label;
  double alpha = 0.0;
  double beta = 0.0;
};

// Instance-class probability p over all keys and the self-excluded
// re-estimate q (q_ii = 0). Sharpening by 1/tau' is folded into one softmax
// at effective temperature tau * tau', which is algebraically identical to
// raising the similarities to 1/tau' and renormalizing.
inline std::pair<ProbVector, ProbVector> estimate_pq(
    std::span<const double> positive_feature, const KeySet& keys, double tau,
    double tau_prime, std::size_t self_index) {
  if (!(tau_prime > 0.0 && tau_prime <= 1.0))
    throw std::invalid_argument("estimate_pq: tau' must be in (0, 1]");
  if (self_index >= keys.batch_size)
    throw std::invalid_argument("estimate_pq: self index outside batch");

  const std::vector<double> sharpened =
      similarity_logits(positive_feature, keys, tau * tau_prime);
  const ProbVector p = softmax_temp(sharpened, 1.0);

  std::vector<double> rest;
  rest.reserve(sharpened.size() - 1);
  for (std::size_t l = 0; l < sharpened.size(); ++l)
    if (l != self_index) rest.push_back(sharpened[l]);
  const ProbVector q_rest = softmax_temp(rest, 1.0);
  std::vector<double> q(sharpened.size(), 0.0);
  for (std::size_t l = 0, r = 0; l < sharpened.size(); ++l)
    if (l != self_index) q[l] = q_rest[r++];
  return {p, ProbVector(std::move(q))};
}

// alpha = mu max(p) / z, beta = mu max(q) / z with
// z = 1 + mu max(p) + mu max(q); mu sets the prior confidence of p and q
// against the one-hot label.
inline std::pair<double, double> confidence_weights(const ProbVector& p,
                                                    const ProbVector& q,
                                                    double mu) {
  if (!(mu >= 0.0))
    throw std::invalid_argument("confidence_weights: mu must be nonnegative");
  const double mp = p.max_entry();
  const double mq = q.max_entry();
  const double z = 1.0 + mu * mp + mu * mq;
  return {mu * mp / z, mu * mq / z};
}

// y_hat = (1 - alpha - beta) y + alpha p + beta q.
inline RefinedLabel refine_label(const ProbVector& onehot, const ProbVector& p,
                                 const ProbVector& q, double alpha,
                                 double beta) {
  if (onehot.size() != p.size() || onehot.size() != q.size())
    throw std::invalid_argument("refine_label: length mismatch");
  if (!(alpha >= 0.0 && beta >= 0.0 && alpha + beta < 1.0))
    throw std::invalid_argument("refine_label: need alpha, beta >= 0 and alpha + beta < 1");
  // Convex combination of simplex points; stays inside the 1e-12 sum band
  // without renormalizing, and alpha = beta = 0 reproduces y bit-exactly.
  std::vector<double> out(onehot.size());
  const double w0 = 1.0 - alpha - beta;
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = w0 * onehot[k] + alpha * p[k] + beta * q[k];
  return {ProbVector(std::move(out)), alpha, beta};
}

// Cosine ramp mu_t = m2 - (m2 - m1)(cos(pi t / T) + 1)/2.
inline double mu_schedule(std::size_t t, std::size_t T, double m1, double m2) {
  if (T == 0) throw std::invalid_argument("mu_schedule: T must be positive");
  if (t > T) throw std::invalid_argument("mu_schedule: t must be in [0, T]");
  const double c = std::cos(M_PI * static_cast<double>(t) / static_cast<double>(T));
  return m2 - (m2 - m1) * (c + 1.0) / 2.0;
}

// Virtual batch from momentum mixup: x'_i = theta x_i + (1-theta) pos_k,
// y'_i = theta y_i + (1-theta) y_k, one partner and one theta per query.
struct VirtualBatch {
  Matrix crops;
  std::vector<ProbVector> labels;
  std::vector<std::size_t> partners;
  std::vector<double> thetas;
};

// Deterministic core: mixes with the given partners and thetas.
inline VirtualBatch momentum_mixup_with(const Matrix& queries,
                                        const Matrix& positives,
                                        std::span<const RefinedLabel> labels,
                                        std::span<const std::size_t> partners,
                                        std::span<const double> thetas) {
  const std::size_t s = queries.rows();
  if (positives.rows() != s || labels.size() != s || partners.size() != s ||
      thetas.size() != s)
    throw std::invalid_argument("momentum_mixup: batch sizes disagree");
  if (s == 0) throw std::invalid_argument("momentum_mixup: empty batch");

  VirtualBatch out;
  out.partners.assign(partners.begin(), partners.end());
  out.thetas.assign(thetas.begin(), thetas.end());
  out.crops = Matrix(s, queries.cols());
  out.labels.reserve(s);
  for (std::size_t i = 0; i < s; ++i) {
    const std::size_t k = out.partners[i];
    const double th = out.thetas[i];
    for (std::size_t j = 0; j < queries.cols(); ++j)
      out.crops(i, j) = th * queries(i, j) + (1.0 - th) * positives(k, j);
    std::vector<double> mixed(labels[i].label.size());
    for (std::size_t l = 0; l < mixed.size(); ++l)
      mixed[l] = th * labels[i].label[l] + (1.0 - th) * labels[k].label[l];
    out.labels.emplace_back(std::move(mixed));
  }
  return out;
}

// Sampling shell. Draw order is fixed: all partner indices first, then all
// thetas, so parallel callers replaying the stream agree. Partners are
// uniform with replacement over the batch (self-partnering allowed).
inline VirtualBatch momentum_mixup(const Matrix& queries,
                                   const Matrix& positives,
                                   std::span<const RefinedLabel> labels,
                                   double kappa, SeededRng& rng) {
  if (!(kappa > 0.0))
    throw std::invalid_argument("momentum_mixup: kappa must be positive");
  const std::size_t s = queries.rows();
  if (s == 0) throw std::invalid_argument("momentum_mixup: empty batch");
  std::vector<std::size_t> partners(s);
  std::vector<double> thetas(s);
  for (std::size_t i = 0; i < s; ++i)
    partners[i] = static_cast<std::size_t>(rng.uniform_below(s));
  for (std::size_t i = 0; i < s; ++i) thetas[i] = sample_beta(kappa, rng);
  return momentum_mixup_with(queries, positives, labels, partners, thetas);
}

struct SaneLossResult {
  double loss = 0.0;
  double loss_onehot = 0.0;
  double loss_mixup = 0.0;
  EncoderGrads grads;
};

// Combined objective: (1 - lambda) * contrastive loss with one-hot labels on
// the original queries + lambda * contrastive loss on the mixup batch with
// mixed refined labels. Gradients flow through the online encoder only.
inline SaneLossResult sane_loss(const MlpEncoder& online, const Matrix& queries,
                                const VirtualBatch& virt, const KeySet& keys,
                                double lambda, double tau,
                                bool paper_sign = false) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("sane_loss: lambda must be in [0, 1]");
  const std::size_t s = queries.rows();
  std::vector<ProbVector> onehot;
  onehot.reserve(s);
  for (std::size_t i = 0; i < s; ++i)
    onehot.push_back(ProbVector::one_hot(keys.size(), i));

  const ContrastiveLossResult plain =
      contrastive_batch_loss(online, queries, onehot, keys, tau, paper_sign);
  const ContrastiveLossResult mix = contrastive_batch_loss(
      online, virt.crops, virt.labels, keys, tau, paper_sign);

  SaneLossResult out;
  out.loss_onehot = plain.loss;
  out.loss_mixup = mix.loss;
  out.loss = (1.0 - lambda) * plain.loss + lambda * mix.loss;
  out.grads = zero_grads_like(online);
  out.grads.axpy(1.0 - lambda, plain.grads);
  out.grads.axpy(lambda, mix.grads);
  return out;
}

// Scalar refinery used by the theory experiments (beta_t = 0, tau' = 1):
// y_hat = (1 - alpha) y + alpha f(W_t, positive crop).
inline double refine_label_regression(double y, double prediction,
                                      double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("refine_label_regression: alpha must be in [0, 1]");
  return (1.0 - alpha) * y + alpha * prediction;
}

}  // namespace sane
