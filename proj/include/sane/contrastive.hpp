#pragma once

#include <cmath>
#include <cstdio>
#include <deque>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sane/errors.hpp"
#include "sane/matrix.hpp"
#include "sane/numerics.hpp"
#include "sane/rng.hpp"
#include "sane/shallow_net.hpp"

namespace sane {

// Small multilayer perceptron: activation on hidden layers, identity on the
// output layer. An encoder with no layers is the identity map (useful for
// exact-value tests). Feature outputs are NOT normalized; normalization
// happens inside the similarity.
struct MlpEncoder {
  std::vector<Matrix> weights;               // layer l: out x in
  std::vector<std::vector<double>> biases;   // layer l: out
  Activation hidden_activation = Activation::Softplus;

  std::size_t num_layers() const { return weights.size(); }
  std::size_t input_dim(std::size_t fallback = 0) const {
    return weights.empty() ? fallback : weights.front().cols();
  }
  std::size_t output_dim(std::size_t fallback = 0) const {
    return weights.empty() ? fallback : weights.back().rows();
  }
};

// widths = {input, hidden..., output}; a single width yields the identity
// encoder. Weights ~ N(0, 1/fan_in), biases zero.
inline MlpEncoder make_encoder(std::span<const std::size_t> widths,
                               Activation act, SeededRng& rng) {
  if (widths.empty()) throw std::invalid_argument("make_encoder: no widths");
  MlpEncoder enc;
  enc.hidden_activation = act;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Matrix w(widths[l + 1], widths[l]);
    const double scale = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) w(i, j) = scale * rng.normal();
    enc.weights.push_back(std::move(w));
    enc.biases.emplace_back(widths[l + 1], 0.0);
  }
  return enc;
}

inline std::vector<double> encode(const MlpEncoder& enc,
                                  std::span<const double> x) {
  if (!enc.weights.empty() && x.size() != enc.input_dim())
    throw std::invalid_argument("encode: input dimension mismatch");
  const ActivationSpec& act = activation_spec(enc.hidden_activation);
  std::vector<double> a(x.begin(), x.end());
  for (std::size_t l = 0; l < enc.num_layers(); ++l) {
    const Matrix& w = enc.weights[l];
    std::vector<double> z(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i)
      z[i] = dot(w.row(i), a) + enc.biases[l][i];
    if (l + 1 < enc.num_layers())
      for (double& v : z) v = act.phi(v);
    a = std::move(z);
  }
  return a;
}

// Parameter gradients, same shapes as the encoder. Accumulated in place so a
// batch loss can sum per-query contributions in a fixed order.
struct EncoderGrads {
  std::vector<Matrix> d_weights;
  std::vector<std::vector<double>> d_biases;

  void scale(double c) {
    for (Matrix& m : d_weights)
      for (double& v : m.storage()) v *= c;
    for (auto& b : d_biases)
      for (double& v : b) v *= c;
  }

  void axpy(double c, const EncoderGrads& other) {
    for (std::size_t l = 0; l < d_weights.size(); ++l) {
      for (std::size_t i = 0; i < d_weights[l].size(); ++i)
        d_weights[l].storage()[i] += c * other.d_weights[l].storage()[i];
      for (std::size_t i = 0; i < d_biases[l].size(); ++i)
        d_biases[l][i] += c * other.d_biases[l][i];
    }
  }
};

inline EncoderGrads zero_grads_like(const MlpEncoder& enc) {
  EncoderGrads g;
  for (std::size_t l = 0; l < enc.num_layers(); ++l) {
    g.d_weights.emplace_back(enc.weights[l].rows(), enc.weights[l].cols());
    g.d_biases.emplace_back(enc.biases[l].size(), 0.0);
  }
  return g;
}

// Reverse-mode gradients of <upstream, encode(enc, x)> with respect to every
// weight and bias, accumulated into `accum`.
inline void backprop(const MlpEncoder& enc, std::span<const double> x,
                     std::span<const double> upstream, EncoderGrads& accum) {
  if (!enc.weights.empty() && x.size() != enc.input_dim())
    throw std::invalid_argument("backprop: input dimension mismatch");
  if (upstream.size() != (enc.weights.empty() ? x.size() : enc.output_dim()))
    throw std::invalid_argument("backprop: upstream dimension mismatch");
  if (enc.weights.empty()) return;  // identity encoder has no parameters

  const ActivationSpec& act = activation_spec(enc.hidden_activation);
  const std::size_t L = enc.num_layers();

  // Forward pass storing inputs to each layer and pre-activations.
  std::vector<std::vector<double>> inputs(L);
  std::vector<std::vector<double>> preact(L);
  std::vector<double> a(x.begin(), x.end());
  for (std::size_t l = 0; l < L; ++l) {
    inputs[l] = a;
    const Matrix& w = enc.weights[l];
    std::vector<double> z(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i)
      z[i] = dot(w.row(i), a) + enc.biases[l][i];
    preact[l] = z;
    if (l + 1 < L)
      for (double& v : z) v = act.phi(v);
    a = std::move(z);
  }

  std::vector<double> delta(upstream.begin(), upstream.end());
  for (std::size_t li = L; li-- > 0;) {
    const Matrix& w = enc.weights[li];
    // Output layer is identity; hidden layers apply phi'.
    if (li + 1 < L)
      for (std::size_t i = 0; i < delta.size(); ++i)
        delta[i] *= act.dphi(preact[li][i]);
    for (std::size_t i = 0; i < w.rows(); ++i) {
      accum.d_biases[li][i] += delta[i];
      double* g = &accum.d_weights[li](i, 0);
      const std::vector<double>& in = inputs[li];
      for (std::size_t j = 0; j < w.cols(); ++j) g[j] += delta[i] * in[j];
    }
    if (li > 0) {
      std::vector<double> next(w.cols(), 0.0);
      for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j)
          next[j] += w(i, j) * delta[i];
      delta = std::move(next);
    }
  }
}

inline MlpEncoder apply_sgd_step(const MlpEncoder& enc,
                                 const EncoderGrads& grads, double eta) {
  if (!(eta > 0.0))
    throw std::invalid_argument("apply_sgd_step: eta must be positive");
  MlpEncoder out = enc;
  for (std::size_t l = 0; l < out.num_layers(); ++l) {
    for (std::size_t i = 0; i < out.weights[l].size(); ++i)
      out.weights[l].storage()[i] -= eta * grads.d_weights[l].storage()[i];
    for (std::size_t i = 0; i < out.biases[l].size(); ++i)
      out.biases[l][i] -= eta * grads.d_biases[l][i];
  }
  return out;
}

// Online/target pair. The target tracks the online network by exponential
// moving average: xi <- (1 - iota) xi + iota w.
struct MomentumPair {
  MlpEncoder online;
  MlpEncoder target;
  double iota = 0.05;
};

inline MomentumPair ema_update(MomentumPair pair) {
  const double i = pair.iota;
  for (std::size_t l = 0; l < pair.target.num_layers(); ++l) {
    for (std::size_t k = 0; k < pair.target.weights[l].size(); ++k)
      pair.target.weights[l].storage()[k] =
          (1.0 - i) * pair.target.weights[l].storage()[k] +
          i * pair.online.weights[l].storage()[k];
    for (std::size_t k = 0; k < pair.target.biases[l].size(); ++k)
      pair.target.biases[l][k] =
          (1.0 - i) * pair.target.biases[l][k] + i * pair.online.biases[l][k];
  }
  return pair;
}

// Fixed-capacity FIFO dictionary of key features, oldest first.
class KeyQueue {
public:
  explicit KeyQueue(std::size_t capacity) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return keys_.size(); }
  const std::vector<double>& at(std::size_t i) const { return keys_[i]; }

  friend KeyQueue refresh_keys(KeyQueue queue,
                               std::span<const std::vector<double>> new_keys) {
    if (new_keys.size() > queue.capacity_)
      throw std::invalid_argument("refresh_keys: batch exceeds queue capacity");
    for (const auto& k : new_keys) queue.keys_.push_back(k);
    while (queue.keys_.size() > queue.capacity_) queue.keys_.pop_front();
    return queue;
  }

private:
  std::size_t capacity_;
  std::deque<std::vector<double>> keys_;
};

// Ordered key set for one step: the batch's positive keys first (index i is
// the positive of query i), then the queue contents.
struct KeySet {
  std::vector<std::vector<double>> keys;
  std::size_t batch_size = 0;

  std::size_t size() const { return keys.size(); }
};

inline KeySet make_key_set(std::span<const std::vector<double>> positives,
                           const KeyQueue& queue) {
  KeySet set;
  set.batch_size = positives.size();
  set.keys.assign(positives.begin(), positives.end());
  for (std::size_t i = 0; i < queue.size(); ++i) set.keys.push_back(queue.at(i));
  return set;
}

// Per-key logits cos(query, key) / tau. The printed form of the loss carries
// a minus sign inside exp; `paper_sign = true` reproduces it for inspection,
// the default follows the prose (agreement raises the positive logit).
inline std::vector<double> similarity_logits(std::span<const double> query,
                                             const KeySet& keys, double tau,
                                             bool paper_sign = false) {
  if (!(tau > 0.0))
    throw std::invalid_argument("similarity_logits: tau must be positive");
  const double sign = paper_sign ? -1.0 : 1.0;
  std::vector<double> logits(keys.size());
  for (std::size_t l = 0; l < keys.size(); ++l)
    logits[l] = sign * cosine_similarity(query, keys.keys[l]) / tau;
  return logits;
}

struct SoftCeResult {
  double loss = 0.0;
  std::vector<double> grad_logits;  // softmax(logits) - label
};

// Cross entropy of softmax(logits) against a soft label; gradient with
// respect to the logits comes for free.
inline SoftCeResult soft_ce_loss(std::span<const double> logits,
                                 const ProbVector& label) {
  if (logits.size() != label.size())
    throw std::invalid_argument("soft_ce_loss: length mismatch");
  const ProbVector p = softmax_temp(logits, 1.0);
  // log p computed via the shifted logits to stay finite for extreme inputs.
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  const double logz = std::log(z) + m;
  SoftCeResult out;
  out.grad_logits.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out.loss -= label[k] * (logits[k] - logz);
    out.grad_logits[k] = p[k] - label[k];
  }
  return out;
}

struct ContrastiveLossResult {
  double loss = 0.0;
  EncoderGrads grads;
};

// Batch soft-label contrastive loss: mean over queries of the cross entropy
// between softmax similarities and the given labels. Gradients flow through
// the online encoder only; keys are constants. With one-hot labels at each
// query's positive this is the vanilla instance-discrimination loss.
inline ContrastiveLossResult contrastive_batch_loss(
    const MlpEncoder& online, const Matrix& queries,
    std::span<const ProbVector> labels, const KeySet& keys, double tau,
    bool paper_sign = false) {
  const std::size_t s = queries.rows();
  if (labels.size() != s)
    throw std::invalid_argument("contrastive_batch_loss: label count mismatch");
  if (s == 0)
    throw std::invalid_argument("contrastive_batch_loss: empty batch");

  ContrastiveLossResult out;
  out.grads = zero_grads_like(online);
  const double sign = paper_sign ? -1.0 : 1.0;
  const double inv_s = 1.0 / static_cast<double>(s);
  for (std::size_t i = 0; i < s; ++i) {
    const std::vector<double> q = encode(online, queries.row(i));
    const double qn = norm2(q);
    if (qn == 0.0)
      throw DegenerateInputError("contrastive_batch_loss: zero query feature");
    const std::vector<double> logits =
        similarity_logits(q, keys, tau, paper_sign);
    const SoftCeResult ce = soft_ce_loss(logits, labels[i]);
    out.loss += inv_s * ce.loss;

    // d logits_l / d q = sign/tau * (k_l/(|q||k_l|) - cos_l * q/|q|^2)
    std::vector<double> upstream(q.size(), 0.0);
    for (std::size_t l = 0; l < keys.size(); ++l) {
      const double g = inv_s * ce.grad_logits[l] * sign / tau;
      if (g == 0.0) continue;
      const std::vector<double>& key = keys.keys[l];
      const double kn = norm2(key);
      if (kn == 0.0)
        throw DegenerateInputError("contrastive_batch_loss: zero key feature");
      const double cos_l = std::clamp(dot(q, key) / (qn * kn), -1.0, 1.0);
      for (std::size_t j = 0; j < q.size(); ++j)
        upstream[j] += g * (key[j] / (qn * kn) - cos_l * q[j] / (qn * qn));
    }
    backprop(online, queries.row(i), upstream, out.grads);
  }
  return out;
}

// Encoder checkpoint: layer count, activation, widths, then each layer's
// weight rows and bias line at 17 significant digits.
inline void save_encoder(const MlpEncoder& enc, std::ostream& os) {
  os << enc.num_layers() << ' ' << activation_spec(enc.hidden_activation).name;
  for (std::size_t l = 0; l < enc.num_layers(); ++l)
    os << ' ' << enc.weights[l].cols() << ' ' << enc.weights[l].rows();
  os << '\n';
  char buf[64];
  auto put = [&](double v, bool lead) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    if (lead) os << ' ';
    os << buf;
  };
  for (std::size_t l = 0; l < enc.num_layers(); ++l) {
    for (std::size_t i = 0; i < enc.weights[l].rows(); ++i) {
      for (std::size_t j = 0; j < enc.weights[l].cols(); ++j)
        put(enc.weights[l](i, j), j > 0);
      os << '\n';
    }
    for (std::size_t i = 0; i < enc.biases[l].size(); ++i)
      put(enc.biases[l][i], i > 0);
    os << '\n';
  }
}

inline MlpEncoder load_encoder(std::istream& is) {
  std::size_t layers = 0;
  std::string act;
  if (!(is >> layers >> act)) throw IoError("load_encoder: bad header");
  MlpEncoder enc;
  enc.hidden_activation = activation_from_name(act);
  std::vector<std::pair<std::size_t, std::size_t>> dims(layers);
  for (auto& [in, out] : dims)
    if (!(is >> in >> out)) throw IoError("load_encoder: bad layer dims");
  for (const auto& [in, out] : dims) {
    Matrix w(out, in);
    for (std::size_t i = 0; i < out; ++i)
      for (std::size_t j = 0; j < in; ++j)
        if (!(is >> w(i, j))) throw IoError("load_encoder: truncated weights");
    std::vector<double> b(out);
    for (double& v : b)
      if (!(is >> v)) throw IoError("load_encoder: truncated biases");
    enc.weights.push_back(std::move(w));
    enc.biases.push_back(std::move(b));
  }
  return enc;
}

}  // namespace sane
