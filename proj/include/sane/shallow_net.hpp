#pragma once

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sane/errors.hpp"
#include "sane/matrix.hpp"
#include "sane/rng.hpp"

namespace sane {

enum class Activation { Linear, Tanh, Sigmoid, Softplus };

// Scalar activation with first and second derivatives and a bound Gamma
// covering |phi(0)|, |phi'| and |phi''|. The bounds here are the analytic
// suprema, rounded up to 1 so Gamma >= 1 always holds.
struct ActivationSpec {
  double (*phi)(double);
  double (*dphi)(double);
  double (*d2phi)(double);
  double gamma_bound;
  const char* name;
};

namespace detail {

inline double sigmoid_stable(double z) {
  const double t = std::exp(-std::abs(z));
  return z >= 0.0 ? 1.0 / (1.0 + t) : t / (1.0 + t);
}

inline double softplus_stable(double z) {
  return (z > 0.0 ? z : 0.0) + std::log1p(std::exp(-std::abs(z)));
}

inline const ActivationSpec kLinearSpec{
    [](double z) { return z; },
    [](double) { return 1.0; },
    [](double) { return 0.0; },
    1.0,
    "linear"};

inline const ActivationSpec kTanhSpec{
    [](double z) { return std::tanh(z); },
    [](double z) {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    },
    [](double z) {
      const double t = std::tanh(z);
      return -2.0 * t * (1.0 - t * t);
    },
    1.0,
    "tanh"};

inline const ActivationSpec kSigmoidSpec{
    sigmoid_stable,
    [](double z) {
      const double s = sigmoid_stable(z);
      return s * (1.0 - s);
    },
    [](double z) {
      const double s = sigmoid_stable(z);
      return s * (1.0 - s) * (1.0 - 2.0 * s);
    },
    1.0,
    "sigmoid"};

inline const ActivationSpec kSoftplusSpec{
    softplus_stable,
    sigmoid_stable,
    [](double z) {
      const double s = sigmoid_stable(z);
      return s * (1.0 - s);
    },
    1.0,
    "softplus"};

}  // namespace detail

inline const ActivationSpec& activation_spec(Activation a) {
  switch (a) {
    case Activation::Linear:
      return detail::kLinearSpec;
    case Activation::Tanh:
      return detail::kTanhSpec;
    case Activation::Sigmoid:
      return detail::kSigmoidSpec;
    case Activation::Softplus:
      return detail::kSoftplusSpec;
  }
  throw std::invalid_argument("activation_spec: unknown activation");
}

inline Activation activation_from_name(std::string_view name) {
  if (name == "linear") return Activation::Linear;
  if (name == "tanh") return Activation::Tanh;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "softplus") return Activation::Softplus;
  throw std::invalid_argument("unknown activation name: " + std::string(name));
}

// One-hidden-layer analysis network f(W, x) = v' phi(W x). The output vector
// v is fixed: first k/2 entries +1/sqrt(k), rest -1/sqrt(k); only W trains.
struct ShallowNet {
  Matrix W;  // k x d
  std::vector<double> v;
  Activation activation = Activation::Softplus;

  std::size_t hidden() const { return W.rows(); }
  std::size_t dim() const { return W.cols(); }
};

inline ShallowNet init_gaussian(std::size_t k, std::size_t d, Activation act,
                                SeededRng& rng) {
  if (k < 2 || k % 2 != 0)
    throw std::invalid_argument("init_gaussian: k must be even and >= 2");
  ShallowNet net;
  net.activation = act;
  net.W = Matrix(k, d);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < d; ++j) net.W(i, j) = rng.normal();
  net.v.resize(k);
  const double a = 1.0 / std::sqrt(static_cast<double>(k));
  for (std::size_t i = 0; i < k; ++i) net.v[i] = i < k / 2 ? a : -a;
  return net;
}

inline double forward(const ShallowNet& net, std::span<const double> x) {
  if (x.size() != net.dim())
    throw std::invalid_argument("forward: input dimension mismatch");
  const ActivationSpec& act = activation_spec(net.activation);
  double out = 0.0;
  for (std::size_t i = 0; i < net.hidden(); ++i)
    out += net.v[i] * act.phi(dot(net.W.row(i), x));
  return out;
}

inline std::vector<double> forward_batch(const ShallowNet& net,
                                         const Matrix& X) {
  if (X.cols() != net.dim())
    throw std::invalid_argument("forward_batch: input dimension mismatch");
  const ActivationSpec& act = activation_spec(net.activation);
  std::vector<double> out(X.rows(), 0.0);
  for (std::size_t s = 0; s < X.rows(); ++s) {
    const std::span<const double> x = X.row(s);
    double acc = 0.0;
    for (std::size_t i = 0; i < net.hidden(); ++i)
      acc += net.v[i] * act.phi(dot(net.W.row(i), x));
    out[s] = acc;
  }
  return out;
}

// Gradient of 0.5 * sum_i (f(W, x_i) - label_i)^2 with respect to W,
// accumulated sample by sample in index order (deterministic).
inline Matrix quadratic_grad(const ShallowNet& net, const Matrix& X,
                             std::span<const double> labels) {
  if (X.rows() != labels.size())
    throw std::invalid_argument("quadratic_grad: label count mismatch");
  if (X.cols() != net.dim())
    throw std::invalid_argument("quadratic_grad: input dimension mismatch");
  const ActivationSpec& act = activation_spec(net.activation);
  const std::size_t k = net.hidden();
  const std::size_t d = net.dim();
  Matrix grad(k, d);
  std::vector<double> u(k);
  for (std::size_t s = 0; s < X.rows(); ++s) {
    const std::span<const double> x = X.row(s);
    double f = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double z = dot(net.W.row(i), x);
      u[i] = net.v[i] * act.dphi(z);
      f += net.v[i] * act.phi(z);
    }
    const double r = f - labels[s];
    for (std::size_t i = 0; i < k; ++i) {
      const double ru = r * u[i];
      double* g = &grad(i, 0);
      for (std::size_t j = 0; j < d; ++j) g[j] += ru * x[j];
    }
  }
  return grad;
}

inline ShallowNet gd_step(const ShallowNet& net, const Matrix& grad,
                          double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("gd_step: eta must be positive");
  if (grad.rows() != net.hidden() || grad.cols() != net.dim())
    throw std::invalid_argument("gd_step: gradient shape mismatch");
  ShallowNet out = net;
  for (std::size_t i = 0; i < grad.size(); ++i)
    out.W.storage()[i] -= eta * grad.storage()[i];
  return out;
}

// Jacobian of the sample predictions with respect to vec(W): row i is the
// row-major flattening of (v .* phi'(W x_i)) x_i'. Column order is
// (hidden unit, input coordinate), so J' r reshapes to the quadratic_grad
// layout.
inline Matrix jacobian(const ShallowNet& net, const Matrix& X) {
  if (X.cols() != net.dim())
    throw std::invalid_argument("jacobian: input dimension mismatch");
  const ActivationSpec& act = activation_spec(net.activation);
  const std::size_t k = net.hidden();
  const std::size_t d = net.dim();
  Matrix J(X.rows(), k * d);
  for (std::size_t s = 0; s < X.rows(); ++s) {
    const std::span<const double> x = X.row(s);
    double* row = &J(s, 0);
    for (std::size_t i = 0; i < k; ++i) {
      const double c = net.v[i] * act.dphi(dot(net.W.row(i), x));
      for (std::size_t j = 0; j < d; ++j) row[i * d + j] = c * x[j];
    }
  }
  return J;
}

// Checkpoint: `k d activation` header, then W rows at 17 significant digits.
// v is reconstructed from (k); it never trains.
inline void save_checkpoint(const ShallowNet& net, std::ostream& os) {
  os << net.hidden() << ' ' << net.dim() << ' '
     << activation_spec(net.activation).name << '\n';
  char buf[64];
  for (std::size_t i = 0; i < net.hidden(); ++i) {
    for (std::size_t j = 0; j < net.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", net.W(i, j));
      os << (j ? " " : "") << buf;
    }
    os << '\n';
  }
}

inline ShallowNet load_checkpoint(std::istream& is) {
  std::size_t k = 0, d = 0;
  std::string name;
  if (!(is >> k >> d >> name)) throw IoError("load_checkpoint: bad header");
  if (k < 2 || k % 2 != 0) throw IoError("load_checkpoint: invalid k");
  ShallowNet net;
  net.activation = activation_from_name(name);
  net.W = Matrix(k, d);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (!(is >> net.W(i, j))) throw IoError("load_checkpoint: truncated W");
  net.v.resize(k);
  const double a = 1.0 / std::sqrt(static_cast<double>(k));
  for (std::size_t i = 0; i < k; ++i) net.v[i] = i < k / 2 ? a : -a;
  return net;
}

}  // namespace sane
