#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "caedet/error.hpp"
#include "caedet/layers.hpp"
#include "caedet/model.hpp"
#include "caedet/tensor.hpp"

namespace caedet {

/// Predictions are clamped to [kProbClamp, 1 - kProbClamp] inside the loss.
inline constexpr double kProbClamp = 1e-7;

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

inline void validate(const AdamConfig& c) {
  if (!(c.learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (!(c.beta1 >= 0 && c.beta1 < 1)) throw ConfigError("beta1 must lie in [0, 1)");
  if (!(c.beta2 >= 0 && c.beta2 < 1)) throw ConfigError("beta2 must lie in [0, 1)");
  if (!(c.epsilon > 0)) throw ConfigError("epsilon must be positive");
}

struct LossReport {
  double loss = 0;
  double pixel_accuracy = 0;
  std::size_t batch_size = 0;
};

namespace detail {

template <typename T>
void check_loss_args(const Tensor<T>& target, const Tensor<T>& prediction, const char* op) {
  require_same_shape(target, prediction, op);
  require_finite(prediction, op, "prediction");
  for (T y : target.data()) {
    if (!(y >= T{0} && y <= T{1})) {
      throw DomainError(std::string(op) + ": target value " + std::to_string(double(y)) +
                        " outside [0,1]");
    }
  }
}

inline double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// Neumaier-compensated mean of the per-element cross-entropy.
template <typename T>
double bce_mean(const T* y, const T* p, std::size_t n) {
  double sum = 0, carry = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double yi = y[i];
    const double pi = clamp_prob(p[i]);
    const double term = yi * std::log(pi) + (1.0 - yi) * std::log1p(-pi);
    const double t = sum + term;
    carry += std::abs(sum) >= std::abs(term) ? (sum - t) + term : (term - t) + sum;
    sum = t;
  }
  return -(sum + carry) / static_cast<double>(n);
}

}  // namespace detail

/// Mean binary cross-entropy over every element of the batch.
template <typename T>
double bce_loss(const Tensor<T>& target, const Tensor<T>& prediction) {
  detail::check_loss_args(target, prediction, "bce_loss");
  return detail::bce_mean(target.data().data(), prediction.data().data(), target.size());
}

/// bce_loss of each sample along axis 0.
template <typename T>
std::vector<double> bce_per_sample(const Tensor<T>& target, const Tensor<T>& prediction) {
  detail::check_loss_args(target, prediction, "bce_per_sample");
  const std::size_t n = target.dim(0), per = target.size() / n;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = detail::bce_mean(target.data().data() + i * per, prediction.data().data() + i * per, per);
  }
  return out;
}

/// d bce_loss / d prediction, using the same clamp as the loss.
template <typename T>
Tensor<T> bce_grad(const Tensor<T>& target, const Tensor<T>& prediction) {
  detail::check_loss_args(target, prediction, "bce_grad");
  const double n = static_cast<double>(target.size());
  Tensor<T> g(target.shape());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double y = target[i];
    const double p = detail::clamp_prob(prediction[i]);
    g[i] = static_cast<T>((p - y) / (p * (1.0 - p)) / n);
  }
  return g;
}

/// Fraction of elements on the same side of 0.5 in target and prediction
/// (0.5 itself counts as the upper side).
template <typename T>
double pixel_accuracy(const Tensor<T>& target, const Tensor<T>& prediction) {
  require_same_shape(target, prediction, "pixel_accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    hits += (target[i] >= T(0.5)) == (prediction[i] >= T(0.5));
  }
  return static_cast<double>(hits) / static_cast<double>(target.size());
}

/// One Adam update of a single tensor. `t` is the step number after
/// incrementing, so t >= 1.
template <typename T>
void adam_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v,
                 std::uint64_t t, const AdamConfig& cfg) {
  const char* op = "adam_update";
  require_same_shape(param, grad, op);
  require_same_shape(param, m, op);
  require_same_shape(param, v, op);
  require_finite(grad, op, "grad");
  if (t == 0) throw StateError("adam_update: step counter must be incremented before the update");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double m_hat = mi / c1;
    const double v_hat = vi / c2;
    param[i] = static_cast<T>(double(param[i]) -
                              cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
  }
}

/// Increments the store's step counter and updates every parameter from its
/// gradient slot.
template <typename T>
void adam_step(ParamStore<T>& store, const AdamConfig& cfg) {
  store.set_step(store.step() + 1);
  for (auto& p : store) adam_update(p.value, p.grad, p.m, p.v, store.step(), cfg);
}

template <typename T>
void adam_step(AutoencoderModel<T>& model, const AdamConfig& cfg) {
  adam_step(model.encoder().params(), cfg);
  adam_step(model.decoder().params(), cfg);
}

}  // namespace caedet
