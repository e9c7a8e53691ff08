#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <utility>
#include <random>
#include <string>

#include "caedet/grad_check.hpp"
#include "caedet/model.hpp"
#include "caedet/tensor.hpp"

namespace caedet::testing {

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(shape);
  for (double& v : t.data()) v = d(rng);
  return t;
}

/// Central differences of a scalar function of one tensor argument.
inline Tensor<double> numeric_gradient(const std::function<double(const Tensor<double>&)>& f,
                                       Tensor<double> x, double eps = 1e-5) {
  Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = f(x);
    x[i] = saved - eps;
    const double down = f(x);
    x[i] = saved;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

/// Worst per-element relative error, same metric as grad_check.
inline double max_relative_error(const Tensor<double>& analytic, const Tensor<double>& numeric) {
  double scale = 0;
  for (double v : analytic.data()) scale = std::max(scale, std::abs(v));
  const double floor = std::max(kGradCheckScaleFloor * scale, 1e-12);
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, gradient_relative_error(analytic[i], numeric[i], floor));
  }
  return worst;
}

/// Moves every bias off its zero init. With zero biases a ReLU unit fed only by
/// dead neighbours sits exactly on its kink, where central differences see half
/// the slope.
template <typename Net>
void randomize_biases(Net& net, std::mt19937_64& rng, double scale = 0.1) {
  std::uniform_real_distribution<double> d(-scale, scale);
  for (auto& ref : net.param_refs()) {
    if (ref.value->rank() == 1) {
      for (double& v : ref.value->data()) v = d(rng);
    }
  }
}

/// Smallest |pre-activation| feeding any ReLU of `net` on input `x`, and the
/// network output. Central differences are only valid where no perturbation
/// moves a pre-activation across zero.
template <typename T>
std::pair<double, Tensor<T>> relu_margin(Sequential<T>& net, Tensor<T> x) {
  double margin = std::numeric_limits<double>::infinity();
  for (Layer<T> layer : net.layers()) {
    if (layer.spec().kind == LayerKind::Activation && layer.spec().activation == Activation::ReLU) {
      for (T v : x.data()) margin = std::min(margin, std::abs(static_cast<double>(v)));
    }
    x = layer.forward(net.params(), x);
  }
  return {margin, std::move(x)};
}

template <typename T>
double relu_margin(AutoencoderModel<T>& model, const Tensor<T>& x) {
  auto [enc_margin, code] = relu_margin(model.encoder(), x);
  return std::min(enc_margin, relu_margin(model.decoder(), code).first);
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

/// Direct evaluation of the SAME strided convolution by six nested loops over
/// batch, output rows, output cols, kernel rows, kernel cols and input channels.
/// Padding is derived from scratch here: out = ceil(in/s), total pad =
/// max((out-1)*s + k - in, 0), top/left gets the floor half.
inline Tensor<double> naive_conv2d(const Tensor<double>& x, const Tensor<double>& k,
                                   const Tensor<double>& bias, std::size_t s) {
  const long N = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const long KH = k.dim(0), KW = k.dim(1), Co = k.dim(3);
  const long S = static_cast<long>(s);
  const long Ho = (H + S - 1) / S, Wo = (W + S - 1) / S;
  const long top = std::max((Ho - 1) * S + KH - H, 0L) / 2;
  const long left = std::max((Wo - 1) * S + KW - W, 0L) / 2;
  Tensor<double> y({static_cast<std::size_t>(N), static_cast<std::size_t>(Ho),
                    static_cast<std::size_t>(Wo), static_cast<std::size_t>(Co)});
  for (long co = 0; co < Co; ++co)
    for (long n = 0; n < N; ++n)
      for (long i = 0; i < Ho; ++i)
        for (long j = 0; j < Wo; ++j) {
          double acc = bias[co];
          for (long a = 0; a < KH; ++a)
            for (long b = 0; b < KW; ++b)
              for (long c = 0; c < Ci; ++c) {
                const long r = i * S + a - top, q = j * S + b - left;
                if (r < 0 || r >= H || q < 0 || q >= W) continue;
                acc += x[((n * H + r) * W + q) * Ci + c] * k[((a * KW + b) * Ci + c) * Co + co];
              }
          y[((n * Ho + i) * Wo + j) * Co + co] = acc;
        }
  return y;
}

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("caedet-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

}  // namespace caedet::testing
