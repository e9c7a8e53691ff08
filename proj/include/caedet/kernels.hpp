#pragma once

// Numerical kernels for the autoencoder: SAME-padded strided convolution, its
// exact adjoint (transposed convolution), dense layers and activations, each
// with a vector-Jacobian product. All functions are pure.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <tuple>

#include "caedet/error.hpp"
#include "caedet/parallel.hpp"
#include "caedet/tensor.hpp"

namespace caedet {

enum class Padding { Same };

struct ConvGeometry {
  std::size_t kernel_height = 3;
  std::size_t kernel_width = 3;
  std::size_t stride = 2;
  Padding padding = Padding::Same;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

/// Output size and zero padding of one spatial axis under SAME padding. Odd
/// totals put the extra row/column on the high side.
struct AxisPadding {
  std::size_t out;
  std::size_t low;
  std::size_t high;
};

inline AxisPadding same_padding(std::size_t in, std::size_t kernel, std::size_t stride) {
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t span = (out - 1) * stride + kernel;
  const std::size_t total = span > in ? span - in : 0;
  return {out, total / 2, total - total / 2};
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> kernel;
  Tensor<T> bias;
};

template <typename T>
struct DenseGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

enum class Activation { ReLU, Sigmoid };

inline const char* to_string(Activation a) { return a == Activation::ReLU ? "relu" : "sigmoid"; }

namespace detail {

inline void check_geometry(const ConvGeometry& g, const char* op) {
  if (g.kernel_height == 0 || g.kernel_width == 0 || g.stride == 0 || g.in_channels == 0 ||
      g.out_channels == 0) {
    throw DimensionError(std::string(op) + ": geometry fields must all be positive");
  }
}

// y[n,i,j,co] = sum_{a,b,ci} x[n, i*s+a-pt, j*s+b-pl, ci] * k[a,b,ci,co]
template <typename T>
Tensor<T> conv_apply(const Tensor<T>& x, const Tensor<T>& k, std::size_t stride) {
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const std::size_t KH = k.dim(0), KW = k.dim(1), Co = k.dim(3);
  const AxisPadding ph = same_padding(H, KH, stride);
  const AxisPadding pw = same_padding(W, KW, stride);
  Tensor<T> y({N, ph.out, pw.out, Co});
  const T* xd = x.data().data();
  const T* kd = k.data().data();
  T* yd = y.data().data();
  const std::size_t work = N * ph.out * pw.out * KH * KW * Ci * Co;
  parallel_for(0, N, work, [&](std::size_t n) {
    for (std::size_t i = 0; i < ph.out; ++i) {
      for (std::size_t j = 0; j < pw.out; ++j) {
        T* yrow = yd + ((n * ph.out + i) * pw.out + j) * Co;
        for (std::size_t a = 0; a < KH; ++a) {
          const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(i * stride + a) -
                                    static_cast<std::ptrdiff_t>(ph.low);
          if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t b = 0; b < KW; ++b) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(j * stride + b) -
                                      static_cast<std::ptrdiff_t>(pw.low);
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
            const T* xrow = xd + ((n * H + yy) * W + xx) * Ci;
            const T* ktap = kd + (a * KW + b) * Ci * Co;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const T v = xrow[ci];
              const T* kp = ktap + ci * Co;
              for (std::size_t co = 0; co < Co; ++co) yrow[co] += v * kp[co];
            }
          }
        }
      }
    }
  });
  return y;
}

// Adjoint of conv_apply for a conv whose input was H x W: scatters each output
// gradient back through the kernel taps.
template <typename T>
Tensor<T> conv_adjoint(const Tensor<T>& gy, const Tensor<T>& k, std::size_t stride,
                       std::size_t H, std::size_t W) {
  const std::size_t N = gy.dim(0), Ho = gy.dim(1), Wo = gy.dim(2), Co = gy.dim(3);
  const std::size_t KH = k.dim(0), KW = k.dim(1), Ci = k.dim(2);
  const AxisPadding ph = same_padding(H, KH, stride);
  const AxisPadding pw = same_padding(W, KW, stride);
  Tensor<T> gx({N, H, W, Ci});
  const T* gyd = gy.data().data();
  const T* kd = k.data().data();
  T* gxd = gx.data().data();
  const std::size_t work = N * Ho * Wo * KH * KW * Ci * Co;
  parallel_for(0, N, work, [&](std::size_t n) {
    for (std::size_t i = 0; i < Ho; ++i) {
      for (std::size_t j = 0; j < Wo; ++j) {
        const T* gyrow = gyd + ((n * Ho + i) * Wo + j) * Co;
        for (std::size_t a = 0; a < KH; ++a) {
          const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(i * stride + a) -
                                    static_cast<std::ptrdiff_t>(ph.low);
          if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t b = 0; b < KW; ++b) {
            const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(j * stride + b) -
                                      static_cast<std::ptrdiff_t>(pw.low);
            if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
            T* gxrow = gxd + ((n * H + yy) * W + xx) * Ci;
            const T* ktap = kd + (a * KW + b) * Ci * Co;
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const T* kp = ktap + ci * Co;
              T acc{0};
              for (std::size_t co = 0; co < Co; ++co) acc += kp[co] * gyrow[co];
              gxrow[ci] += acc;
            }
          }
        }
      }
    }
  });
  return gx;
}

// d/dk of <conv_apply(x, k), gy>, one kernel tap per work item.
template <typename T>
Tensor<T> conv_kernel_grad(const Tensor<T>& x, const Tensor<T>& gy, std::size_t KH,
                           std::size_t KW, std::size_t stride) {
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const std::size_t Ho = gy.dim(1), Wo = gy.dim(2), Co = gy.dim(3);
  const AxisPadding ph = same_padding(H, KH, stride);
  const AxisPadding pw = same_padding(W, KW, stride);
  Tensor<T> gk({KH, KW, Ci, Co});
  const T* xd = x.data().data();
  const T* gyd = gy.data().data();
  T* gkd = gk.data().data();
  const std::size_t work = N * Ho * Wo * KH * KW * Ci * Co;
  parallel_for(0, KH * KW, work, [&](std::size_t tap) {
    const std::size_t a = tap / KW, b = tap % KW;
    T* gtap = gkd + tap * Ci * Co;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t i = 0; i < Ho; ++i) {
        const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(i * stride + a) -
                                  static_cast<std::ptrdiff_t>(ph.low);
        if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t j = 0; j < Wo; ++j) {
          const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(j * stride + b) -
                                    static_cast<std::ptrdiff_t>(pw.low);
          if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(W)) continue;
          const T* xrow = xd + ((n * H + yy) * W + xx) * Ci;
          const T* gyrow = gyd + ((n * Ho + i) * Wo + j) * Co;
          for (std::size_t ci = 0; ci < Ci; ++ci) {
            const T v = xrow[ci];
            T* gp = gtap + ci * Co;
            for (std::size_t co = 0; co < Co; ++co) gp[co] += v * gyrow[co];
          }
        }
      }
    }
  });
  return gk;
}

template <typename T>
Tensor<T> channel_sums(const Tensor<T>& g) {
  const std::size_t C = g.dim(g.rank() - 1);
  Tensor<T> out({C});
  for (std::size_t i = 0; i < g.size(); ++i) out[i % C] += g[i];
  return out;
}

template <typename T>
void add_channel_bias(Tensor<T>& y, const Tensor<T>& bias) {
  const std::size_t C = bias.size();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias[i % C];
}

template <typename T>
void check_conv_args(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                     const ConvGeometry& g, std::size_t kernel_in, std::size_t kernel_out,
                     const char* op) {
  check_geometry(g, op);
  require_rank(input, 4, op, "input");
  require_rank(kernel, 4, op, "kernel");
  require_rank(bias, 1, op, "bias");
  require_axis(kernel.dim(0), g.kernel_height, op, "kernel", 0, "kernel height");
  require_axis(kernel.dim(1), g.kernel_width, op, "kernel", 1, "kernel width");
  require_axis(kernel.dim(2), kernel_in, op, "kernel", 2, "kernel input channels");
  require_axis(kernel.dim(3), kernel_out, op, "kernel", 3, "kernel output channels");
  require_axis(bias.dim(0), g.out_channels, op, "bias", 0, "channels");
  require_axis(input.dim(3), g.in_channels, op, "input", 3, "channels");
  require_finite(input, op, "input");
  require_finite(kernel, op, "kernel");
  require_finite(bias, op, "bias");
}

template <typename T>
void check_grad_out(const Tensor<T>& grad_out, const Shape& expected, const char* op) {
  if (grad_out.rank() != expected.size()) {
    throw DimensionError(std::string(op) + ": grad_out shape " + to_string(grad_out.shape()) +
                         " does not match output shape " + to_string(expected));
  }
  static const char* names4[] = {"batch", "height", "width", "channels"};
  for (std::size_t i = 0; i < expected.size(); ++i) {
    require_axis(grad_out.dim(i), expected[i], op, "grad_out", i,
                 expected.size() == 4 ? names4[i] : "features");
  }
  require_finite(grad_out, op, "grad_out");
}

}  // namespace detail

inline Shape conv2d_output_shape(const Shape& input, const ConvGeometry& g) {
  return {input.at(0), same_padding(input.at(1), g.kernel_height, g.stride).out,
          same_padding(input.at(2), g.kernel_width, g.stride).out, g.out_channels};
}

inline Shape conv_transpose2d_output_shape(const Shape& input, const ConvGeometry& g) {
  return {input.at(0), input.at(1) * g.stride, input.at(2) * g.stride, g.out_channels};
}

/// Strided SAME convolution. input [N,H,W,Cin], kernel [kh,kw,Cin,Cout], bias [Cout].
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                         const ConvGeometry& geom) {
  detail::check_conv_args(input, kernel, bias, geom, geom.in_channels, geom.out_channels,
                          "conv2d_forward");
  Tensor<T> out = detail::conv_apply(input, kernel, geom.stride);
  detail::add_channel_bias(out, bias);
  return out;
}

template <typename T>
ConvGrads<T> conv2d_vjp(const Tensor<T>& input, const Tensor<T>& kernel, const ConvGeometry& geom,
                        const Tensor<T>& grad_out) {
  const char* op = "conv2d_vjp";
  detail::check_conv_args(input, kernel, Tensor<T>({geom.out_channels}), geom, geom.in_channels,
                          geom.out_channels, op);
  detail::check_grad_out(grad_out, conv2d_output_shape(input.shape(), geom), op);
  return {detail::conv_adjoint(grad_out, kernel, geom.stride, input.dim(1), input.dim(2)),
          detail::conv_kernel_grad(input, grad_out, geom.kernel_height, geom.kernel_width,
                                   geom.stride),
          detail::channel_sums(grad_out)};
}

/// Transposed convolution, defined as the adjoint of conv2d_forward with the
/// same geometry plus a bias. input [N,h,w,Cin], kernel [kh,kw,Cout,Cin],
/// output [N,h*s,w*s,Cout].
template <typename T>
Tensor<T> conv_transpose2d_forward(const Tensor<T>& input, const Tensor<T>& kernel,
                                   const Tensor<T>& bias, const ConvGeometry& geom) {
  detail::check_conv_args(input, kernel, bias, geom, geom.out_channels, geom.in_channels,
                          "conv_transpose2d_forward");
  Tensor<T> out = detail::conv_adjoint(input, kernel, geom.stride, input.dim(1) * geom.stride,
                                       input.dim(2) * geom.stride);
  detail::add_channel_bias(out, bias);
  return out;
}

template <typename T>
ConvGrads<T> conv_transpose2d_vjp(const Tensor<T>& input, const Tensor<T>& kernel,
                                  const ConvGeometry& geom, const Tensor<T>& grad_out) {
  const char* op = "conv_transpose2d_vjp";
  detail::check_conv_args(input, kernel, Tensor<T>({geom.out_channels}), geom, geom.out_channels,
                          geom.in_channels, op);
  detail::check_grad_out(grad_out, conv_transpose2d_output_shape(input.shape(), geom), op);
  // The adjoint of the adjoint is the forward convolution itself.
  return {detail::conv_apply(grad_out, kernel, geom.stride),
          detail::conv_kernel_grad(grad_out, input, geom.kernel_height, geom.kernel_width,
                                   geom.stride),
          detail::channel_sums(grad_out)};
}

/// out = input * weights + bias. input [N,d_in], weights [d_in,d_out].
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  const char* op = "dense_forward";
  require_rank(input, 2, op, "input");
  require_rank(weights, 2, op, "weights");
  require_rank(bias, 1, op, "bias");
  require_axis(input.dim(1), weights.dim(0), op, "input", 1, "features");
  require_axis(bias.dim(0), weights.dim(1), op, "bias", 0, "features");
  require_finite(input, op, "input");
  require_finite(weights, op, "weights");
  require_finite(bias, op, "bias");
  const std::size_t N = input.dim(0), D = weights.dim(0), O = weights.dim(1);
  Tensor<T> out({N, O});
  const T* x = input.data().data();
  const T* w = weights.data().data();
  T* y = out.data().data();
  parallel_for(0, N, N * D * O, [&](std::size_t n) {
    T* yrow = y + n * O;
    for (std::size_t o = 0; o < O; ++o) yrow[o] = bias[o];
    for (std::size_t d = 0; d < D; ++d) {
      const T v = x[n * D + d];
      const T* wrow = w + d * O;
      for (std::size_t o = 0; o < O; ++o) yrow[o] += v * wrow[o];
    }
  });
  return out;
}

template <typename T>
DenseGrads<T> dense_vjp(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out) {
  const char* op = "dense_vjp";
  require_rank(input, 2, op, "input");
  require_rank(weights, 2, op, "weights");
  require_axis(input.dim(1), weights.dim(0), op, "input", 1, "features");
  require_finite(input, op, "input");
  require_finite(weights, op, "weights");
  detail::check_grad_out(grad_out, {input.dim(0), weights.dim(1)}, op);
  const std::size_t N = input.dim(0), D = weights.dim(0), O = weights.dim(1);
  Tensor<T> gx({N, D});
  Tensor<T> gw({D, O});
  const T* x = input.data().data();
  const T* w = weights.data().data();
  const T* g = grad_out.data().data();
  parallel_for(0, N, N * D * O, [&](std::size_t n) {
    const T* grow = g + n * O;
    for (std::size_t d = 0; d < D; ++d) {
      const T* wrow = w + d * O;
      T acc{0};
      for (std::size_t o = 0; o < O; ++o) acc += grow[o] * wrow[o];
      gx[n * D + d] = acc;
    }
  });
  parallel_for(0, D, N * D * O, [&](std::size_t d) {
    T* gwrow = gw.data().data() + d * O;
    for (std::size_t n = 0; n < N; ++n) {
      const T v = x[n * D + d];
      const T* grow = g + n * O;
      for (std::size_t o = 0; o < O; ++o) gwrow[o] += v * grow[o];
    }
  });
  return {std::move(gx), std::move(gw), detail::channel_sums(grad_out)};
}

/// Logistic function split on sign so exp never overflows. The result is kept
/// strictly inside (0, 1) even where it would round to an endpoint.
template <typename T>
T sigmoid(T x) {
  T s;
  if (x >= T{0}) {
    s = T{1} / (T{1} + std::exp(-x));
  } else {
    const T e = std::exp(x);
    s = e / (T{1} + e);
  }
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T{1}, T{0});
  return s < lo ? lo : (s > hi ? hi : s);
}

template <typename T>
Tensor<T> activation_forward(const Tensor<T>& input, Activation kind) {
  require_finite(input, "activation_forward", "input");
  Tensor<T> out = input;
  if (kind == Activation::ReLU) {
    for (T& v : out.data()) v = v > T{0} ? v : T{0};
  } else {
    for (T& v : out.data()) v = sigmoid(v);
  }
  return out;
}

/// ReLU uses subgradient 0 at exactly 0.
template <typename T>
Tensor<T> activation_vjp(const Tensor<T>& input, Activation kind, const Tensor<T>& grad_out) {
  const char* op = "activation_vjp";
  require_same_shape(input, grad_out, op);
  require_finite(input, op, "input");
  require_finite(grad_out, op, "grad_out");
  Tensor<T> g = grad_out;
  if (kind == Activation::ReLU) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!(input[i] > T{0})) g[i] = T{0};
    }
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = sigmoid(input[i]);
      g[i] *= s * (T{1} - s);
    }
  }
  return g;
}

}  // namespace caedet
