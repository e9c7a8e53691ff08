#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "caedet/error.hpp"
#include "caedet/kernels.hpp"
#include "caedet/tensor.hpp"

namespace caedet {

enum class LayerKind { Conv2D, Conv2DTranspose, Dense, Activation, Flatten, Reshape };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2D: return "Conv2D";
    case LayerKind::Conv2DTranspose: return "Conv2DTranspose";
    case LayerKind::Dense: return "Dense";
    case LayerKind::Activation: return "Activation";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::Reshape: return "Reshape";
  }
  return "?";
}

/// Declarative description of one layer. Only the fields relevant to `kind`
/// are read. Shapes exclude the batch axis.
struct LayerSpec {
  LayerKind kind = LayerKind::Flatten;
  ConvGeometry geometry{};
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Activation activation = Activation::ReLU;
  Shape target{};

  static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel = 3,
                          std::size_t stride = 2) {
    LayerSpec s;
    s.kind = LayerKind::Conv2D;
    s.geometry = {kernel, kernel, stride, Padding::Same, in_ch, out_ch};
    return s;
  }
  static LayerSpec conv_transpose2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel = 3,
                                    std::size_t stride = 2) {
    LayerSpec s = conv2d(in_ch, out_ch, kernel, stride);
    s.kind = LayerKind::Conv2DTranspose;
    return s;
  }
  static LayerSpec dense(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in_features = in;
    s.out_features = out;
    return s;
  }
  static LayerSpec act(Activation a) {
    LayerSpec s;
    s.kind = LayerKind::Activation;
    s.activation = a;
    return s;
  }
  static LayerSpec flatten() { return LayerSpec{}; }
  static LayerSpec reshape(Shape target) {
    LayerSpec s;
    s.kind = LayerKind::Reshape;
    s.target = std::move(target);
    return s;
  }

  bool has_params() const {
    return kind == LayerKind::Conv2D || kind == LayerKind::Conv2DTranspose ||
           kind == LayerKind::Dense;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Shape of the layer output for a batched input shape. Throws DimensionError
/// when the input cannot feed this layer.
inline Shape output_shape(const LayerSpec& spec, const Shape& in) {
  const char* op = to_string(spec.kind);
  auto need_rank = [&](std::size_t r) {
    if (in.size() != r) {
      throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) +
                           " input, got " + to_string(in));
    }
  };
  switch (spec.kind) {
    case LayerKind::Conv2D:
      need_rank(4);
      require_axis(in[3], spec.geometry.in_channels, op, "input", 3, "channels");
      return conv2d_output_shape(in, spec.geometry);
    case LayerKind::Conv2DTranspose:
      need_rank(4);
      require_axis(in[3], spec.geometry.in_channels, op, "input", 3, "channels");
      return conv_transpose2d_output_shape(in, spec.geometry);
    case LayerKind::Dense:
      need_rank(2);
      require_axis(in[1], spec.in_features, op, "input", 1, "features");
      return {in[0], spec.out_features};
    case LayerKind::Activation:
      return in;
    case LayerKind::Flatten: {
      if (in.size() < 2) throw DimensionError("Flatten: input needs a batch axis and data axes");
      return {in[0], element_count(Shape(in.begin() + 1, in.end()))};
    }
    case LayerKind::Reshape: {
      need_rank(2);
      require_axis(in[1], element_count(spec.target), op, "input", 1, "features");
      Shape out{in[0]};
      out.insert(out.end(), spec.target.begin(), spec.target.end());
      return out;
    }
  }
  throw ConfigError("unknown layer kind");
}

inline std::size_t parameter_count(const LayerSpec& spec) {
  const ConvGeometry& g = spec.geometry;
  switch (spec.kind) {
    case LayerKind::Conv2D:
    case LayerKind::Conv2DTranspose:
      return g.kernel_height * g.kernel_width * g.in_channels * g.out_channels + g.out_channels;
    case LayerKind::Dense:
      return spec.in_features * spec.out_features + spec.out_features;
    default:
      return 0;
  }
}

/// Shape of the weight tensor: conv kernels are [kh,kw,in,out], transposed
/// conv kernels [kh,kw,out,in], dense weights [in,out].
inline Shape weight_shape(const LayerSpec& spec) {
  const ConvGeometry& g = spec.geometry;
  switch (spec.kind) {
    case LayerKind::Conv2D:
      return {g.kernel_height, g.kernel_width, g.in_channels, g.out_channels};
    case LayerKind::Conv2DTranspose:
      return {g.kernel_height, g.kernel_width, g.out_channels, g.in_channels};
    case LayerKind::Dense:
      return {spec.in_features, spec.out_features};
    default:
      throw ConfigError(std::string(to_string(spec.kind)) + " has no weights");
  }
}

/// Glorot-uniform limit sqrt(6 / (fan_in + fan_out)).
inline double glorot_limit(const LayerSpec& spec) {
  const ConvGeometry& g = spec.geometry;
  double fans = 0;
  if (spec.kind == LayerKind::Dense) {
    fans = static_cast<double>(spec.in_features + spec.out_features);
  } else {
    fans = static_cast<double>(g.kernel_height * g.kernel_width * (g.in_channels + g.out_channels));
  }
  return std::sqrt(6.0 / fans);
}

template <typename T>
struct InitialParams {
  Tensor<T> weights;
  Tensor<T> bias;
};

/// Glorot-uniform weights and zero bias, reproducible from the seed.
template <typename T>
InitialParams<T> init_params(const LayerSpec& spec, std::uint64_t seed) {
  if (!spec.has_params()) {
    throw ConfigError(std::string("init_params: ") + to_string(spec.kind) + " has no parameters");
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::mt19937_64 rng(seq);
  const double limit = glorot_limit(spec);
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<T> w(weight_shape(spec));
  for (T& v : w.data()) v = static_cast<T>(dist(rng));
  const std::size_t out = spec.kind == LayerKind::Dense ? spec.out_features
                                                        : spec.geometry.out_channels;
  return {std::move(w), Tensor<T>({out})};
}

/// A learnable tensor with its gradient slot and Adam moments.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> m;
  Tensor<T> v;

  Parameter(std::string n, Tensor<T> init)
      : name(std::move(n)),
        value(std::move(init)),
        grad(value.shape()),
        m(value.shape()),
        v(value.shape()) {}
};

template <typename T>
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor<T> value) {
    entries_.emplace_back(std::move(name), std::move(value));
    return entries_.size() - 1;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  Parameter<T>& operator[](std::size_t i) { return entries_.at(i); }
  const Parameter<T>& operator[](std::size_t i) const { return entries_.at(i); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grads() {
    for (auto& p : entries_) p.grad.fill(T{0});
  }

  /// Optimizer steps taken so far.
  std::uint64_t step() const noexcept { return step_; }
  void set_step(std::uint64_t t) noexcept { step_ = t; }

  void reset_moments() {
    for (auto& p : entries_) {
      p.m.fill(T{0});
      p.v.fill(T{0});
    }
    step_ = 0;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : entries_) n += p.value.size();
    return n;
  }

 private:
  std::vector<Parameter<T>> entries_;
  std::uint64_t step_ = 0;
};

/// Stateful layer: spec, indices of its parameters in a ParamStore, and the
/// forward cache needed by backward. The cache is consumed by backward.
template <typename T>
class Layer {
 public:
  Layer(std::string name, LayerSpec spec) : name_(std::move(name)), spec_(std::move(spec)) {}

  const std::string& name() const noexcept { return name_; }
  const LayerSpec& spec() const noexcept { return spec_; }

  /// Registers this layer's parameters in `store`, initialized from `seed`.
  void bind(ParamStore<T>& store, std::uint64_t seed) {
    if (!spec_.has_params()) return;
    auto init = init_params<T>(spec_, seed);
    weights_ = store.add(name_ + (spec_.kind == LayerKind::Dense ? ".weights" : ".kernel"),
                         std::move(init.weights));
    bias_ = store.add(name_ + ".bias", std::move(init.bias));
  }

  Tensor<T> forward(ParamStore<T>& store, const Tensor<T>& x) {
    const Shape out_shape = output_shape(spec_, x.shape());
    cache_.reset();
    Tensor<T> y = compute(store, x, out_shape);
    cache_.emplace(x);
    return y;
  }

  /// Returns the input gradient and adds parameter gradients into the store.
  Tensor<T> backward(ParamStore<T>& store, const Tensor<T>& grad_out) {
    if (!cache_) {
      throw StateError(name_ + ": backward called without a preceding forward");
    }
    const Tensor<T> x = std::move(*cache_);
    cache_.reset();
    const Shape out_shape = output_shape(spec_, x.shape());
    if (grad_out.shape() != out_shape) {
      throw DimensionError(name_ + ": grad_out shape " + to_string(grad_out.shape()) +
                           " does not match forward output " + to_string(out_shape));
    }
    switch (spec_.kind) {
      case LayerKind::Conv2D: {
        auto g = conv2d_vjp(x, store[*weights_].value, spec_.geometry, grad_out);
        accumulate(store, g.kernel, g.bias);
        return std::move(g.input);
      }
      case LayerKind::Conv2DTranspose: {
        auto g = conv_transpose2d_vjp(x, store[*weights_].value, spec_.geometry, grad_out);
        accumulate(store, g.kernel, g.bias);
        return std::move(g.input);
      }
      case LayerKind::Dense: {
        auto g = dense_vjp(x, store[*weights_].value, grad_out);
        accumulate(store, g.weights, g.bias);
        return std::move(g.input);
      }
      case LayerKind::Activation:
        return activation_vjp(x, spec_.activation, grad_out);
      case LayerKind::Flatten:
      case LayerKind::Reshape:
        return grad_out.reshaped(x.shape());
    }
    throw ConfigError("unknown layer kind");
  }

  bool has_cache() const noexcept { return cache_.has_value(); }
  void clear_cache() noexcept { cache_.reset(); }

 private:
  Tensor<T> compute(ParamStore<T>& store, const Tensor<T>& x, const Shape& out_shape) const {
    switch (spec_.kind) {
      case LayerKind::Conv2D:
        return conv2d_forward(x, store[*weights_].value, store[*bias_].value, spec_.geometry);
      case LayerKind::Conv2DTranspose:
        return conv_transpose2d_forward(x, store[*weights_].value, store[*bias_].value,
                                        spec_.geometry);
      case LayerKind::Dense:
        return dense_forward(x, store[*weights_].value, store[*bias_].value);
      case LayerKind::Activation:
        return activation_forward(x, spec_.activation);
      case LayerKind::Flatten:
      case LayerKind::Reshape:
        return x.reshaped(out_shape);
    }
    throw ConfigError("unknown layer kind");
  }

  void accumulate(ParamStore<T>& store, const Tensor<T>& gw, const Tensor<T>& gb) {
    auto& w = store[*weights_].grad;
    auto& b = store[*bias_].grad;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += gw[i];
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += gb[i];
  }

  std::string name_;
  LayerSpec spec_;
  std::optional<std::size_t> weights_;
  std::optional<std::size_t> bias_;
  std::optional<Tensor<T>> cache_;
};

/// Non-owning view of a parameter and its gradient, as consumed by grad_check.
template <typename T>
struct ParamRef {
  Tensor<T>* value;
  Tensor<T>* grad;
};

/// splitmix64 finalizer; derives per-layer seeds from a model seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
class Sequential {
 public:
  Sequential() = default;

  /// Appends a layer; its parameters are initialized from mix_seed(seed, index).
  Layer<T>& add(std::string name, LayerSpec spec, std::uint64_t seed) {
    layers_.emplace_back(std::move(name), std::move(spec));
    layers_.back().bind(store_, mix_seed(seed, layers_.size() - 1));
    return layers_.back();
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> h = x;
    for (auto& layer : layers_) h = layer.forward(store_, h);
    return h;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    Tensor<T> g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = it->backward(store_, g);
    return g;
  }

  Shape output_shape(const Shape& input) const {
    Shape s = input;
    for (const auto& layer : layers_) s = caedet::output_shape(layer.spec(), s);
    return s;
  }

  void zero_grads() { store_.zero_grads(); }

  std::vector<ParamRef<T>> param_refs() {
    std::vector<ParamRef<T>> refs;
    for (auto& p : store_) refs.push_back({&p.value, &p.grad});
    return refs;
  }

  std::size_t parameter_count() const { return store_.element_count(); }

  ParamStore<T>& params() noexcept { return store_; }
  const ParamStore<T>& params() const noexcept { return store_; }
  const std::vector<Layer<T>>& layers() const noexcept { return layers_; }
  std::size_t size() const noexcept { return layers_.size(); }

 private:
  ParamStore<T> store_;
  std::vector<Layer<T>> layers_;
};

}  // namespace caedet
