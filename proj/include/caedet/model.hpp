#pragma once

// The convolutional autoencoder: a four-stage strided Conv2D encoder down to
// a sigmoid bottleneck, and a mirrored Conv2DTranspose decoder back to the
// input frame.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "caedet/error.hpp"
#include "caedet/layers.hpp"
#include "caedet/tensor.hpp"

namespace caedet {

/// Channel widths of the four encoder convolutions at scale 1.
inline constexpr std::array<std::size_t, 4> kEncoderWidths{16, 32, 64, 128};
/// Each conv stage halves height and width.
inline constexpr std::size_t kSpatialReduction = 16;

struct ModelConfig {
  std::size_t input_height = 256;
  std::size_t input_width = 256;
  std::size_t channels = 1;
  std::size_t bottleneck_dim = 32;
  /// Divides every channel width; 1 is the full-size model.
  std::size_t scale_factor = 1;
  std::size_t kernel_size = 3;
  std::uint64_t seed = 42;

  Shape input_shape() const { return {input_height, input_width, channels}; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct NamedSpec {
  std::string name;
  LayerSpec spec;
};

namespace detail {

inline void check_model_dims(const Shape& frame, std::size_t bottleneck, std::size_t scale,
                             std::size_t kernel) {
  if (frame.size() != 3) {
    throw ConfigError("frame shape must be [height,width,channels], got " + to_string(frame));
  }
  if (frame[0] == 0 || frame[1] == 0 || frame[0] % kSpatialReduction != 0 ||
      frame[1] % kSpatialReduction != 0) {
    throw ConfigError("frame height and width must be positive multiples of 16, got " +
                      to_string(frame));
  }
  if (frame[2] == 0) throw ConfigError("frame needs at least one channel");
  if (scale == 0 || kEncoderWidths[0] % scale != 0) {
    throw ConfigError("scale_factor " + std::to_string(scale) +
                      " must divide every channel width (one of 1, 2, 4, 8, 16)");
  }
  if (bottleneck == 0) throw ConfigError("bottleneck_dim must be positive");
  if (kernel == 0) throw ConfigError("kernel_size must be positive");
}

}  // namespace detail

inline void validate(const ModelConfig& c) {
  detail::check_model_dims(c.input_shape(), c.bottleneck_dim, c.scale_factor, c.kernel_size);
}

/// Encoder layer list: four Conv2D+ReLU stages, Flatten, Dense+Sigmoid.
inline std::vector<NamedSpec> build_encoder(const Shape& input_shape, std::size_t bottleneck_dim,
                                            std::size_t scale_factor, std::size_t kernel = 3) {
  detail::check_model_dims(input_shape, bottleneck_dim, scale_factor, kernel);
  std::vector<NamedSpec> layers;
  std::size_t in_ch = input_shape[2];
  for (std::size_t i = 0; i < kEncoderWidths.size(); ++i) {
    const std::size_t out_ch = kEncoderWidths[i] / scale_factor;
    const std::string idx = std::to_string(i + 1);
    layers.push_back({"encoder.conv" + idx, LayerSpec::conv2d(in_ch, out_ch, kernel, 2)});
    layers.push_back({"encoder.relu" + idx, LayerSpec::act(Activation::ReLU)});
    in_ch = out_ch;
  }
  const std::size_t flat = (input_shape[0] / kSpatialReduction) *
                           (input_shape[1] / kSpatialReduction) * in_ch;
  layers.push_back({"encoder.flatten", LayerSpec::flatten()});
  layers.push_back({"encoder.dense", LayerSpec::dense(flat, bottleneck_dim)});
  layers.push_back({"encoder.sigmoid", LayerSpec::act(Activation::Sigmoid)});
  return layers;
}

/// Decoder layer list mirroring build_encoder: Dense+ReLU, Reshape, four
/// Conv2DTranspose stages, the last one Sigmoid.
inline std::vector<NamedSpec> build_decoder(std::size_t bottleneck_dim, const Shape& output_shape,
                                            std::size_t scale_factor, std::size_t kernel = 3) {
  detail::check_model_dims(output_shape, bottleneck_dim, scale_factor, kernel);
  const std::size_t h = output_shape[0] / kSpatialReduction;
  const std::size_t w = output_shape[1] / kSpatialReduction;
  std::size_t in_ch = kEncoderWidths.back() / scale_factor;
  std::vector<NamedSpec> layers;
  layers.push_back({"decoder.dense", LayerSpec::dense(bottleneck_dim, h * w * in_ch)});
  layers.push_back({"decoder.relu0", LayerSpec::act(Activation::ReLU)});
  layers.push_back({"decoder.reshape", LayerSpec::reshape({h, w, in_ch})});
  for (std::size_t i = 0; i < kEncoderWidths.size(); ++i) {
    const bool last = i + 1 == kEncoderWidths.size();
    const std::size_t out_ch =
        last ? output_shape[2] : kEncoderWidths[kEncoderWidths.size() - 2 - i] / scale_factor;
    const std::string idx = std::to_string(i + 1);
    layers.push_back({"decoder.deconv" + idx, LayerSpec::conv_transpose2d(in_ch, out_ch, kernel, 2)});
    if (last) {
      layers.push_back({"decoder.sigmoid", LayerSpec::act(Activation::Sigmoid)});
    } else {
      layers.push_back({"decoder.relu" + idx, LayerSpec::act(Activation::ReLU)});
    }
    in_ch = out_ch;
  }
  return layers;
}

/// Per-sample output shape after every layer, starting from `input` (no batch axis).
inline std::vector<Shape> shape_chain(const std::vector<NamedSpec>& layers, const Shape& input) {
  std::vector<Shape> chain;
  Shape s{1};
  s.insert(s.end(), input.begin(), input.end());
  for (const auto& l : layers) {
    s = output_shape(l.spec, s);
    chain.emplace_back(s.begin() + 1, s.end());
  }
  return chain;
}

inline std::size_t parameter_count(const std::vector<NamedSpec>& layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += parameter_count(l.spec);
  return n;
}

template <typename T>
class AutoencoderModel {
 public:
  explicit AutoencoderModel(ModelConfig config) : config_(config) {
    validate(config_);
    const Shape frame = config_.input_shape();
    const std::uint64_t enc_seed = mix_seed(config_.seed, 0);
    const std::uint64_t dec_seed = mix_seed(config_.seed, 1);
    for (auto& l : build_encoder(frame, config_.bottleneck_dim, config_.scale_factor,
                                 config_.kernel_size)) {
      encoder_.add(std::move(l.name), std::move(l.spec), enc_seed);
    }
    for (auto& l : build_decoder(config_.bottleneck_dim, frame, config_.scale_factor,
                                 config_.kernel_size)) {
      decoder_.add(std::move(l.name), std::move(l.spec), dec_seed);
    }
  }

  const ModelConfig& config() const noexcept { return config_; }

  Tensor<T> encode(const Tensor<T>& batch) {
    check_batch(batch);
    return encoder_.forward(batch);
  }

  Tensor<T> decode(const Tensor<T>& code) { return decoder_.forward(code); }

  /// decode(encode(batch)); batch is [N,H,W,C] matching the configured frame.
  Tensor<T> forward(const Tensor<T>& batch) { return decode(encode(batch)); }

  /// Back-propagates a gradient on the reconstruction; returns the input gradient.
  Tensor<T> backward(const Tensor<T>& grad_out) {
    return encoder_.backward(decoder_.backward(grad_out));
  }

  void zero_grads() {
    encoder_.zero_grads();
    decoder_.zero_grads();
  }

  /// All parameters in build order: encoder then decoder.
  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& p : encoder_.params()) out.push_back(&p);
    for (auto& p : decoder_.params()) out.push_back(&p);
    return out;
  }
  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> out;
    for (const auto& p : encoder_.params()) out.push_back(&p);
    for (const auto& p : decoder_.params()) out.push_back(&p);
    return out;
  }

  std::vector<ParamRef<T>> param_refs() {
    auto refs = encoder_.param_refs();
    for (auto r : decoder_.param_refs()) refs.push_back(r);
    return refs;
  }

  std::size_t parameter_count() const {
    return encoder_.parameter_count() + decoder_.parameter_count();
  }

  /// Optimizer step counter shared by both halves.
  std::uint64_t step() const noexcept { return encoder_.params().step(); }
  void set_step(std::uint64_t t) {
    encoder_.params().set_step(t);
    decoder_.params().set_step(t);
  }

  Sequential<T>& encoder() noexcept { return encoder_; }
  Sequential<T>& decoder() noexcept { return decoder_; }
  const Sequential<T>& encoder() const noexcept { return encoder_; }
  const Sequential<T>& decoder() const noexcept { return decoder_; }

 private:
  void check_batch(const Tensor<T>& batch) const {
    require_rank(batch, 4, "AutoencoderModel::forward", "batch");
    require_axis(batch.dim(1), config_.input_height, "AutoencoderModel::forward", "batch", 1,
                 "height");
    require_axis(batch.dim(2), config_.input_width, "AutoencoderModel::forward", "batch", 2,
                 "width");
    require_axis(batch.dim(3), config_.channels, "AutoencoderModel::forward", "batch", 3,
                 "channels");
  }

  ModelConfig config_;
  Sequential<T> encoder_;
  Sequential<T> decoder_;
};

}  // namespace caedet
