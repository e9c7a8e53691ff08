#pragma once

// Frame decoding and encoding. Everything else in the library sees frames as
// Tensor<float> [H,W,1] with values in [0,1]; only this header knows about the
// codec library.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "caedet/error.hpp"
#include "caedet/tensor.hpp"

namespace caedet {

inline bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".tif" || ext == ".tiff" || ext == ".png" || ext == ".bmp" || ext == ".jpg" ||
         ext == ".jpeg" || ext == ".pgm";
}

/// Reads an image as a single-channel frame scaled to [0,1]. Colour images
/// are averaged over their first three channels.
inline Tensor<float> read_grayscale(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) throw IoError("cannot read image " + path.string());
  double scale = 1.0;
  switch (img.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    case CV_32F: case CV_64F: scale = 1.0; break;
    default: throw IoError("unsupported pixel depth in " + path.string());
  }
  cv::Mat f;
  img.convertTo(f, CV_32F, scale);
  const int channels = f.channels();
  const int used = channels >= 3 ? 3 : 1;
  Tensor<float> out({static_cast<std::size_t>(f.rows), static_cast<std::size_t>(f.cols), 1});
  for (int r = 0; r < f.rows; ++r) {
    const float* row = f.ptr<float>(r);
    for (int c = 0; c < f.cols; ++c) {
      float acc = 0;
      for (int k = 0; k < used; ++k) acc += row[c * channels + k];
      const float v = acc / static_cast<float>(used);
      out[static_cast<std::size_t>(r) * f.cols + c] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    }
  }
  return out;
}

/// Writes a [H,W,1] frame as an 8-bit grayscale PNG (values rounded to /255).
inline void write_grayscale_png(const std::filesystem::path& path, const Tensor<float>& frame) {
  if (frame.rank() != 3 || frame.dim(2) != 1) {
    throw DimensionError("write_grayscale_png: frame must be [H,W,1], got " +
                         to_string(frame.shape()));
  }
  cv::Mat img(static_cast<int>(frame.dim(0)), static_cast<int>(frame.dim(1)), CV_8UC1);
  for (int r = 0; r < img.rows; ++r) {
    auto* row = img.ptr<std::uint8_t>(r);
    for (int c = 0; c < img.cols; ++c) {
      const float v = frame[static_cast<std::size_t>(r) * img.cols + c];
      row[c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    }
  }
  if (!cv::imwrite(path.string(), img)) throw IoError("cannot write image " + path.string());
}

}  // namespace caedet
