#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "caedet/data.hpp"
#include "caedet/error.hpp"
#include "caedet/image_io.hpp"
#include "caedet/layers.hpp"
#include "caedet/tensor.hpp"

namespace caedet {

enum class AnomalyType { FastBlob, LargeBlob, Mixed };

inline std::string to_string(AnomalyType t) {
  switch (t) {
    case AnomalyType::FastBlob: return "fast_blob";
    case AnomalyType::LargeBlob: return "large_blob";
    case AnomalyType::Mixed: return "mixed";
  }
  return "?";
}

inline AnomalyType anomaly_type_from_string(const std::string& s) {
  if (s == "fast_blob") return AnomalyType::FastBlob;
  if (s == "large_blob") return AnomalyType::LargeBlob;
  if (s == "mixed") return AnomalyType::Mixed;
  throw ConfigError("unknown anomaly type '" + s + "' (expected fast_blob, large_blob or mixed)");
}

struct Range {
  double lo;
  double hi;
};

/// Scene: a static background (dark gradient, mid-gray walkway band, faint
/// texture) fixed by `seed`, with small bright blobs drifting across it.
/// Anomalous clips add one oversized or fast blob from the onset frame on.
/// `stream` selects independent blob dynamics over the same scene, so a train
/// and a test set can share a background without sharing motion.
struct SyntheticConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t clip_length = 60;
  std::size_t min_blobs = 1;
  std::size_t max_blobs = 3;
  Range blob_radius{1.5, 2.5};
  Range blob_speed{0.3, 1.0};
  double blob_value = 0.9;
  AnomalyType anomaly = AnomalyType::Mixed;
  Range large_radius{6.0, 8.0};
  Range fast_speed{5.0, 8.0};
  double fast_radius = 2.5;
  Range onset_fraction{0.25, 0.5};
  double noise = 0.02;
  std::uint64_t seed = 42;
  std::uint64_t stream = 0;
};

inline void validate(const SyntheticConfig& c) {
  auto range_ok = [](Range r) { return std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo >= 0 && r.lo <= r.hi; };
  if (c.height < 8 || c.width < 8) throw ConfigError("synthetic frames must be at least 8x8");
  if (c.clip_length < 2) throw ConfigError("synthetic clip_length must be at least 2");
  if (c.min_blobs > c.max_blobs) throw ConfigError("synthetic min_blobs exceeds max_blobs");
  if (!range_ok(c.blob_radius) || !range_ok(c.blob_speed) || !range_ok(c.large_radius) ||
      !range_ok(c.fast_speed) || !range_ok(c.onset_fraction) || c.onset_fraction.hi > 1.0) {
    throw ConfigError("synthetic ranges must satisfy 0 <= lo <= hi (onset within [0,1])");
  }
  if (!(c.blob_value >= 0 && c.blob_value <= 1)) throw ConfigError("blob_value must lie in [0,1]");
  if (!(c.noise >= 0 && c.noise <= 0.5)) throw ConfigError("noise must lie in [0, 0.5]");
  if (!(c.fast_radius > 0)) throw ConfigError("fast_radius must be positive");
}

struct SyntheticDataset {
  std::vector<FrameSequence> clips;
  GroundTruth truth;
  std::vector<std::size_t> onsets;  // per clip; clip_length when normal
};

namespace detail {

struct Blob {
  double y, x, vy, vx, radius;
};

inline double uniform(std::mt19937_64& rng, Range r) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

inline Blob spawn_blob(std::mt19937_64& rng, const SyntheticConfig& c, Range radius, Range speed) {
  Blob b{};
  b.radius = uniform(rng, radius);
  b.y = uniform(rng, {b.radius, static_cast<double>(c.height) - b.radius});
  b.x = uniform(rng, {b.radius, static_cast<double>(c.width) - b.radius});
  const double angle = uniform(rng, {0.0, 2.0 * 3.14159265358979323846});
  const double s = uniform(rng, speed);
  b.vy = s * std::sin(angle);
  b.vx = s * std::cos(angle);
  return b;
}

inline void advance(Blob& b, double extent_y, double extent_x) {
  auto step = [](double& p, double& v, double r, double extent) {
    p += v;
    const double lo = r, hi = std::max(r, extent - r);
    for (int i = 0; i < 4 && (p < lo || p > hi); ++i) {
      if (p < lo) p = 2 * lo - p;
      if (p > hi) p = 2 * hi - p;
      v = -v;
    }
    p = std::clamp(p, lo, hi);
  };
  step(b.y, b.vy, b.radius, extent_y);
  step(b.x, b.vx, b.radius, extent_x);
}

/// Paints a disc swept from (y0,x0) to (y1,x1) with one-pixel antialiasing.
inline void paint_capsule(Tensor<float>& frame, double y0, double x0, double y1, double x1,
                          double radius, double value) {
  const long H = static_cast<long>(frame.dim(0)), W = static_cast<long>(frame.dim(1));
  const double dy = y1 - y0, dx = x1 - x0, len2 = dy * dy + dx * dx;
  const long r0 = std::max(0L, static_cast<long>(std::floor(std::min(y0, y1) - radius - 1)));
  const long r1 = std::min(H - 1, static_cast<long>(std::ceil(std::max(y0, y1) + radius + 1)));
  const long c0 = std::max(0L, static_cast<long>(std::floor(std::min(x0, x1) - radius - 1)));
  const long c1 = std::min(W - 1, static_cast<long>(std::ceil(std::max(x0, x1) + radius + 1)));
  for (long r = r0; r <= r1; ++r) {
    for (long c = c0; c <= c1; ++c) {
      const double py = r + 0.5, px = c + 0.5;
      double t = len2 > 0 ? ((py - y0) * dy + (px - x0) * dx) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double ey = py - (y0 + t * dy), ex = px - (x0 + t * dx);
      const double cover = std::clamp(radius + 0.5 - std::sqrt(ey * ey + ex * ex), 0.0, 1.0);
      if (cover <= 0) continue;
      float& p = frame[static_cast<std::size_t>(r * W + c)];
      p = static_cast<float>(p + (value - p) * cover);
    }
  }
}

inline Tensor<float> render_background(const SyntheticConfig& c) {
  std::mt19937_64 rng(mix_seed(c.seed, 0x5ce7e));
  const double base = uniform(rng, {0.15, 0.2});
  const double ramp = uniform(rng, {0.05, 0.1});
  const double band_center = uniform(rng, {0.35, 0.65}) * static_cast<double>(c.height);
  const double band_half = 0.15 * static_cast<double>(c.height);
  const double band_tilt = uniform(rng, {-0.2, 0.2});
  std::uniform_real_distribution<double> tex(-0.03, 0.03);
  Tensor<float> bg({c.height, c.width, 1});
  for (std::size_t r = 0; r < c.height; ++r) {
    for (std::size_t col = 0; col < c.width; ++col) {
      const double fx = static_cast<double>(col) / static_cast<double>(c.width);
      const double center = band_center + band_tilt * (static_cast<double>(col) - c.width / 2.0);
      const bool on_band = std::abs(static_cast<double>(r) + 0.5 - center) < band_half;
      const double v = (on_band ? 0.35 : base + ramp * fx) + tex(rng);
      bg[r * c.width + col] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return bg;
}

}  // namespace detail

/// Deterministic in (config, n_clips, anomaly_rate). round(rate * n_clips)
/// clips are anomalous; their frames from the onset on are labeled 1.
inline SyntheticDataset generate_synthetic(const SyntheticConfig& config, std::size_t n_clips,
                                           double anomaly_rate) {
  validate(config);
  if (n_clips == 0) throw ConfigError("synthetic dataset needs at least one clip");
  if (!(anomaly_rate >= 0.0 && anomaly_rate <= 1.0)) {
    throw ConfigError("anomaly_rate must lie in [0,1], got " + std::to_string(anomaly_rate));
  }
  const Tensor<float> background = detail::render_background(config);
  const std::uint64_t stream_seed = mix_seed(config.seed, config.stream + 1);

  std::vector<std::size_t> order(n_clips);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 pick(stream_seed);
  std::shuffle(order.begin(), order.end(), pick);
  const auto n_anomalous =
      static_cast<std::size_t>(std::lround(anomaly_rate * static_cast<double>(n_clips)));
  std::vector<bool> anomalous(n_clips, false);
  for (std::size_t i = 0; i < n_anomalous; ++i) anomalous[order[i]] = true;

  const double H = static_cast<double>(config.height), W = static_cast<double>(config.width);
  SyntheticDataset ds;
  for (std::size_t k = 0; k < n_clips; ++k) {
    std::mt19937_64 rng(mix_seed(stream_seed, k));
    char id[32];
    std::snprintf(id, sizeof id, "clip%03zu", k);
    FrameSequence clip{id, {}, config.height, config.width};

    const auto n_blobs = std::uniform_int_distribution<std::size_t>(config.min_blobs,
                                                                    config.max_blobs)(rng);
    std::vector<detail::Blob> blobs;
    for (std::size_t b = 0; b < n_blobs; ++b) {
      blobs.push_back(detail::spawn_blob(rng, config, config.blob_radius, config.blob_speed));
    }
    std::size_t onset = config.clip_length;
    bool fast = false;
    detail::Blob intruder{};
    if (anomalous[k]) {
      const double f = detail::uniform(rng, config.onset_fraction);
      onset = std::min(config.clip_length - 1,
                       static_cast<std::size_t>(std::floor(f * static_cast<double>(config.clip_length))));
      fast = config.anomaly == AnomalyType::FastBlob ||
             (config.anomaly == AnomalyType::Mixed && std::bernoulli_distribution(0.5)(rng));
      intruder = fast ? detail::spawn_blob(rng, config, {config.fast_radius, config.fast_radius},
                                           config.fast_speed)
                      : detail::spawn_blob(rng, config, config.large_radius, config.blob_speed);
    }
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<std::uint8_t> labels(config.clip_length, 0);
    for (std::size_t t = 0; t < config.clip_length; ++t) {
      Tensor<float> frame = background;
      for (auto& b : blobs) {
        detail::paint_capsule(frame, b.y, b.x, b.y, b.x, b.radius, config.blob_value);
        detail::advance(b, H, W);
      }
      if (t >= onset) {
        labels[t] = 1;
        const double py = intruder.y, px = intruder.x;
        detail::advance(intruder, H, W);
        if (fast) {
          detail::paint_capsule(frame, py, px, intruder.y, intruder.x, intruder.radius,
                                config.blob_value);
        } else {
          detail::paint_capsule(frame, py, px, py, px, intruder.radius, config.blob_value);
        }
      }
      if (config.noise > 0) {
        for (float& v : frame.data()) {
          v = static_cast<float>(std::clamp(v + config.noise * noise(rng), 0.0, 1.0));
        }
      }
      clip.frames.push_back(std::move(frame));
    }
    ds.truth.labels[clip.id] = std::move(labels);
    ds.onsets.push_back(onset);
    ds.clips.push_back(std::move(clip));
  }
  return ds;
}

/// Writes `dir/clipNNN/frameNNNN.png` and `dir/labels.csv`.
inline void write_synthetic(const std::filesystem::path& dir, const SyntheticDataset& ds) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& clip : ds.clips) {
    const fs::path clip_dir = dir / clip.id;
    fs::create_directories(clip_dir, ec);
    if (ec) throw IoError("cannot create " + clip_dir.string() + ": " + ec.message());
    for (std::size_t t = 0; t < clip.frames.size(); ++t) {
      char name[32];
      std::snprintf(name, sizeof name, "frame%04zu.png", t);
      write_grayscale_png(clip_dir / name, clip.frames[t]);
    }
  }
  write_labels_csv(dir / "labels.csv", ds.truth);
}

}  // namespace caedet
