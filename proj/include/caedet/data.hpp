#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "caedet/error.hpp"
#include "caedet/image_io.hpp"
#include "caedet/log.hpp"
#include "caedet/tensor.hpp"

namespace caedet {

/// One clip: frames are [H,W,1] in [0,1], all the same shape, in filename order.
struct FrameSequence {
  std::string id;
  std::vector<Tensor<float>> frames;
  std::size_t source_height = 0;
  std::size_t source_width = 0;
};

/// Per-clip frame labels, 1 = anomalous.
struct GroundTruth {
  std::map<std::string, std::vector<std::uint8_t>> labels;

  bool contains(const std::string& clip) const { return labels.count(clip) != 0; }
  const std::vector<std::uint8_t>& at(const std::string& clip) const { return labels.at(clip); }
};

/// Bilinear resize with half-pixel centres (align-corners = false), edge
/// samples clamped, output clamped to [0,1].
inline Tensor<float> preprocess(const Tensor<float>& frame, std::size_t height, std::size_t width) {
  if (frame.rank() != 3 || frame.dim(2) != 1) {
    throw DimensionError("preprocess: frame must be [H,W,1], got " + to_string(frame.shape()));
  }
  const std::size_t H = frame.dim(0), W = frame.dim(1);
  Tensor<float> out({height, width, 1});
  if (H == height && W == width) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(frame[i], 0.0f, 1.0f);
    return out;
  }
  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t outn) {
    std::vector<Tap> t(outn);
    const double ratio = static_cast<double>(in) / static_cast<double>(outn);
    for (std::size_t i = 0; i < outn; ++i) {
      double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      t[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(H, height);
  const auto tx = taps(W, width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double a = frame[ty[r].lo * W + tx[c].lo], b = frame[ty[r].lo * W + tx[c].hi];
      const double d = frame[ty[r].hi * W + tx[c].lo], e = frame[ty[r].hi * W + tx[c].hi];
      const double top = a + (b - a) * tx[c].frac;
      const double bottom = d + (e - d) * tx[c].frac;
      const double v = top + (bottom - top) * ty[r].frac;
      out[r * width + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

inline FrameSequence preprocess(const FrameSequence& clip, std::size_t height, std::size_t width) {
  FrameSequence out{clip.id, {}, clip.source_height, clip.source_width};
  out.frames.reserve(clip.frames.size());
  for (const auto& f : clip.frames) out.frames.push_back(preprocess(f, height, width));
  return out;
}

/// The last ceil(val_fraction * count) clips (by sorted id) become validation.
inline std::pair<std::vector<FrameSequence>, std::vector<FrameSequence>> split_train_val(
    std::vector<FrameSequence> clips, double val_fraction) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ConfigError("val_fraction must lie in [0, 1), got " + std::to_string(val_fraction));
  }
  std::sort(clips.begin(), clips.end(),
            [](const FrameSequence& a, const FrameSequence& b) { return a.id < b.id; });
  // The small slack keeps products like 0.15 * 20 = 3.0000000000000004 at 3.
  const auto n_val = static_cast<std::size_t>(
      std::ceil(val_fraction * static_cast<double>(clips.size()) - 1e-9));
  if (n_val == 0) log::warn("validation split is empty (val_fraction " +
                            std::to_string(val_fraction) + ")");
  if (n_val >= clips.size() && !clips.empty()) {
    throw ConfigError("val_fraction leaves no training clips");
  }
  std::vector<FrameSequence> val(std::make_move_iterator(clips.end() - n_val),
                                 std::make_move_iterator(clips.end()));
  clips.resize(clips.size() - n_val);
  return {std::move(clips), std::move(val)};
}

/// Image files directly inside `dir`, sorted by file name; dotfiles skipped.
inline std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && !name.empty() && name[0] != '.' && is_image_file(e.path())) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end(),
            [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
  return files;
}

inline FrameSequence read_clip(const std::filesystem::path& dir, std::string id) {
  FrameSequence clip;
  clip.id = std::move(id);
  for (const auto& f : list_frames(dir)) {
    clip.frames.push_back(read_grayscale(f));
    if (clip.frames.back().shape() != clip.frames.front().shape()) {
      throw FormatError("frame " + f.string() + " has shape " +
                            to_string(clip.frames.back().shape()) + ", clip started with " +
                            to_string(clip.frames.front().shape()),
                        0);
    }
  }
  if (clip.frames.empty()) throw FormatError("clip directory " + dir.string() + " has no frames", 0);
  clip.source_height = clip.frames.front().dim(0);
  clip.source_width = clip.frames.front().dim(1);
  return clip;
}

/// Parses `clip,frame,label` rows. Frame indices are 0-based positions in the clip.
inline GroundTruth read_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("clip,frame,label", 0) != 0) {
    throw FormatError("labels file " + path.string() + " lacks the clip,frame,label header", 0);
  }
  GroundTruth gt;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::stringstream ss(line);
    std::string clip, frame, label;
    if (!std::getline(ss, clip, ',') || !std::getline(ss, frame, ',') || !std::getline(ss, label)) {
      throw FormatError(path.string() + ": malformed row " + std::to_string(line_no), 0);
    }
    std::size_t idx = 0;
    int lab = 0;
    try {
      idx = std::stoul(frame);
      lab = std::stoi(label);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": malformed row " + std::to_string(line_no), 0);
    }
    auto& v = gt.labels[clip];
    if (idx != v.size()) {
      throw FormatError(path.string() + ": frames of clip " + clip + " out of order at row " +
                            std::to_string(line_no),
                        0);
    }
    v.push_back(lab != 0);
  }
  return gt;
}

inline void write_labels_csv(const std::filesystem::path& path, const GroundTruth& gt) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "clip,frame,label\n";
  for (const auto& [clip, labels] : gt.labels) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      out << clip << ',' << i << ',' << int(labels[i]) << '\n';
    }
  }
}

struct FrameDataset {
  std::vector<FrameSequence> clips;
  std::optional<GroundTruth> truth;
};

/// Loads a directory of clips: each sub-directory holding image frames is a
/// clip; a directory holding frames directly is a single clip named after
/// it. `labels.csv` next to the clips supplies ground truth when present.
inline FrameDataset load_frame_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("data directory not found: " + dir.string());
  FrameDataset ds;
  if (!list_frames(dir).empty()) {
    ds.clips.push_back(read_clip(dir, dir.filename().string()));
  } else {
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_directory() && !list_frames(e.path()).empty()) subdirs.push_back(e.path());
    }
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& s : subdirs) ds.clips.push_back(read_clip(s, s.filename().string()));
  }
  if (ds.clips.empty()) throw IoError("no frames found under " + dir.string());
  if (fs::exists(dir / "labels.csv")) {
    ds.truth = read_labels_csv(dir / "labels.csv");
    for (const auto& c : ds.clips) {
      if (ds.truth->contains(c.id) && ds.truth->at(c.id).size() != c.frames.size()) {
        throw FormatError("labels.csv lists " + std::to_string(ds.truth->at(c.id).size()) +
                              " frames for clip " + c.id + ", directory has " +
                              std::to_string(c.frames.size()),
                          0);
      }
    }
  }
  return ds;
}

/// Reference to one frame of one clip.
struct FrameRef {
  std::size_t clip;
  std::size_t frame;
};

inline std::vector<FrameRef> all_frames(const std::vector<FrameSequence>& clips) {
  std::vector<FrameRef> refs;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    for (std::size_t f = 0; f < clips[c].frames.size(); ++f) refs.push_back({c, f});
  }
  return refs;
}

/// Stacks the referenced frames into a [N,H,W,1] batch.
inline Tensor<float> make_batch(const std::vector<FrameSequence>& clips,
                                std::span<const FrameRef> refs) {
  const Shape& fs = clips.at(refs.front().clip).frames.at(refs.front().frame).shape();
  Tensor<float> batch({refs.size(), fs[0], fs[1], fs[2]});
  const std::size_t per = element_count(fs);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& f = clips.at(refs[i].clip).frames.at(refs[i].frame);
    if (f.shape() != fs) throw DimensionError("make_batch: frames differ in shape");
    std::copy(f.data().begin(), f.data().end(), batch.data().begin() + i * per);
  }
  return batch;
}

}  // namespace caedet
