#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "caedet/data.hpp"
#include "caedet/error.hpp"
#include "caedet/image_io.hpp"
#include "caedet/log.hpp"

namespace caedet {

enum class UcsdSubset { Ped1, Ped2 };
enum class UcsdSplit { Train, Test };

inline std::string to_string(UcsdSubset s) { return s == UcsdSubset::Ped1 ? "UCSDped1" : "UCSDped2"; }
inline std::string to_string(UcsdSplit s) { return s == UcsdSplit::Train ? "Train" : "Test"; }

struct LoadedSplit {
  std::vector<FrameSequence> clips;
  std::optional<GroundTruth> truth;
};

/// Frame ranges from a MATLAB-style annotation file, one entry per test clip
/// in order: `TestVideoFile{end+1}.gt_frame = [61:180, 200:210];`.
/// Ranges are 1-based and inclusive.
inline std::vector<std::vector<std::pair<std::size_t, std::size_t>>> parse_frame_ranges(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  static const std::regex entry(R"(gt_frame\s*=\s*\[([^\]]*)\])");
  static const std::regex range(R"((\d+)\s*(?::\s*(\d+))?)");
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> clips;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), entry); it != std::sregex_iterator();
       ++it) {
    const std::string body = (*it)[1].str();
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    for (auto r = std::sregex_iterator(body.begin(), body.end(), range); r != std::sregex_iterator();
         ++r) {
      const std::size_t a = std::stoul((*r)[1].str());
      const std::size_t b = (*r)[2].matched ? std::stoul((*r)[2].str()) : a;
      if (a == 0 || b < a) {
        throw FormatError(path.string() + ": invalid frame range " + (*r)[0].str(),
                          static_cast<std::size_t>(it->position()));
      }
      ranges.emplace_back(a, b);
    }
    clips.push_back(std::move(ranges));
  }
  return clips;
}

namespace detail {

inline std::vector<std::uint8_t> labels_from_masks(const std::filesystem::path& dir) {
  std::vector<std::uint8_t> labels;
  for (const auto& f : list_frames(dir)) {
    const Tensor<float> mask = read_grayscale(f);
    const auto d = mask.data();
    labels.push_back(std::any_of(d.begin(), d.end(), [](float v) { return v > 0.0f; }));
  }
  return labels;
}

}  // namespace detail

/// Loads `root/UCSDpedN/<split>/<split>NNN/`. Test ground truth comes from
/// `TestNNN_gt/` mask folders and, for clips without one, from a `*.m`
/// frame-range file in the Test directory.
inline LoadedSplit load_ucsd(const std::filesystem::path& root, UcsdSubset subset, UcsdSplit split) {
  namespace fs = std::filesystem;
  const fs::path dir = root / to_string(subset) / to_string(split);
  if (!fs::is_directory(dir)) throw IoError("UCSD directory not found: expected " + dir.string());

  const std::regex clip_name("^" + to_string(split) + R"((\d+)$)");
  std::vector<fs::path> clip_dirs;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_directory() && std::regex_match(name, clip_name)) clip_dirs.push_back(e.path());
  }
  std::sort(clip_dirs.begin(), clip_dirs.end());
  if (clip_dirs.empty()) throw IoError("no clip directories under " + dir.string());

  LoadedSplit out;
  for (const auto& d : clip_dirs) out.clips.push_back(read_clip(d, d.filename().string()));
  if (split == UcsdSplit::Train) return out;

  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> ranges;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".m") {
      ranges = parse_frame_ranges(e.path());
      break;
    }
  }

  GroundTruth gt;
  for (const auto& clip : out.clips) {
    const fs::path mask_dir = dir / (clip.id + "_gt");
    std::vector<std::uint8_t> labels;
    if (fs::is_directory(mask_dir)) {
      labels = detail::labels_from_masks(mask_dir);
      if (labels.size() != clip.frames.size()) {
        throw FormatError(mask_dir.string() + " has " + std::to_string(labels.size()) +
                              " masks for " + std::to_string(clip.frames.size()) + " frames",
                          0);
      }
    } else {
      const std::size_t number = std::stoul(clip.id.substr(to_string(split).size()));
      if (number == 0 || number > ranges.size()) continue;
      labels.assign(clip.frames.size(), 0);
      for (const auto& [a, b] : ranges[number - 1]) {
        for (std::size_t f = a; f <= std::min(b, labels.size()); ++f) labels[f - 1] = 1;
      }
    }
    gt.labels[clip.id] = std::move(labels);
  }
  if (gt.labels.empty()) {
    log::warn("no ground truth found under " + dir.string());
  } else {
    if (gt.labels.size() != out.clips.size()) {
      log::warn("ground truth covers " + std::to_string(gt.labels.size()) + " of " +
                std::to_string(out.clips.size()) + " test clips");
    }
    out.truth = std::move(gt);
  }
  return out;
}

}  // namespace caedet
