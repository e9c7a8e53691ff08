#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "caedet/data.hpp"
#include "caedet/error.hpp"
#include "caedet/model.hpp"
#include "caedet/optimize.hpp"

namespace caedet {

struct FrameScore {
  std::string clip;
  std::size_t frame = 0;
  double raw_error = 0;
  double normalized_score = 0;
};

/// (raw - min) / (max - min); every score is 0.5 when all raw errors agree.
inline void normalize_scores(std::vector<FrameScore>& scores) {
  if (scores.empty()) return;
  const auto [lo, hi] = std::minmax_element(
      scores.begin(), scores.end(),
      [](const FrameScore& a, const FrameScore& b) { return a.raw_error < b.raw_error; });
  const double min = lo->raw_error, span = hi->raw_error - lo->raw_error;
  for (auto& s : scores) s.normalized_score = span > 0 ? (s.raw_error - min) / span : 0.5;
}

/// Per-frame mean BCE between each frame and its reconstruction, then
/// min-max normalized over the whole set.
template <typename T>
std::vector<FrameScore> score_frames(AutoencoderModel<T>& model,
                                     const std::vector<FrameSequence>& clips,
                                     std::size_t batch_size = 16) {
  if (clips.empty()) throw DomainError("score_frames: no clips to score");
  if (batch_size == 0) throw ConfigError("score_frames: batch size must be positive");
  const auto refs = all_frames(clips);
  if (refs.empty()) throw DomainError("score_frames: clips contain no frames");
  std::vector<FrameScore> scores;
  scores.reserve(refs.size());
  for (std::size_t start = 0; start < refs.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, refs.size() - start);
    const std::span<const FrameRef> chunk(refs.data() + start, n);
    Tensor<float> batch = make_batch(clips, chunk);
    std::vector<double> errors;
    if constexpr (std::is_same_v<T, float>) {
      errors = bce_per_sample(batch, model.forward(batch));
    } else {
      const Tensor<T> x = batch.template cast<T>();
      errors = bce_per_sample(x, model.forward(x));
    }
    for (std::size_t i = 0; i < n; ++i) {
      scores.push_back({clips[chunk[i].clip].id, chunk[i].frame, errors[i], 0.0});
    }
  }
  normalize_scores(scores);
  return scores;
}

/// Quantile with linear interpolation between order statistics
/// (position q * (n - 1) in the sorted sample).
inline double fit_threshold(std::vector<double> scores, double quantile) {
  if (scores.empty()) throw DomainError("fit_threshold: no scores");
  if (!(quantile >= 0.0 && quantile <= 1.0)) {
    throw DomainError("fit_threshold: quantile must lie in [0,1], got " + std::to_string(quantile));
  }
  std::sort(scores.begin(), scores.end());
  const double pos = quantile * static_cast<double>(scores.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, scores.size() - 1);
  return scores[lo] + (scores[hi] - scores[lo]) * (pos - static_cast<double>(lo));
}

struct RocPoint {
  double fpr;
  double tpr;
};

/// ROC vertices from the strictest threshold to the loosest; tied scores
/// form one diagonal step.
inline std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                       const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("roc_curve: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const double P = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double N = static_cast<double>(labels.size()) - P;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> roc{{0.0, 0.0}};
  double tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp) += 1;
      ++j;
    }
    roc.push_back({N > 0 ? fp / N : 0.0, P > 0 ? tp / P : 0.0});
    i = j;
  }
  return roc;
}

/// Mann-Whitney estimate of P(score_pos > score_neg) with ties counted 1/2;
/// nullopt when only one class is present.
inline std::optional<double> roc_auc(const std::vector<double>& scores,
                                     const std::vector<std::uint8_t>& labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("roc_auc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t P = std::count(labels.begin(), labels.end(), 1);
  const std::size_t N = labels.size() - P;
  if (P == 0 || N == 0) return std::nullopt;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) rank_sum += labels[order[k]] ? avg_rank : 0.0;
    i = j;
  }
  const double u = rank_sum - 0.5 * static_cast<double>(P) * static_cast<double>(P + 1);
  return u / (static_cast<double>(P) * static_cast<double>(N));
}

struct EerPoint {
  double eer;
  RocPoint point;
};

/// Where the ROC crosses FPR = 1 - TPR, linearly interpolated between vertices.
inline std::optional<EerPoint> equal_error_rate(const std::vector<double>& scores,
                                                const std::vector<std::uint8_t>& labels) {
  const auto roc = roc_curve(scores, labels);
  const std::size_t P = std::count(labels.begin(), labels.end(), 1);
  if (P == 0 || P == labels.size()) return std::nullopt;
  auto gap = [](const RocPoint& p) { return p.fpr - (1.0 - p.tpr); };
  for (std::size_t i = 1; i < roc.size(); ++i) {
    const double g0 = gap(roc[i - 1]), g1 = gap(roc[i]);
    if (g0 <= 0 && g1 >= 0) {
      const double s = g1 == g0 ? 0.0 : -g0 / (g1 - g0);
      const RocPoint p{roc[i - 1].fpr + s * (roc[i].fpr - roc[i - 1].fpr),
                       roc[i - 1].tpr + s * (roc[i].tpr - roc[i - 1].tpr)};
      return EerPoint{p.fpr, p};
    }
  }
  return std::nullopt;
}

struct EvalReport {
  double threshold = 0;
  std::size_t frames = 0;
  double accuracy = 0;
  std::optional<double> precision;  // nullopt when nothing is predicted anomalous
  std::optional<double> recall;     // nullopt when nothing is labeled anomalous
  std::optional<double> auc;        // nullopt for single-class labels
  std::optional<double> eer;
  std::map<std::string, std::vector<double>> traces;
};

/// Frames with normalized_score > threshold are predicted anomalous.
inline EvalReport evaluate(const std::vector<FrameScore>& scores,
                           const std::vector<std::uint8_t>& labels, double threshold) {
  if (scores.size() != labels.size()) {
    throw DimensionError("evaluate: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  if (scores.empty()) throw DomainError("evaluate: no scores");
  EvalReport r;
  r.threshold = threshold;
  r.frames = scores.size();
  std::vector<double> s;
  s.reserve(scores.size());
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double v = scores[i].normalized_score;
    s.push_back(v);
    r.traces[scores[i].clip].push_back(v);
    const bool pred = v > threshold;
    if (pred && labels[i]) ++tp;
    else if (pred) ++fp;
    else if (labels[i]) ++fn;
    else ++tn;
  }
  r.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  if (tp + fp > 0) r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  r.auc = roc_auc(s, labels);
  if (auto e = equal_error_rate(s, labels)) r.eer = e->eer;
  return r;
}

/// Labels aligned with `scores`, or nullopt if any scored clip lacks ground truth.
inline std::optional<std::vector<std::uint8_t>> labels_for(const std::vector<FrameScore>& scores,
                                                           const GroundTruth& truth) {
  std::vector<std::uint8_t> out;
  out.reserve(scores.size());
  for (const auto& s : scores) {
    if (!truth.contains(s.clip) || s.frame >= truth.at(s.clip).size()) return std::nullopt;
    out.push_back(truth.at(s.clip)[s.frame]);
  }
  return out;
}

/// Writes `clip,frame,raw_error,normalized_score,label,prediction`. Label and
/// prediction columns are left empty when not supplied.
inline void write_scores_csv(std::ostream& out, const std::vector<FrameScore>& scores,
                             const std::vector<std::uint8_t>* labels = nullptr,
                             std::optional<double> threshold = std::nullopt) {
  if (labels && labels->size() != scores.size()) {
    throw DimensionError("write_scores_csv: label count differs from score count");
  }
  out << "clip,frame,raw_error,normalized_score,label,prediction\n";
  char buf[128];
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& s = scores[i];
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,", s.frame, s.raw_error, s.normalized_score);
    out << s.clip << ',' << buf;
    if (labels) out << int((*labels)[i]);
    out << ',';
    if (threshold) out << int(s.normalized_score > *threshold);
    out << '\n';
  }
}

}  // namespace caedet
