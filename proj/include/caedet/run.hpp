#pragma once

// The command layer: run configuration, the training loop and the
// train / eval / score / synth / plot commands. Commands validate their
// configuration before reading any data and write every output atomically.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "caedet/atomic_file.hpp"
#include "caedet/checkpoint.hpp"
#include "caedet/data.hpp"
#include "caedet/detect.hpp"
#include "caedet/error.hpp"
#include "caedet/log.hpp"
#include "caedet/metrics.hpp"
#include "caedet/model.hpp"
#include "caedet/optimize.hpp"
#include "caedet/plot.hpp"
#include "caedet/synthetic.hpp"
#include "caedet/ucsd.hpp"

namespace caedet {

enum class DatasetKind { Ped1, Ped2, Synth };

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::Ped1: return "ped1";
    case DatasetKind::Ped2: return "ped2";
    case DatasetKind::Synth: return "synth";
  }
  return "?";
}

inline DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "ped1") return DatasetKind::Ped1;
  if (s == "ped2") return DatasetKind::Ped2;
  if (s == "synth") return DatasetKind::Synth;
  throw ConfigError("unknown dataset '" + s + "' (expected ped1, ped2 or synth)");
}

struct RunConfig {
  DatasetKind dataset = DatasetKind::Synth;
  std::filesystem::path data;
  std::size_t epochs = 10;
  std::size_t batch = 16;
  double lr = 1e-3;
  std::uint64_t seed = 42;
  std::size_t scale = 1;
  double val_fraction = 0.15;
  double quantile = 0.99;
  /// Model input side length; 0 picks 256 for UCSD and the native frame size otherwise.
  std::size_t size = 0;
  std::filesystem::path ckpt;
  std::filesystem::path metrics;
  std::filesystem::path scores;
  std::filesystem::path out;
  /// Names of options set explicitly on the command line (not serialized).
  std::set<std::string> given;

  bool was_given(const std::string& name) const { return given.count(name) != 0; }
};

struct SynthOptions {
  std::size_t train_clips = 40;
  std::size_t test_clips = 20;
  std::size_t frames = 80;
  std::size_t size = 64;
  double anomaly_rate = 0.3;
  AnomalyType anomaly = AnomalyType::Mixed;
};

inline void validate(const RunConfig& c) {
  if (c.epochs < 1) throw ConfigError("--epochs must be at least 1");
  if (c.batch < 1) throw ConfigError("--batch must be at least 1");
  if (!(std::isfinite(c.lr) && c.lr > 0)) throw ConfigError("--lr must be a positive number");
  if (c.scale < 1) throw ConfigError("--scale must be at least 1");
  if (!(c.val_fraction >= 0 && c.val_fraction < 1)) throw ConfigError("--val-fraction must lie in [0,1)");
  if (!(c.quantile >= 0 && c.quantile <= 1)) throw ConfigError("--quantile must lie in [0,1]");
  if (c.size != 0 && c.size % kSpatialReduction != 0) {
    throw ConfigError("--size must be a multiple of " + std::to_string(kSpatialReduction));
  }
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"dataset", to_string(c.dataset)}, {"data", c.data.string()},
          {"epochs", c.epochs},              {"batch", c.batch},
          {"lr", c.lr},                      {"seed", c.seed},
          {"scale", c.scale},                {"val_fraction", c.val_fraction},
          {"quantile", c.quantile},          {"size", c.size},
          {"ckpt", c.ckpt.string()},         {"metrics", c.metrics.string()},
          {"scores", c.scores.string()},     {"out", c.out.string()}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.dataset = dataset_kind_from_string(j.value("dataset", std::string("synth")));
    c.data = j.value("data", std::string());
    c.epochs = j.value("epochs", c.epochs);
    c.batch = j.value("batch", c.batch);
    c.lr = j.value("lr", c.lr);
    c.seed = j.value("seed", c.seed);
    c.scale = j.value("scale", c.scale);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.quantile = j.value("quantile", c.quantile);
    c.size = j.value("size", c.size);
    c.ckpt = j.value("ckpt", std::string());
    c.metrics = j.value("metrics", std::string());
    c.scores = j.value("scores", std::string());
    c.out = j.value("out", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run configuration: ") + e.what());
  }
  return c;
}

namespace detail {

inline void require_path(const std::filesystem::path& p, const char* flag, const char* command) {
  if (p.empty()) throw ConfigError(std::string(command) + " requires " + flag);
}

inline void require_writable_parent(const std::filesystem::path& p, const char* flag) {
  if (p.empty()) return;
  const auto parent = p.has_parent_path() ? p.parent_path() : std::filesystem::path(".");
  if (!std::filesystem::is_directory(parent)) {
    throw ConfigError(std::string(flag) + ": directory " + parent.string() + " does not exist");
  }
}

inline UcsdSubset subset_of(DatasetKind k) {
  return k == DatasetKind::Ped1 ? UcsdSubset::Ped1 : UcsdSubset::Ped2;
}

}  // namespace detail

/// Raw training clips: UCSD Train split, or `<data>/Train` (falling back to
/// `<data>` itself) for synthetic and other frame directories.
inline std::vector<FrameSequence> load_training_clips(const RunConfig& c) {
  if (c.dataset != DatasetKind::Synth) {
    return load_ucsd(c.data, detail::subset_of(c.dataset), UcsdSplit::Train).clips;
  }
  const auto dir = std::filesystem::is_directory(c.data / "Train") ? c.data / "Train" : c.data;
  return load_frame_dataset(dir).clips;
}

inline LoadedSplit load_test_clips(const RunConfig& c) {
  if (c.dataset != DatasetKind::Synth) {
    return load_ucsd(c.data, detail::subset_of(c.dataset), UcsdSplit::Test);
  }
  auto ds = load_frame_dataset(c.data / "Test");
  return {std::move(ds.clips), std::move(ds.truth)};
}

inline ModelConfig model_config_for(const RunConfig& c, const std::vector<FrameSequence>& clips) {
  ModelConfig m;
  m.scale_factor = c.scale;
  m.seed = c.seed;
  if (c.size != 0) {
    m.input_height = m.input_width = c.size;
  } else if (c.dataset != DatasetKind::Synth) {
    m.input_height = m.input_width = 256;
  } else {
    if (clips.empty()) throw ConfigError("no clips to size the model from");
    m.input_height = clips.front().frames.front().dim(0);
    m.input_width = clips.front().frames.front().dim(1);
  }
  validate(m);
  return m;
}

inline std::vector<FrameSequence> preprocess_all(const std::vector<FrameSequence>& clips,
                                                 const ModelConfig& m) {
  std::vector<FrameSequence> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(preprocess(c, m.input_height, m.input_width));
  return out;
}

struct ReconstructionStats {
  double loss = 0;
  double pixel_accuracy = 0;
  std::size_t frames = 0;
};

/// Mean loss and pixel accuracy of reconstructing every frame of `clips`.
inline ReconstructionStats reconstruction_stats(AutoencoderModel<float>& model,
                                                const std::vector<FrameSequence>& clips,
                                                std::size_t batch_size) {
  const auto refs = all_frames(clips);
  ReconstructionStats s;
  for (std::size_t start = 0; start < refs.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, refs.size() - start);
    const Tensor<float> x = make_batch(clips, std::span<const FrameRef>(refs.data() + start, n));
    const Tensor<float> y = model.forward(x);
    s.loss += bce_loss(x, y) * static_cast<double>(n);
    s.pixel_accuracy += pixel_accuracy(x, y) * static_cast<double>(n);
    s.frames += n;
  }
  if (s.frames > 0) {
    s.loss /= static_cast<double>(s.frames);
    s.pixel_accuracy /= static_cast<double>(s.frames);
  }
  return s;
}

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch = 16;
  AdamConfig adam{};
  std::uint64_t seed = 42;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Adam on mean BCE. Frames are shuffled per epoch by a generator seeded from
/// (seed, epoch). train_loss / train_acc are means over the epoch's batches
/// weighted by batch size; validation is measured after the epoch.
inline std::vector<EpochMetrics> train_autoencoder(AutoencoderModel<float>& model,
                                                   const std::vector<FrameSequence>& train,
                                                   const std::vector<FrameSequence>& val,
                                                   const TrainOptions& opt,
                                                   const EpochCallback& on_epoch = {}) {
  validate(opt.adam);
  auto refs = all_frames(train);
  if (refs.empty()) throw ConfigError("training split has no frames");
  std::vector<EpochMetrics> history;
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(opt.seed, 0x5eed0000 + epoch));
    std::shuffle(refs.begin(), refs.end(), rng);
    double loss_sum = 0, acc_sum = 0;
    std::size_t seen = 0, batch_index = 0;
    for (std::size_t start = 0; start < refs.size(); start += opt.batch, ++batch_index) {
      const std::size_t n = std::min(opt.batch, refs.size() - start);
      const Tensor<float> x = make_batch(train, std::span<const FrameRef>(refs.data() + start, n));
      auto where = [&] {
        return "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) +
               " (frames " + std::to_string(start) + ".." + std::to_string(start + n - 1) +
               " of the shuffled order)";
      };
      try {
        const Tensor<float> y = model.forward(x);
        const double loss = y.all_finite() ? bce_loss(x, y) : std::nan("");
        if (!std::isfinite(loss)) throw NumericError("loss is not finite");
        loss_sum += loss * static_cast<double>(n);
        acc_sum += pixel_accuracy(x, y) * static_cast<double>(n);
        seen += n;
        model.zero_grads();
        model.backward(bce_grad(x, y));
        adam_step(model, opt.adam);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " in " + where());
      }
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(seen);
    m.train_acc = acc_sum / static_cast<double>(seen);
    if (!all_frames(val).empty()) {
      const auto v = reconstruction_stats(model, val, opt.batch);
      m.val_loss = v.loss;
      m.val_acc = v.pixel_accuracy;
    }
    history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return history;
}

inline std::string describe(const EpochMetrics& m) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "epoch %zu: train loss %.6f acc %.4f", m.epoch, m.train_loss,
                m.train_acc);
  std::string s = buf;
  if (m.val_loss && m.val_acc) {
    std::snprintf(buf, sizeof buf, ", val loss %.6f acc %.4f", *m.val_loss, *m.val_acc);
    s += buf;
  }
  return s;
}

inline void cmd_train(const RunConfig& c) {
  validate(c);
  detail::require_path(c.data, "--data", "train");
  detail::require_path(c.ckpt, "--ckpt", "train");
  detail::require_path(c.metrics, "--metrics", "train");
  detail::require_writable_parent(c.ckpt, "--ckpt");
  detail::require_writable_parent(c.metrics, "--metrics");

  const auto raw = load_training_clips(c);
  const ModelConfig mc = model_config_for(c, raw);
  auto [train, val] = split_train_val(preprocess_all(raw, mc), c.val_fraction);
  log::info("training on " + std::to_string(all_frames(train).size()) + " frames from " +
            std::to_string(train.size()) + " clips, validating on " +
            std::to_string(all_frames(val).size()) + " frames from " + std::to_string(val.size()) +
            " clips");

  AutoencoderModel<float> model(mc);
  TrainOptions opt;
  opt.epochs = c.epochs;
  opt.batch = c.batch;
  opt.adam.learning_rate = c.lr;
  opt.seed = c.seed;
  const auto history = train_autoencoder(model, train, val, opt,
                                         [](const EpochMetrics& m) { log::info(describe(m)); });

  CheckpointMeta meta;
  meta.run = to_json(c);
  meta.epochs_completed = c.epochs;
  write_text_atomic(c.metrics, format_metrics_csv(history));
  save_checkpoint(model, c.ckpt, meta, true);
  log::info("wrote " + c.ckpt.string() + " and " + c.metrics.string());
}

namespace detail {

/// Loads the checkpoint named by --ckpt. Model shape flags given on the
/// command line must agree with the stored configuration.
inline LoadedCheckpoint<float> load_for_inference(const RunConfig& c) {
  auto loaded = load_checkpoint<float>(c.ckpt);
  const ModelConfig& stored = loaded.model.config();
  if (c.was_given("scale") && c.scale != stored.scale_factor) {
    throw ConfigError("checkpoint was trained with scale " + std::to_string(stored.scale_factor) +
                      ", --scale is " + std::to_string(c.scale));
  }
  if (c.was_given("size") && (c.size != stored.input_height || c.size != stored.input_width)) {
    throw ConfigError("checkpoint expects " + std::to_string(stored.input_height) + "x" +
                      std::to_string(stored.input_width) + " frames, --size is " +
                      std::to_string(c.size));
  }
  return loaded;
}

inline std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

inline nlohmann::json json_opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace detail

struct EvalOutcome {
  ReconstructionStats test;
  double threshold = 0;
  std::optional<EvalReport> detection;
  std::vector<FrameScore> test_scores;
  std::optional<std::vector<std::uint8_t>> test_labels;
};

inline EvalOutcome cmd_eval(RunConfig c, std::ostream& report) {
  validate(c);
  detail::require_path(c.data, "--data", "eval");
  detail::require_path(c.ckpt, "--ckpt", "eval");
  detail::require_writable_parent(c.scores, "--scores");
  detail::require_writable_parent(c.out, "--out");

  auto loaded = detail::load_for_inference(c);
  AutoencoderModel<float>& model = loaded.model;
  const RunConfig trained = run_config_from_json(loaded.meta.run);
  if (!c.was_given("dataset")) c.dataset = trained.dataset;
  if (!c.was_given("val-fraction")) c.val_fraction = trained.val_fraction;
  const ModelConfig& mc = model.config();

  auto [train_clips, val] = split_train_val(preprocess_all(load_training_clips(c), mc), c.val_fraction);
  (void)train_clips;
  if (val.empty()) throw ConfigError("eval fits its threshold on the validation split; --val-fraction must be > 0");
  auto test_split = load_test_clips(c);
  const auto test = preprocess_all(test_split.clips, mc);

  EvalOutcome o;
  o.test = reconstruction_stats(model, test, c.batch);

  // One scored set: validation and test share the min-max normalization.
  auto val_scores = score_frames(model, val, c.batch);
  o.test_scores = score_frames(model, test, c.batch);
  std::vector<FrameScore> joint = val_scores;
  joint.insert(joint.end(), o.test_scores.begin(), o.test_scores.end());
  normalize_scores(joint);
  std::vector<double> val_norm;
  for (std::size_t i = 0; i < val_scores.size(); ++i) val_norm.push_back(joint[i].normalized_score);
  for (std::size_t i = 0; i < o.test_scores.size(); ++i) {
    o.test_scores[i] = joint[val_scores.size() + i];
  }
  o.threshold = fit_threshold(val_norm, c.quantile);

  if (test_split.truth) o.test_labels = labels_for(o.test_scores, *test_split.truth);
  if (o.test_labels) {
    o.detection = evaluate(o.test_scores, *o.test_labels, o.threshold);
  } else {
    log::warn("test ground truth missing or incomplete; detection metrics skipped");
  }

  char buf[256];
  std::snprintf(buf, sizeof buf,
                "reconstruction (test frames: %zu)\n  pixel accuracy  %.4f\n  bce loss        %.6f\n",
                o.test.frames, o.test.pixel_accuracy, o.test.loss);
  report << buf;
  if (o.detection) {
    const auto& d = *o.detection;
    std::snprintf(buf, sizeof buf,
                  "detection (frame level, threshold %.4f = %.3g quantile of validation scores)\n"
                  "  accuracy        %.4f\n",
                  o.threshold, c.quantile, d.accuracy);
    report << buf << "  precision       " << detail::fmt_opt(d.precision) << "\n"
           << "  recall          " << detail::fmt_opt(d.recall) << "\n"
           << "  roc auc         " << detail::fmt_opt(d.auc) << "\n"
           << "  eer             " << detail::fmt_opt(d.eer) << "\n";
  } else {
    report << "detection skipped (no ground truth)\n";
  }

  if (!c.scores.empty()) {
    std::ostringstream csv;
    write_scores_csv(csv, o.test_scores, o.test_labels ? &*o.test_labels : nullptr, o.threshold);
    write_text_atomic(c.scores, csv.str());
  }
  if (!c.out.empty()) {
    nlohmann::json j;
    j["reconstruction"] = {{"frames", o.test.frames},
                           {"pixel_accuracy", o.test.pixel_accuracy},
                           {"bce_loss", o.test.loss}};
    j["threshold"] = o.threshold;
    j["quantile"] = c.quantile;
    if (o.detection) {
      const auto& d = *o.detection;
      j["detection"] = {{"frames", d.frames},
                        {"accuracy", d.accuracy},
                        {"precision", detail::json_opt(d.precision)},
                        {"recall", detail::json_opt(d.recall)},
                        {"roc_auc", detail::json_opt(d.auc)},
                        {"eer", detail::json_opt(d.eer)}};
    } else {
      j["detection"] = nullptr;
    }
    write_text_atomic(c.out, j.dump(2) + "\n");
  }
  return o;
}

/// Scores every frame under --data (a clip directory or a directory of
/// clips). Writes CSV to --scores, or to `out` when no path is given.
inline void cmd_score(const RunConfig& c, std::ostream& out) {
  validate(c);
  detail::require_path(c.data, "--data", "score");
  detail::require_path(c.ckpt, "--ckpt", "score");
  detail::require_writable_parent(c.scores, "--scores");
  auto loaded = detail::load_for_inference(c);
  const ModelConfig& mc = loaded.model.config();
  auto ds = load_frame_dataset(c.data);
  const auto clips = preprocess_all(ds.clips, mc);
  const auto scores = score_frames(loaded.model, clips, c.batch);
  std::optional<std::vector<std::uint8_t>> labels;
  if (ds.truth) labels = labels_for(scores, *ds.truth);
  std::ostringstream csv;
  write_scores_csv(csv, scores, labels ? &*labels : nullptr);
  if (c.scores.empty()) {
    out << csv.str();
  } else {
    write_text_atomic(c.scores, csv.str());
  }
}

/// Writes `<out>/Train` (normal clips only) and `<out>/Test` (anomaly_rate
/// of clips anomalous). Both share one scene; their motion comes from
/// separate streams.
inline void cmd_synth(const RunConfig& c, const SynthOptions& s) {
  validate(c);
  namespace fs = std::filesystem;
  detail::require_path(c.out, "--out", "synth");
  if (!(s.anomaly_rate >= 0 && s.anomaly_rate <= 1)) throw ConfigError("--anomaly-rate must lie in [0,1]");
  if (s.train_clips < 1 || s.test_clips < 1) throw ConfigError("--clips and --test-clips must be at least 1");
  if (s.size < 8) throw ConfigError("--size must be at least 8 for synthetic data");
  if (fs::exists(c.out) && !(fs::is_directory(c.out) && fs::is_empty(c.out))) {
    throw ConfigError("--out " + c.out.string() + " already exists and is not an empty directory");
  }
  detail::require_writable_parent(c.out, "--out");

  SyntheticConfig cfg;
  cfg.height = cfg.width = s.size;
  cfg.clip_length = s.frames;
  cfg.anomaly = s.anomaly;
  cfg.seed = c.seed;
  validate(cfg);

  fs::path staging = c.out;
  staging += ".partial";
  std::error_code ec;
  fs::remove_all(staging, ec);
  try {
    cfg.stream = 0;
    write_synthetic(staging / "Train", generate_synthetic(cfg, s.train_clips, 0.0));
    cfg.stream = 1;
    write_synthetic(staging / "Test", generate_synthetic(cfg, s.test_clips, s.anomaly_rate));
    fs::rename(staging, c.out);
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
}

inline void cmd_plot(const RunConfig& c) {
  detail::require_path(c.metrics, "--metrics", "plot");
  detail::require_path(c.out, "--out", "plot");
  detail::require_writable_parent(c.out, "--out");
  write_text_atomic(c.out, render_metrics_svg(read_metrics_csv(c.metrics)));
}

}  // namespace caedet
