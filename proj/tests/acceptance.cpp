// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// if any criterion fails.

#include <sys/resource.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "caedet/checkpoint.hpp"
#include "caedet/detect.hpp"
#include "caedet/grad_check.hpp"
#include "caedet/kernels.hpp"
#include "caedet/metrics.hpp"
#include "caedet/model.hpp"
#include "caedet/optimize.hpp"
#include "cli_runner.hpp"
#include "test_util.hpp"

using namespace caedet;
using caedet::testing::random_tensor;
using caedet::testing::run_cli;
using caedet::testing::slurp;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& title, double time_limit_s,
               const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (time_limit_s > 0 && secs > time_limit_s) {
    o.pass = false;
    o.detail += "; exceeded " + std::to_string(static_cast<int>(time_limit_s)) + " s";
  }
  char timing[32];
  std::snprintf(timing, sizeof timing, "%.2f s", secs);
  std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << "AC" << id << " " << title << ": " << o.detail
            << " (" << timing << ")" << std::endl;
  if (!o.pass) ++failures;
}

std::string num(double v, const char* spec = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

double children_cpu_seconds() {
  rusage u{};
  getrusage(RUSAGE_CHILDREN, &u);
  return static_cast<double>(u.ru_utime.tv_sec + u.ru_stime.tv_sec) +
         1e-6 * static_cast<double>(u.ru_utime.tv_usec + u.ru_stime.tv_usec);
}

ScalarLoss weighted_sum(const Tensor<double>& w) {
  return {[w](const Tensor<double>& y) { return dot(y, w); },
          [w](const Tensor<double>&) { return w; }};
}

/// Inputs bounded away from the ReLU kink so central differences never straddle it.
Tensor<double> kink_free_input(const Shape& shape, std::mt19937_64& rng) {
  auto x = random_tensor(shape, rng, 0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& v : x.data()) v = sign(rng) ? v : -v;
  return x;
}

Outcome gradient_correctness() {
  struct Case {
    std::string name;
    std::function<Sequential<double>(std::uint64_t)> build;
    Shape input;
  };
  const std::vector<Case> cases{
      {"conv2d k3 s2", [](auto s) { Sequential<double> n; n.add("c", LayerSpec::conv2d(2, 3, 3, 2), s); return n; }, {2, 5, 6, 2}},
      {"conv2d k1 s1", [](auto s) { Sequential<double> n; n.add("c", LayerSpec::conv2d(3, 2, 1, 1), s); return n; }, {1, 4, 4, 3}},
      {"conv2d_transpose k3 s2", [](auto s) { Sequential<double> n; n.add("t", LayerSpec::conv_transpose2d(2, 3, 3, 2), s); return n; }, {2, 3, 4, 2}},
      {"conv2d_transpose k1 s1", [](auto s) { Sequential<double> n; n.add("t", LayerSpec::conv_transpose2d(3, 2, 1, 1), s); return n; }, {1, 4, 3, 3}},
      {"dense", [](auto s) { Sequential<double> n; n.add("d", LayerSpec::dense(7, 4), s); return n; }, {3, 7}},
      {"relu", [](auto s) { Sequential<double> n; n.add("a", LayerSpec::act(Activation::ReLU), s); return n; }, {2, 3, 3, 2}},
      {"sigmoid", [](auto s) { Sequential<double> n; n.add("a", LayerSpec::act(Activation::Sigmoid), s); return n; }, {2, 3, 3, 2}},
      {"flatten", [](auto s) { Sequential<double> n; n.add("f", LayerSpec::flatten(), s); return n; }, {2, 3, 2, 2}},
      {"reshape", [](auto s) { Sequential<double> n; n.add("r", LayerSpec::reshape({2, 2, 3}), s); return n; }, {2, 12}},
  };
  constexpr int kSeeds = 20;
  double worst = 0;
  std::string worst_case;
  std::size_t checks = 0;
  for (const auto& c : cases) {
    for (int seed = 0; seed < kSeeds; ++seed) {
      std::mt19937_64 rng(1000 + seed);
      auto net = c.build(static_cast<std::uint64_t>(seed));
      caedet::testing::randomize_biases(net, rng);
      const auto x = kink_free_input(c.input, rng);
      const auto w = random_tensor(net.output_shape(c.input), rng);
      const double e = grad_check(net, x, weighted_sum(w)).max_relative_error;
      ++checks;
      if (e > worst) {
        worst = e;
        worst_case = c.name + " seed " + std::to_string(seed);
      }
    }
  }
  // Inputs and biases are redrawn until every ReLU pre-activation is at least
  // 10 eps from zero; the rule looks only at the forward pass.
  double ae_worst = 0;
  std::size_t redraws = 0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    ModelConfig cfg;
    cfg.input_height = cfg.input_width = 16;
    cfg.scale_factor = 8;
    cfg.seed = static_cast<std::uint64_t>(seed);
    AutoencoderModel<double> model(cfg);
    std::mt19937_64 rng(2000 + seed);
    caedet::testing::randomize_biases(model, rng);
    auto x = random_tensor({1, 16, 16, 1}, rng, 0.0, 1.0);
    while (caedet::testing::relu_margin(model, x) < 10 * 1e-5) {
      ++redraws;
      caedet::testing::randomize_biases(model, rng);
      x = random_tensor({1, 16, 16, 1}, rng, 0.0, 1.0);
    }
    ScalarLoss loss{[&](const Tensor<double>& y) { return bce_loss(x, y); },
                    [&](const Tensor<double>& y) { return bce_grad(x, y); }};
    ae_worst = std::max(ae_worst, grad_check(model, x, loss).max_relative_error);
    ++checks;
  }
  const bool pass = worst < 1e-5 && ae_worst < 1e-5;
  return {pass, std::to_string(checks) + " checks, " + std::to_string(cases.size()) +
                    " layer cases x " + std::to_string(kSeeds) + " seeds, layer max rel err " +
                    num(worst) + " (" + worst_case + "), scale-8 autoencoder max rel err " +
                    num(ae_worst) + " over " + std::to_string(kSeeds) + " seeds with " +
                    std::to_string(redraws) + " kink redraws (limit 1e-5)"};
}

Outcome kernel_oracle() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> n_d(1, 2), hw(1, 9), ch(1, 3);
  double worst = 0;
  std::size_t trials = 0;
  for (std::size_t s : {1u, 2u}) {
    for (std::size_t k : {1u, 3u}) {
      for (int t = 0; t < 50; ++t, ++trials) {
        const std::size_t n = n_d(rng), h = hw(rng), w = hw(rng), ci = ch(rng), co = ch(rng);
        const auto x = random_tensor({n, h, w, ci}, rng);
        const auto K = random_tensor({k, k, ci, co}, rng);
        const auto b = random_tensor({co}, rng);
        const auto got = conv2d_forward(x, K, b, ConvGeometry{k, k, s, Padding::Same, ci, co});
        const auto want = caedet::testing::naive_conv2d(x, K, b, s);
        if (got.shape() != want.shape()) return {false, "shape mismatch at trial " + std::to_string(trials)};
        worst = std::max(worst, caedet::testing::max_abs_diff(got, want));
      }
    }
  }
  return {worst <= 1e-12, std::to_string(trials) + " random shapes over stride {1,2} x kernel {1,3}, max abs diff " +
                              num(worst) + " (limit 1e-12)"};
}

Outcome adjoint_identity() {
  std::mt19937_64 rng(91);
  std::uniform_int_distribution<std::size_t> hw(1, 6), ch(1, 4);
  double worst = 0;
  const int kInstances = 60;
  for (int t = 0; t < kInstances; ++t) {
    const std::size_t s = 1 + t % 2, k = (t / 2) % 2 ? 3 : 1;
    const std::size_t h = hw(rng), w = hw(rng), ci = ch(rng), co = ch(rng);
    const auto K = random_tensor({k, k, ci, co}, rng);
    const auto x = random_tensor({2, h * s, w * s, ci}, rng);
    const auto y = random_tensor({2, h, w, co}, rng);
    const double lhs = dot(conv2d_forward(x, K, Tensor<double>({co}), ConvGeometry{k, k, s, Padding::Same, ci, co}), y);
    const double rhs = dot(x, conv_transpose2d_forward(y, K, Tensor<double>({ci}), ConvGeometry{k, k, s, Padding::Same, co, ci}));
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return {worst < 1e-10, std::to_string(kInstances) + " instances, max |<Ax,y> - <x,A^T y>| " + num(worst) + " (limit 1e-10)"};
}

Outcome architecture_fidelity() {
  const std::vector<Shape> encoder_rows{{128, 128, 16}, {128, 128, 16}, {64, 64, 32}, {64, 64, 32},
                                        {32, 32, 64},   {32, 32, 64},   {16, 16, 128}, {16, 16, 128},
                                        {32768},        {32},           {32}};
  const std::vector<Shape> decoder_rows{{32768},       {32768},       {16, 16, 128}, {32, 32, 64},
                                        {32, 32, 64},  {64, 64, 32},  {64, 64, 32},  {128, 128, 16},
                                        {128, 128, 16}, {256, 256, 1}, {256, 256, 1}};
  const auto enc = shape_chain(build_encoder({256, 256, 1}, 32, 1), {256, 256, 1});
  const auto dec = shape_chain(build_decoder(32, {256, 256, 1}, 1), {32});
  std::size_t mismatches = 0;
  if (enc.size() != encoder_rows.size() || dec.size() != decoder_rows.size()) {
    return {false, "chain lengths " + std::to_string(enc.size()) + "/" + std::to_string(dec.size())};
  }
  for (std::size_t i = 0; i < enc.size(); ++i) mismatches += enc[i] != encoder_rows[i];
  for (std::size_t i = 0; i < dec.size(); ++i) mismatches += dec[i] != decoder_rows[i];
  AutoencoderModel<float> model(ModelConfig{});
  const auto out = model.forward(Tensor<float>({1, 256, 256, 1}, 0.5f));
  const bool round_trip = out.shape() == Shape{1, 256, 256, 1};
  return {mismatches == 0 && round_trip,
          std::to_string(enc.size()) + " encoder and " + std::to_string(dec.size()) +
              " decoder rows checked, " + std::to_string(mismatches) +
              " mismatches; 256x256x1 -> " + to_string(out.shape())};
}

Outcome optimizer_check() {
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  ParamStore<double> store;
  store.add("theta", Tensor<double>({1}, {0.0}));
  std::size_t steps = 0;
  while (steps < 5000 && std::abs(store[0].value[0] - 3.0) >= 1e-3) {
    store[0].grad[0] = 2.0 * (store[0].value[0] - 3.0);
    adam_step(store, cfg);
    ++steps;
  }
  const double final_gap = std::abs(store[0].value[0] - 3.0);
  double worst = 0;
  for (double g : {-6.0, -0.5, 1e-3, 0.25, 4.0, 123.0}) {
    Tensor<double> p({1}, {1.5}), grad({1}, {g}), m({1}), v({1});
    adam_update(p, grad, m, v, 1, cfg);
    const double expected = -cfg.learning_rate * g / (std::abs(g) + cfg.epsilon);
    worst = std::max(worst, std::abs((p[0] - 1.5) - expected));
  }
  return {final_gap < 1e-3 && worst <= 1e-12,
          "|theta-3| = " + num(final_gap) + " after " + std::to_string(steps) +
              " steps (limit 5000); first-step closed-form max error " + num(worst) + " (limit 1e-12)"};
}

Outcome loss_metric_units() {
  const double ln2 = std::log(2.0);
  double worst = 0;
  auto t1 = [](std::initializer_list<double> v) { return Tensor<double>({v.size()}, std::vector<double>(v)); };
  worst = std::max(worst, std::abs(bce_loss(t1({1.0}), t1({0.5})) - ln2));
  worst = std::max(worst, std::abs(bce_loss(t1({0.0}), t1({0.5})) - ln2));
  worst = std::max(worst, std::abs(bce_loss(t1({0.5}), t1({0.5})) - ln2));
  worst = std::max(worst, std::abs(bce_loss(t1({1.0, 0.0, 0.5, 1.0}), t1({0.5, 0.5, 0.5, 0.5})) - ln2));
  worst = std::max(worst, std::abs(pixel_accuracy(t1({0.9, 0.1, 0.6, 0.2}), t1({0.8, 0.7, 0.4, 0.3})) - 0.5));
  worst = std::max(worst, std::abs(pixel_accuracy(t1({0.0, 1.0}), t1({0.2, 0.9})) - 1.0));
  worst = std::max(worst, std::abs(pixel_accuracy(t1({0.5, 0.49}), t1({0.5, 0.5})) - 0.5));
  worst = std::max(worst, std::abs(*roc_auc({0.4, 0.3, 0.2, 0.1}, {1, 0, 1, 0}) - 0.75));
  worst = std::max(worst, std::abs(*roc_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) - 1.0));
  worst = std::max(worst, std::abs(*roc_auc({0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0}) - 0.5));
  return {worst <= 1e-9, "10 hand cases (BCE ln 2, pixel accuracy, AUC 0.75/1/0.5), max error " + num(worst) + " (limit 1e-9)"};
}

struct DeskRun {
  fs::path root;
  double train_wall = 0;
  double train_cpu = 0;
  bool ok = false;
  std::string error;
};

DeskRun desk_run(const fs::path& root) {
  DeskRun r;
  r.root = root;
  const auto t0 = std::chrono::steady_clock::now();
  const double c0 = children_cpu_seconds();
  auto s = run_cli("synth --out '" + (root / "data").string() + "' --size 64 --anomaly-rate 0.3", root);
  if (s.exit_code != 0) {
    r.error = "synth failed: " + s.err;
    return r;
  }
  fs::create_directories(root / "run1");
  auto t = run_cli("train --data ../data --dataset synth --scale 8 --epochs 10 --ckpt model.ckpt --metrics metrics.csv",
                   root / "run1", "cd '" + (root / "run1").string() + "' &&");
  r.train_wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.train_cpu = children_cpu_seconds() - c0;
  if (t.exit_code != 0) {
    r.error = "train failed: " + t.err;
    return r;
  }
  r.ok = true;
  return r;
}

Outcome training_profile(const DeskRun& run) {
  if (!run.ok) return {false, run.error};
  const auto rows = read_metrics_csv(run.root / "run1" / "metrics.csv");
  if (rows.size() != 10) return {false, std::to_string(rows.size()) + " metric rows, expected 10"};
  const auto& last = rows.back();
  double tr_lo = 1, tr_hi = 0, va_lo = 1, va_hi = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (!rows[i].val_acc) return {false, "missing validation accuracy"};
    tr_lo = std::min(tr_lo, rows[i].train_acc);
    tr_hi = std::max(tr_hi, rows[i].train_acc);
    va_lo = std::min(va_lo, *rows[i].val_acc);
    va_hi = std::max(va_hi, *rows[i].val_acc);
  }
  const double tr_spread = 100 * (tr_hi - tr_lo), va_spread = 100 * (va_hi - va_lo);
  const bool pass = last.train_acc >= 0.99 && *last.val_acc >= 0.99 && tr_spread < 0.5 &&
                    va_spread < 0.5 && run.train_cpu <= 300;
  return {pass, "final train acc " + num(last.train_acc, "%.4f") + ", val acc " +
                    num(*last.val_acc, "%.4f") + " (min 0.99); epochs 2-10 spread train " +
                    num(tr_spread, "%.3f") + " pp, val " + num(va_spread, "%.3f") +
                    " pp (limit 0.5); synth+train CPU " + num(run.train_cpu, "%.1f") + " s (limit 300)"};
}

Outcome detection_sanity(const DeskRun& run) {
  if (!run.ok) return {false, run.error};
  const auto t0 = std::chrono::steady_clock::now();
  const auto dir = run.root / "run1";
  auto e = run_cli("eval --data ../data --ckpt model.ckpt --quantile 0.99 --scores scores.csv --out report.json",
                   dir, "cd '" + dir.string() + "' &&");
  if (e.exit_code != 0) return {false, "eval failed: " + e.err};
  const double total = run.train_wall + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  const auto& d = j.at("detection");
  if (d.is_null() || d.at("roc_auc").is_null()) return {false, "detection metrics missing"};
  const double auc = d.at("roc_auc").get<double>(), acc = d.at("accuracy").get<double>();

  std::ifstream csv(dir / "scores.csv");
  std::string line;
  std::getline(csv, line);
  double err_pos = 0, err_neg = 0;
  std::size_t n_pos = 0, n_neg = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> c;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) c.push_back(cell);
    (c[4] == "1" ? err_pos : err_neg) += std::stod(c[2]);
    (c[4] == "1" ? n_pos : n_neg) += 1;
  }
  const double mean_pos = err_pos / static_cast<double>(n_pos), mean_neg = err_neg / static_cast<double>(n_neg);
  const bool pass = auc >= 0.90 && acc >= 0.85 && mean_pos > mean_neg && total <= 300;
  return {pass, "frame ROC-AUC " + num(auc, "%.4f") + " (min 0.90), accuracy " + num(acc, "%.4f") +
                    " (min 0.85) at the 0.99 quantile threshold; mean raw error anomalous " +
                    num(mean_pos, "%.5f") + " > normal " + num(mean_neg, "%.5f") + "; " +
                    num(total, "%.1f") + " s including training (limit 300)"};
}

Outcome reproducibility(const DeskRun& run) {
  if (!run.ok) return {false, run.error};
  fs::create_directories(run.root / "run2");
  auto t = run_cli("train --data ../data --dataset synth --scale 8 --epochs 10 --ckpt model.ckpt --metrics metrics.csv",
                   run.root / "run2", "cd '" + (run.root / "run2").string() + "' &&");
  if (t.exit_code != 0) return {false, "second train failed: " + t.err};
  const bool same_csv = slurp(run.root / "run1" / "metrics.csv") == slurp(run.root / "run2" / "metrics.csv");
  const std::string ckpt = slurp(run.root / "run1" / "model.ckpt");
  const bool same_ckpt = ckpt == slurp(run.root / "run2" / "model.ckpt");

  auto a = load_checkpoint<float>(run.root / "run1" / "model.ckpt");
  Tensor<float> x({4, 64, 64, 1});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> d(0, 1);
  for (float& v : x.data()) v = d(rng);
  const auto ya = a.model.forward(x);
  save_checkpoint(a.model, run.root / "resaved.ckpt", a.meta, a.has_optimizer_state);
  auto b = load_checkpoint<float>(run.root / "resaved.ckpt");
  const auto yb = b.model.forward(x);
  const bool same_forward = std::memcmp(ya.data().data(), yb.data().data(), ya.data().size_bytes()) == 0;
  const bool same_resave = slurp(run.root / "resaved.ckpt") == ckpt;
  return {same_csv && same_ckpt && same_forward && same_resave,
          std::string("metrics CSV ") + (same_csv ? "identical" : "DIFFERS") + ", checkpoint " +
              (same_ckpt ? "identical" : "DIFFERS") + " (" + std::to_string(ckpt.size()) +
              " bytes), save-load forward " + (same_forward ? "bitwise equal" : "DIFFERS") +
              ", re-saved file " + (same_resave ? "identical" : "DIFFERS")};
}

}  // namespace

int main() {
  caedet::testing::TempDir tmp("acceptance");
  criterion(1, "gradient correctness", 60, gradient_correctness);
  criterion(2, "kernel oracle equivalence", 10, kernel_oracle);
  criterion(3, "adjoint identity", 10, adjoint_identity);
  criterion(4, "architecture fidelity", 5, architecture_fidelity);
  criterion(5, "optimizer check", 0, optimizer_check);
  const DeskRun run = desk_run(tmp.path());
  criterion(6, "desk-scale training profile", 0, [&] { return training_profile(run); });
  criterion(7, "detection sanity", 0, [&] { return detection_sanity(run); });
  criterion(8, "reproducibility", 0, [&] { return reproducibility(run); });
  criterion(9, "loss and metric unit cases", 0, loss_metric_units);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
