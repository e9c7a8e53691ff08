#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "caedet/run.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kConfigOrIo = 2, kNumeric = 3 };

struct Flags {
  caedet::RunConfig run;
  caedet::SynthOptions synth;
  std::string dataset = "synth";
  std::string anomaly = "mixed";
  std::string data, ckpt, metrics, scores, out;
  std::map<std::string, CLI::Option*> options;
};

void add_common(CLI::App& cmd, Flags& f) {
  auto& o = f.options;
  o["data"] = cmd.add_option("--data", f.data, "Dataset root directory");
  o["dataset"] = cmd.add_option("--dataset", f.dataset, "ped1, ped2 or synth")
                     ->check(CLI::IsMember({"ped1", "ped2", "synth"}));
  o["epochs"] = cmd.add_option("--epochs", f.run.epochs, "Training epochs")->capture_default_str();
  o["batch"] = cmd.add_option("--batch", f.run.batch, "Batch size")->capture_default_str();
  o["lr"] = cmd.add_option("--lr", f.run.lr, "Adam learning rate")->capture_default_str();
  o["seed"] = cmd.add_option("--seed", f.run.seed, "Random seed")->capture_default_str();
  o["scale"] = cmd.add_option("--scale", f.run.scale, "Channel width divisor")->capture_default_str();
  o["val-fraction"] = cmd.add_option("--val-fraction", f.run.val_fraction,
                                     "Fraction of training clips held out")
                          ->capture_default_str();
  o["quantile"] = cmd.add_option("--quantile", f.run.quantile,
                                 "Validation score quantile used as threshold")
                      ->capture_default_str();
  o["size"] = cmd.add_option("--size", f.run.size,
                             "Frame side length (model input, or generated frames for synth)");
  o["ckpt"] = cmd.add_option("--ckpt", f.ckpt, "Checkpoint path");
  o["metrics"] = cmd.add_option("--metrics", f.metrics, "Metrics CSV path");
  o["scores"] = cmd.add_option("--scores", f.scores, "Scores CSV path");
  o["out"] = cmd.add_option("--out", f.out, "Output path");
}

int run(int argc, char** argv) {
  CLI::App app{"Convolutional autoencoder for video anomaly detection"};
  app.require_subcommand(1, 1);
  Flags f;
  std::map<std::string, CLI::App*> cmds;
  for (const char* name : {"train", "eval", "score", "synth", "plot"}) {
    static const std::map<std::string, std::string> help{
        {"train", "Train a model and write a checkpoint and metrics CSV"},
        {"eval", "Report reconstruction accuracy and detection metrics on the test split"},
        {"score", "Write per-frame anomaly scores for a frame directory"},
        {"synth", "Generate a synthetic dataset"},
        {"plot", "Render a metrics CSV as an SVG chart"}};
    cmds[name] = app.add_subcommand(name, help.at(name));
  }
  // Each subcommand binds the same storage; only one subcommand runs per process.
  std::map<std::string, std::map<std::string, CLI::Option*>> per_cmd;
  for (auto& [name, cmd] : cmds) {
    f.options.clear();
    add_common(*cmd, f);
    per_cmd[name] = f.options;
  }
  auto* synth = cmds["synth"];
  synth->add_option("--clips", f.synth.train_clips, "Training clips")->capture_default_str();
  synth->add_option("--test-clips", f.synth.test_clips, "Test clips")->capture_default_str();
  synth->add_option("--frames", f.synth.frames, "Frames per clip")->capture_default_str();
  synth->add_option("--anomaly-rate", f.synth.anomaly_rate, "Fraction of anomalous test clips")
      ->capture_default_str();
  synth->add_option("--anomaly-type", f.anomaly, "fast_blob, large_blob or mixed")
      ->check(CLI::IsMember({"fast_blob", "large_blob", "mixed"}))
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  std::string chosen;
  for (auto& [name, cmd] : cmds) {
    if (cmd->parsed()) chosen = name;
  }
  for (const auto& [name, opt] : per_cmd[chosen]) {
    if (opt->count() > 0) f.run.given.insert(name);
  }
  f.run.dataset = caedet::dataset_kind_from_string(f.dataset);
  f.run.data = f.data;
  f.run.ckpt = f.ckpt;
  f.run.metrics = f.metrics;
  f.run.scores = f.scores;
  f.run.out = f.out;

  if (chosen == "train") {
    if (f.run.ckpt.empty()) f.run.ckpt = "model.ckpt";
    if (f.run.metrics.empty()) f.run.metrics = "metrics.csv";
    caedet::cmd_train(f.run);
  } else if (chosen == "eval") {
    caedet::cmd_eval(f.run, std::cout);
  } else if (chosen == "score") {
    caedet::cmd_score(f.run, std::cout);
  } else if (chosen == "synth") {
    if (f.run.was_given("size")) f.synth.size = f.run.size;
    f.run.size = 0;
    f.synth.anomaly = caedet::anomaly_type_from_string(f.anomaly);
    caedet::cmd_synth(f.run, f.synth);
  } else if (chosen == "plot") {
    caedet::cmd_plot(f.run);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const caedet::NumericError& e) {
    std::cerr << "caedet: numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const caedet::Error& e) {
    std::cerr << "caedet: " << e.what() << '\n';
    return kConfigOrIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "caedet: " << e.what() << '\n';
    return kConfigOrIo;
  } catch (const std::exception& e) {
    std::cerr << "caedet: unexpected error: " << e.what() << '\n';
    return kConfigOrIo;
  }
}
