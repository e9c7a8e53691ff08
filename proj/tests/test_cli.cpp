#include <gtest/gtest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "caedet/run.hpp"
#include "cli_runner.hpp"
#include "test_util.hpp"

using namespace caedet;
using caedet::testing::run_cli;
using caedet::testing::slurp;
using caedet::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

/// A small synthetic dataset shared by the tests in this file.
class CliFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    tmp_ = new TempDir("cli");
    const auto r = run_cli("synth --out " + q(data()) +
                               " --size 32 --clips 6 --test-clips 5 --frames 10 --anomaly-rate 0.4",
                           tmp_->path());
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto t = run_cli("train --data " + q(data()) + " --scale 8 --epochs 3 --batch 8 --ckpt " +
                               q(ckpt()) + " --metrics " + q(tmp_->path() / "m.csv"),
                           tmp_->path());
    ASSERT_EQ(t.exit_code, 0) << t.err;
  }
  static void TearDownTestSuite() {
    delete tmp_;
    tmp_ = nullptr;
  }
  static fs::path data() { return tmp_->path() / "data"; }
  static fs::path ckpt() { return tmp_->path() / "model.ckpt"; }
  static const fs::path& root() { return tmp_->path(); }

  static TempDir* tmp_;
};

TempDir* CliFixture::tmp_ = nullptr;

}  // namespace

TEST(CliUsage, MissingOrUnknownCommand) {
  TempDir tmp("usage");
  EXPECT_EQ(run_cli("", tmp.path()).exit_code, 1);
  EXPECT_EQ(run_cli("fly", tmp.path()).exit_code, 1);
  EXPECT_EQ(run_cli("train --bogus 1", tmp.path()).exit_code, 1);
  EXPECT_EQ(run_cli("train --epochs many", tmp.path()).exit_code, 1);
  EXPECT_EQ(run_cli("train --dataset ped3", tmp.path()).exit_code, 1);
  EXPECT_EQ(run_cli("--help", tmp.path()).exit_code, 0);
}

TEST(CliConfig, InvalidValuesWriteNothing) {
  TempDir tmp("cfg");
  const std::string outs = " --ckpt " + q(tmp / "c.ckpt") + " --metrics " + q(tmp / "m.csv");
  for (const std::string bad : {"--epochs 0", "--batch 0", "--lr 0", "--lr -1", "--scale 0",
                                "--val-fraction 1", "--quantile 2", "--size 30"}) {
    const auto r = run_cli("train --data /nonexistent " + bad + outs, tmp.path());
    EXPECT_EQ(r.exit_code, 2) << bad;
    EXPECT_EQ(r.err.find("not found"), std::string::npos) << "data touched before validation: " << bad;
  }
  EXPECT_FALSE(fs::exists(tmp / "c.ckpt"));
  EXPECT_FALSE(fs::exists(tmp / "m.csv"));
}

TEST(CliConfig, MissingDataRootIsIoError) {
  TempDir tmp("io");
  const auto r = run_cli("train --data " + q(tmp / "nope") + " --ckpt " + q(tmp / "c") +
                             " --metrics " + q(tmp / "m"),
                         tmp.path());
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("nope"), std::string::npos);
  const auto u = run_cli("train --dataset ped2 --data " + q(tmp.path()) + " --ckpt " +
                             q(tmp / "c") + " --metrics " + q(tmp / "m"),
                         tmp.path());
  EXPECT_EQ(u.exit_code, 2);
  EXPECT_NE(u.err.find("UCSDped2/Train"), std::string::npos);
  EXPECT_FALSE(fs::exists(tmp / "c"));
}

TEST_F(CliFixture, TrainWritesOneRowPerEpoch) {
  const auto rows = read_csv(root() / "m.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"epoch", "train_loss", "train_acc", "val_loss", "val_acc"}));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 5u);
    EXPECT_EQ(rows[i][0], std::to_string(i));
    for (std::size_t k = 1; k < 5; ++k) EXPECT_FALSE(rows[i][k].empty());
  }
}

TEST_F(CliFixture, CheckpointCarriesRunConfig) {
  const auto loaded = load_checkpoint<float>(ckpt());
  EXPECT_EQ(loaded.model.config().scale_factor, 8u);
  EXPECT_EQ(loaded.model.config().input_height, 32u);
  const RunConfig rc = run_config_from_json(loaded.meta.run);
  EXPECT_EQ(rc.epochs, 3u);
  EXPECT_EQ(rc.batch, 8u);
  EXPECT_EQ(rc.seed, 42u);
  EXPECT_EQ(rc.dataset, DatasetKind::Synth);
  EXPECT_DOUBLE_EQ(rc.val_fraction, 0.15);
  EXPECT_EQ(loaded.meta.epochs_completed, 3u);
}

TEST_F(CliFixture, TrainIsBitwiseReproducible) {
  const auto a = root() / "again.ckpt", m = root() / "again.csv";
  const auto r = run_cli("train --data " + q(data()) + " --scale 8 --epochs 3 --batch 8 --ckpt " +
                             q(a) + " --metrics " + q(m),
                         root());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(slurp(m), slurp(root() / "m.csv"));
  // The stored run config names the output paths, so compare weights and
  // everything else through a re-encode with a shared meta block.
  const auto x = load_checkpoint<float>(a), y = load_checkpoint<float>(ckpt());
  EXPECT_EQ(encode_checkpoint(x.model, {}, true), encode_checkpoint(y.model, {}, true));
}

TEST_F(CliFixture, ThreadCountDoesNotChangeResults) {
  const auto a = root() / "t1.ckpt", m = root() / "t1.csv";
  const auto r = run_cli("train --data " + q(data()) + " --scale 8 --epochs 3 --batch 8 --ckpt " +
                             q(a) + " --metrics " + q(m),
                         root(), "CAEDET_THREADS=1");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(slurp(m), slurp(root() / "m.csv"));
}

TEST_F(CliFixture, NanLossExitsThreeNamingBatch) {
  const auto r = run_cli("train --data " + q(data()) + " --scale 8 --epochs 2 --lr 1e30 --ckpt " +
                             q(root() / "nan.ckpt") + " --metrics " + q(root() / "nan.csv"),
                         root());
  EXPECT_EQ(r.exit_code, 3) << r.err;
  EXPECT_NE(r.err.find("batch"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(root() / "nan.ckpt"));
  EXPECT_FALSE(fs::exists(root() / "nan.csv"));
}

TEST_F(CliFixture, EvalReportsBothAccuracies) {
  const auto r = run_cli("eval --data " + q(data()) + " --ckpt " + q(ckpt()) + " --scores " +
                             q(root() / "eval_scores.csv") + " --out " + q(root() / "eval.json"),
                         root());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("pixel accuracy"), std::string::npos);
  EXPECT_NE(r.out.find("detection"), std::string::npos);
  EXPECT_NE(r.out.find("roc auc"), std::string::npos);
  const auto j = nlohmann::json::parse(slurp(root() / "eval.json"));
  EXPECT_TRUE(j["reconstruction"].contains("pixel_accuracy"));
  EXPECT_TRUE(j["detection"].contains("accuracy"));
  const auto rows = read_csv(root() / "eval_scores.csv");
  ASSERT_EQ(rows.size(), 51u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 6u);
    EXPECT_TRUE(rows[i][4] == "0" || rows[i][4] == "1");
    EXPECT_TRUE(rows[i][5] == "0" || rows[i][5] == "1");
  }
}

TEST_F(CliFixture, EvalWithoutGroundTruthSkipsDetection) {
  const auto copy = root() / "nolabels";
  fs::copy(data(), copy, fs::copy_options::recursive);
  fs::remove(copy / "Test" / "labels.csv");
  const auto r = run_cli("eval --data " + q(copy) + " --ckpt " + q(ckpt()), root());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("pixel accuracy"), std::string::npos);
  EXPECT_NE(r.out.find("detection skipped"), std::string::npos);
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  fs::remove_all(copy);
}

TEST_F(CliFixture, ModelShapeMismatchExitsTwo) {
  EXPECT_EQ(run_cli("eval --data " + q(data()) + " --ckpt " + q(ckpt()) + " --scale 4", root()).exit_code, 2);
  EXPECT_EQ(run_cli("score --data " + q(data() / "Test") + " --ckpt " + q(ckpt()) + " --size 64", root()).exit_code, 2);
  EXPECT_EQ(run_cli("eval --data " + q(data()) + " --ckpt " + q(root() / "missing.ckpt"), root()).exit_code, 2);
}

TEST_F(CliFixture, ScoreAgreesWithEval) {
  const auto s = root() / "score.csv";
  ASSERT_EQ(run_cli("eval --data " + q(data()) + " --ckpt " + q(ckpt()) + " --scores " +
                        q(root() / "eval_scores2.csv"),
                    root()).exit_code, 0);
  const auto r = run_cli("score --data " + q(data() / "Test") + " --ckpt " + q(ckpt()) + " --scores " + q(s), root());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto a = read_csv(s), b = read_csv(root() / "eval_scores2.csv");
  EXPECT_EQ(a[0], (std::vector<std::string>{"clip", "frame", "raw_error", "normalized_score", "label", "prediction"}));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 1; i < a.size(); ++i) {
    EXPECT_EQ(a[i][0], b[i][0]);
    EXPECT_EQ(a[i][1], b[i][1]);
    EXPECT_EQ(a[i][2], b[i][2]) << "raw error differs at row " << i;
    EXPECT_TRUE(a[i][5].empty());
  }
  for (std::size_t i = 1; i < a.size(); ++i)
    for (std::size_t j = 1; j < a.size(); ++j) {
      if (std::stod(a[i][3]) < std::stod(a[j][3])) {
        EXPECT_LE(std::stod(b[i][3]), std::stod(b[j][3]));
      }
    }
  const auto again = run_cli("score --data " + q(data() / "Test") + " --ckpt " + q(ckpt()), root());
  EXPECT_EQ(again.out, slurp(s));
}

TEST_F(CliFixture, QuantileOneHasNoValidationFalsePositives) {
  RunConfig c;
  c.data = data();
  c.ckpt = ckpt();
  c.quantile = 1.0;
  auto loaded = load_checkpoint<float>(ckpt());
  auto [train, val] = split_train_val(preprocess_all(load_training_clips(c), loaded.model.config()), 0.15);
  std::ostringstream report;
  const auto o = cmd_eval(c, report);
  auto val_scores = score_frames(loaded.model, val, 16);
  auto joint = val_scores;
  joint.insert(joint.end(), o.test_scores.begin(), o.test_scores.end());
  normalize_scores(joint);
  for (std::size_t i = 0; i < val_scores.size(); ++i) EXPECT_LE(joint[i].normalized_score, o.threshold);
}

TEST(CliSynth, DeterministicAndCounted) {
  TempDir tmp("synth");
  const std::string args = " --size 16 --clips 3 --test-clips 10 --frames 7 --anomaly-rate 0.3 --seed 9";
  ASSERT_EQ(run_cli("synth --out " + q(tmp / "a") + args, tmp.path()).exit_code, 0);
  ASSERT_EQ(run_cli("synth --out " + q(tmp / "b") + args, tmp.path()).exit_code, 0);
  for (const char* split : {"Train", "Test"}) {
    for (const auto& e : fs::recursive_directory_iterator(tmp / "a" / split)) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), tmp / "a");
      EXPECT_EQ(slurp(e.path()), slurp(tmp / "b" / rel)) << rel;
    }
  }
  const auto rows = read_csv(tmp / "a" / "Test" / "labels.csv");
  EXPECT_EQ(rows.size(), 1u + 10 * 7);
  std::set<std::string> anomalous;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i][2] == "1") anomalous.insert(rows[i][0]);
  EXPECT_LE(std::abs(static_cast<long>(anomalous.size()) - 3), 1);
  const auto train_rows = read_csv(tmp / "a" / "Train" / "labels.csv");
  EXPECT_EQ(train_rows.size(), 1u + 3 * 7);
  for (std::size_t i = 1; i < train_rows.size(); ++i) EXPECT_EQ(train_rows[i][2], "0");
}

TEST(CliSynth, RefusesExistingOutput) {
  TempDir tmp("synth2");
  std::ofstream(tmp / "file") << "x";
  EXPECT_EQ(run_cli("synth --out " + q(tmp.path()), tmp.path()).exit_code, 2);
  EXPECT_EQ(run_cli("synth --out " + q(tmp / "d") + " --anomaly-rate 2", tmp.path()).exit_code, 2);
  EXPECT_FALSE(fs::exists(tmp / "d"));
}

namespace {

struct Polyline {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

std::vector<Polyline> polylines(const boost::property_tree::ptree& node) {
  std::vector<Polyline> out;
  for (const auto& [name, child] : node) {
    if (name == "polyline") {
      Polyline p;
      p.label = child.get<std::string>("<xmlattr>.data-label", "");
      std::stringstream ss(child.get<std::string>("<xmlattr>.points"));
      std::string pt;
      while (ss >> pt) {
        const auto comma = pt.find(',');
        p.points.emplace_back(std::stod(pt.substr(0, comma)), std::stod(pt.substr(comma + 1)));
      }
      out.push_back(p);
    }
    auto nested = polylines(child);
    out.insert(out.end(), nested.begin(), nested.end());
  }
  return out;
}

}  // namespace

TEST(CliPlot, FlatSeriesRenderFlat) {
  TempDir tmp("plot");
  {
    std::ofstream csv(tmp / "flat.csv");
    csv << kMetricsHeader << "\n" << "1,0.05,0.9968,0.04,0.9977\n";
    for (int e = 2; e <= 10; ++e) csv << e << ",0.04,0.9978,0.04,0.9977\n";
  }
  const auto r = run_cli("plot --metrics " + q(tmp / "flat.csv") + " --out " + q(tmp / "p.svg"), tmp.path());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  boost::property_tree::ptree tree;
  ASSERT_NO_THROW(boost::property_tree::read_xml((tmp / "p.svg").string(), tree));
  const auto lines = polylines(tree);
  std::map<std::string, Polyline> by_label;
  for (const auto& l : lines) by_label[l.label] = l;
  ASSERT_TRUE(by_label.count("train accuracy"));
  ASSERT_TRUE(by_label.count("validation accuracy"));
  ASSERT_TRUE(by_label.count("train loss"));
  // Accuracy panel is 190 px tall; epochs 2..10 should sit within a pixel.
  for (const char* label : {"train accuracy", "validation accuracy"}) {
    const auto& pts = by_label[label].points;
    ASSERT_EQ(pts.size(), 10u);
    double lo = 1e9, hi = -1e9;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      lo = std::min(lo, pts[i].second);
      hi = std::max(hi, pts[i].second);
    }
    EXPECT_LT(hi - lo, 1.0) << label;
  }
  // Values map back through the axis: panel top 40, height 190, range [0.95, 1].
  const double y_train = by_label["train accuracy"].points[5].second;
  const double y_val = by_label["validation accuracy"].points[5].second;
  EXPECT_NEAR(1.0 - (y_train - 40) / 190 * 0.05, 0.9978, 1e-4);
  EXPECT_NEAR(1.0 - (y_val - 40) / 190 * 0.05, 0.9977, 1e-4);
}

TEST(CliPlot, TrainOnlyColumnsGiveOneSeries) {
  TempDir tmp("plot2");
  std::ofstream(tmp / "m.csv") << kMetricsHeader << "\n1,0.5,0.9,,\n2,0.4,0.95,,\n";
  ASSERT_EQ(run_cli("plot --metrics " + q(tmp / "m.csv") + " --out " + q(tmp / "p.svg"), tmp.path()).exit_code, 0);
  boost::property_tree::ptree tree;
  boost::property_tree::read_xml((tmp / "p.svg").string(), tree);
  EXPECT_EQ(polylines(tree).size(), 2u);
}

TEST(CliPlot, BadMetricsFile) {
  TempDir tmp("plot3");
  std::ofstream(tmp / "m.csv") << "a,b\n";
  EXPECT_EQ(run_cli("plot --metrics " + q(tmp / "m.csv") + " --out " + q(tmp / "p.svg"), tmp.path()).exit_code, 2);
  EXPECT_EQ(run_cli("plot --metrics " + q(tmp / "none.csv") + " --out " + q(tmp / "p.svg"), tmp.path()).exit_code, 2);
  EXPECT_FALSE(fs::exists(tmp / "p.svg"));
}
