#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "caedet/error.hpp"

namespace caedet {

inline constexpr const char* kMetricsHeader = "epoch,train_loss,train_acc,val_loss,val_acc";

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  std::optional<double> val_loss;
  std::optional<double> val_acc;
};

inline std::string format_metrics_row(const EpochMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.8f,%.8f,", m.epoch, m.train_loss, m.train_acc);
  std::string row = buf;
  if (m.val_loss) {
    std::snprintf(buf, sizeof buf, "%.8f", *m.val_loss);
    row += buf;
  }
  row += ',';
  if (m.val_acc) {
    std::snprintf(buf, sizeof buf, "%.8f", *m.val_acc);
    row += buf;
  }
  return row;
}

inline std::string format_metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) out += format_metrics_row(r) + "\n";
  return out;
}

inline std::vector<EpochMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw FormatError(path.string() + ": expected header '" + kMetricsHeader + "'", 0);
  }
  std::vector<EpochMetrics> rows;
  std::size_t line_no = 1;
  auto number = [&](const std::string& cell) -> std::optional<double> {
    if (cell.empty()) return std::nullopt;
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != cell.size() || !std::isfinite(v)) {
      throw FormatError(path.string() + ": bad number '" + cell + "' on line " +
                            std::to_string(line_no),
                        0);
    }
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 5) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) + " has " +
                            std::to_string(cells.size()) + " fields, expected 5",
                        0);
    }
    EpochMetrics m;
    const auto epoch = number(cells[0]);
    const auto loss = number(cells[1]);
    const auto acc = number(cells[2]);
    if (!epoch || !loss || !acc) {
      throw FormatError(path.string() + ": line " + std::to_string(line_no) +
                            " lacks epoch or training values",
                        0);
    }
    m.epoch = static_cast<std::size_t>(*epoch);
    m.train_loss = *loss;
    m.train_acc = *acc;
    m.val_loss = number(cells[3]);
    m.val_acc = number(cells[4]);
    rows.push_back(m);
  }
  if (rows.empty()) throw FormatError(path.string() + ": no metric rows", 0);
  return rows;
}

}  // namespace caedet
