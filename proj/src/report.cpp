// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#include "toast/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace toast {

namespace {

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::string method_label(const MethodSpec& m) {
  return m.uses_topdown() ? to_string(m.kind) + "/" + to_string(m.feedback) : to_string(m.kind);
}

void check_map(const Tensor<float>& map, std::size_t grid) {
  if (map.size() != grid * grid)
    throw ShapeError("map of " + std::to_string(map.size()) + " values does not fill a " + std::to_string(grid) +
                     "x" + std::to_string(grid) + " grid");
}

}  // namespace

std::string metrics_tsv(const TrainReport& report) {
  std::string out = "epoch\tloss\ttrain_accuracy\tval_accuracy\n";
  for (const auto& e : report.epochs) {
    out += std::to_string(e.epoch) + "\t" + format("%.9g", e.loss) + "\t" + format("%.9g", e.train_accuracy) + "\t" +
           (e.val_accuracy < 0 ? std::string("nan") : format("%.9g", e.val_accuracy)) + "\n";
  }
  return out;
}

std::string map_csv(const Tensor<float>& map, std::size_t grid) {
  check_map(map, grid);
  std::string out;
  for (std::size_t r = 0; r < grid; ++r) {
    for (std::size_t c = 0; c < grid; ++c) {
      if (c) out += ",";
      out += format("%.9g", map[r * grid + c]);
    }
    out += "\r\n";
  }
  return out;
}

std::vector<std::uint8_t> map_pgm(const Tensor<float>& map, std::size_t grid) {
  check_map(map, grid);
  const std::string header = "P5\n" + std::to_string(grid) + " " + std::to_string(grid) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto [lo, hi] = std::minmax_element(map.data().begin(), map.data().end());
  const double span = static_cast<double>(*hi) - static_cast<double>(*lo);
  for (float v : map.data()) {
    const double t = span > 0 ? (static_cast<double>(v) - *lo) / span : 0.0;
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)));
  }
  return out;
}

std::vector<MethodRow> method_rows(const BackboneConfig& config, const std::vector<MethodSpec>& methods) {
  std::vector<MethodRow> rows;
  for (const auto& m : methods) rows.push_back({m, param_count(config, m), flops_estimate(config, m)});
  return rows;
}

std::string params_table(const std::vector<MethodRow>& rows) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %14s %14s %10s\n", "method", "trainable", "total", "fraction");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-22s %14llu %14llu %9.4f%%\n", method_label(r.method).c_str(),
                  static_cast<unsigned long long>(r.params.trainable),
                  static_cast<unsigned long long>(r.params.total), 100.0 * r.params.fraction);
    out += line;
  }
  return out;
}

std::string params_json(const std::vector<MethodRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"method", to_string(r.method.kind)},
                 {"variant", to_string(r.method.feedback)},
                 {"trainable", r.params.trainable},
                 {"total", r.params.total},
                 {"fraction", r.params.fraction}});
  return j.dump(2) + "\n";
}

std::string flops_table(const std::vector<MethodRow>& rows) {
  std::string out;
  char line[200];
  std::snprintf(line, sizeof line, "%-22s %16s %10s %8s %16s\n", "method", "flops", "relative", "blocks",
                "feedback_flops");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-22s %16.6g %9.3fx %7.2fx %16.6g\n", method_label(r.method).c_str(),
                  r.flops.backbone, r.flops.relative, r.flops.block_relative, r.flops.feedback_overhead);
    out += line;
  }
  return out;
}

std::string flops_json(const std::vector<MethodRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"method", to_string(r.method.kind)},
                 {"variant", to_string(r.method.feedback)},
                 {"single_pass", r.flops.single_pass},
                 {"flops", r.flops.backbone},
                 {"relative", r.flops.relative},
                 {"block_relative", r.flops.block_relative},
                 {"feedback_overhead", r.flops.feedback_overhead}});
  return j.dump(2) + "\n";
}

}  // namespace toast
