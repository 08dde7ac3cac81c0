// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

// Text and image outputs: metrics tables, attention-map CSV and binary
// graymap files, parameter and FLOP reports.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "toast/training.hpp"

namespace toast {

/// One header line, then one tab-separated row per epoch.
std::string metrics_tsv(const TrainReport& report);

/// `grid` rows of `grid` comma-separated values.
std::string map_csv(const Tensor<float>& map, std::size_t grid);

/// Binary graymap (P5), values min-max scaled to 0..255. A constant map
/// becomes all zeros.
std::vector<std::uint8_t> map_pgm(const Tensor<float>& map, std::size_t grid);

struct MethodRow {
  MethodSpec method;
  ParamCount params;
  FlopsReport flops;
};

std::vector<MethodRow> method_rows(const BackboneConfig& config, const std::vector<MethodSpec>& methods);

std::string params_table(const std::vector<MethodRow>& rows);
std::string params_json(const std::vector<MethodRow>& rows);
std::string flops_table(const std::vector<MethodRow>& rows);
std::string flops_json(const std::vector<MethodRow>& rows);

}  // namespace toast
