// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

// Run configuration file: a JSON object with the sections below. Every
// section and key is optional; omitted keys keep their defaults and unknown
// keys are rejected.
//
//   seed        unsigned, drives initialisation and example order
//   model       image_side patch_side channels dim layers heads n_classes
//               mlp_ratio use_cls_token
//   pretrain, pretune, tune
//               learning_rate epochs batch_size weight_decay
//               lambda_variational optimizer ("adaptive_moments" |
//               "sgd_momentum") momentum beta1 beta2 epsilon cosine_schedule
//   method      kind lora_rank prompt_count lite_rank variant
//   data        val_images, generic {...}, downstream {...}; a source is
//               either {"file": PATH} or synthetic keys grid patch_side
//               channels n_classes n_images signal_patch_count
//               distractor_count distractor_pool contrast noise_level seed
//               texture_seed distractor_seed

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "toast/data.hpp"
#include "toast/training.hpp"

namespace toast {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataSource {
  std::filesystem::path file;  // empty for a synthetic source
  SyntheticCfg synthetic;

  bool from_file() const { return !file.empty(); }
};

struct RunConfig {
  std::uint64_t seed = 1;
  BackboneConfig model;
  TrainConfig pretrain;
  TrainConfig pretune;
  TrainConfig tune;
  MethodSpec method;
  DataSource generic;
  DataSource downstream;
  std::size_t val_images = 500;  // tail of the downstream set held out for validation

  /// Stage settings with the run seed filled in.
  TrainConfig stage(const TrainConfig& base) const;
  /// Throws ConfigError when sections disagree with each other.
  void validate() const;
};

RunConfig default_run_config();
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Full configuration with every key spelled out.
std::string run_config_json(const RunConfig& cfg);

/// Loads or generates a data source, checking it against the model.
Dataset load_source(const DataSource& source, const BackboneConfig& model);

struct DownstreamSplit {
  Dataset train;
  Dataset val;
};
DownstreamSplit load_downstream(const RunConfig& cfg);

}  // namespace toast
