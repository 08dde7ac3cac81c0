// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "toast/binary_io.hpp"
#include "toast/tensor.hpp"

namespace toast {

struct LabeledImage {
  Tensor<float> pixels;  // [channels × side × side], values in [0, 1]
  std::uint32_t label = 0;
  // One entry per grid cell, row-major; 1 marks a task-relevant patch.
  // Empty when the image carries no relevance annotation.
  std::vector<std::uint8_t> relevance_mask;

  bool operator==(const LabeledImage& o) const {
    return label == o.label && relevance_mask == o.relevance_mask && pixels.same_bytes(o.pixels);
  }
};

struct Dataset {
  std::size_t channels = 1;
  std::size_t side = 0;
  std::size_t grid = 0;  // patches per side, for relevance masks
  std::size_t n_classes = 0;
  std::vector<LabeledImage> images;

  std::size_t size() const { return images.size(); }
  bool operator==(const Dataset&) const = default;
};

/// Cluttered-scene generator. Each image is a grid of patches on a flat
/// grey background: `signal_patch_count` cells carry the class texture,
/// `distractor_count` cells carry textures drawn from a pool shared by all
/// classes, and Gaussian pixel noise covers everything. Class textures come
/// from `texture_seed`, the distractor pool from `distractor_seed`; `seed`
/// varies placement and noise only.
struct SyntheticCfg {
  std::size_t grid = 8;
  std::size_t patch_side = 4;
  std::size_t channels = 1;
  std::size_t n_classes = 10;
  std::size_t n_images = 2000;
  std::size_t signal_patch_count = 4;
  std::size_t distractor_count = 16;
  std::size_t distractor_pool = 10;
  double contrast = 0.4;
  double noise_level = 0.1;
  std::uint64_t seed = 1;
  std::uint64_t texture_seed = 1;     // class textures
  std::uint64_t distractor_seed = 7;  // distractor pool, may be shared across tasks

  std::size_t side() const { return grid * patch_side; }
  void validate() const;
};

Dataset gen_cluttered(const SyntheticCfg& cfg);

/// First `count` images in one dataset, the rest in the other.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, std::size_t count);

std::vector<std::uint8_t> encode_dataset(const Dataset& data);
/// Throws FormatError on bad magic, unsupported version or truncation.
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Fraction of a nonnegative per-patch map's mass on masked cells. Returns 0
/// for a map with zero total mass.
double attention_focus_score(std::span<const float> map, std::span<const std::uint8_t> mask);

/// Head-averaged attention of the cls query over the patch keys, taken from
/// an [H × N × N] probability tensor whose patch tokens start at `first_patch`.
Tensor<float> cls_attention_map(const Tensor<float>& probs, std::size_t first_patch);

}  // namespace toast
