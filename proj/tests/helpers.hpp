// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

// Shared fixtures for the test binaries.

#pragma once

#include <random>
#include <vector>

#include "toast/autodiff.hpp"
#include "toast/backbone.hpp"
#include "toast/data.hpp"
#include "toast/topdown.hpp"
#include "toast/training.hpp"

namespace toast::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

/// d=8, L=2, N=5 (2x2 patches plus cls), 3 classes.
inline BackboneConfig tiny_config() {
  BackboneConfig c;
  c.image_side = 4;
  c.patch_side = 2;
  c.channels = 1;
  c.dim = 8;
  c.layers = 2;
  c.heads = 2;
  c.n_classes = 3;
  c.mlp_ratio = 2;
  return c;
}

/// Small enough for quick training tests: 8x8 images, 4x4 grid, d=16, L=2.
inline BackboneConfig small_config(std::size_t classes = 4) {
  BackboneConfig c;
  c.image_side = 8;
  c.patch_side = 2;
  c.channels = 1;
  c.dim = 16;
  c.layers = 2;
  c.heads = 2;
  c.n_classes = classes;
  c.mlp_ratio = 2;
  return c;
}

inline SyntheticCfg small_data(std::size_t n, std::uint64_t seed, std::size_t classes = 4) {
  SyntheticCfg s;
  s.grid = 4;
  s.patch_side = 2;
  s.n_classes = classes;
  s.n_images = n;
  s.signal_patch_count = 2;
  s.distractor_count = 4;
  s.distractor_pool = 3;
  s.seed = seed;
  s.texture_seed = 5;
  s.distractor_seed = 5;
  return s;
}

/// Random image for a config, values in [0, 1].
template <typename T = double>
Tensor<T> random_image(const BackboneConfig& c, std::uint64_t seed) {
  return random_tensor<T>({c.channels, c.image_side, c.image_side}, seed, 0.0, 1.0);
}

/// Top-down module with nonzero injection so the feedback path matters.
inline TopDownParams<float> active_topdown(const BackboneConfig& c, FeedbackKind kind, std::uint64_t seed) {
  Rng rng(seed);
  TopDownParams<float> td = init_topdown(c, FeedbackVariant::make(kind, c.layers), rng);
  for (auto& l : td.layers) l.inject.weight = normal_tensor(l.inject.weight.shape(), 0.3, rng);
  return td;
}

}  // namespace toast::testing
