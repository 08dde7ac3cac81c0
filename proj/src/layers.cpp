// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#include "toast/layers.hpp"

#include <cmath>

namespace toast {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor<float> normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor<float> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (float& x : t.data()) x = static_cast<float>(dist(rng));
  return t;
}

Tensor<float> identity_matrix(std::size_t n) {
  Tensor<float> t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
  return t;
}

Linear<float> make_linear(std::size_t in, std::size_t out, bool bias, Rng& rng) {
  Linear<float> l;
  l.weight = normal_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  if (bias) l.bias = Tensor<float>(Shape{out});
  return l;
}

LayerNormParams<float> make_layernorm(std::size_t d) {
  return {Tensor<float>(Shape{d}, 1.0f), Tensor<float>(Shape{d})};
}

LowRankDelta<float> make_low_rank(std::size_t in, std::size_t out, std::size_t rank, Rng& rng) {
  LowRankDelta<float> delta;
  delta.down = normal_tensor({in, rank}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  delta.up = Tensor<float>(Shape{rank, out});
  return delta;
}

}  // namespace toast
