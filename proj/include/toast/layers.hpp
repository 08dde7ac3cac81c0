// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include "toast/autodiff.hpp"

namespace toast {

using Rng = std::mt19937_64;

/// Affine map y = x·weight + bias with weight stored [in×out].
/// An empty bias means the map is linear.
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain;
  Tensor<T> bias;
};

/// Trainable low-rank update of a frozen weight: W + down·up, with down
/// [in×r] and up [r×out]. `up` starts at zero so a fresh delta is inert.
template <typename T>
struct LowRankDelta {
  Tensor<T> down;
  Tensor<T> up;

  std::size_t rank() const { return down.dim(1); }
};

Tensor<float> normal_tensor(Shape shape, double stddev, Rng& rng);
Tensor<float> identity_matrix(std::size_t n);
Linear<float> make_linear(std::size_t in, std::size_t out, bool bias, Rng& rng);
LayerNormParams<float> make_layernorm(std::size_t d);
LowRankDelta<float> make_low_rank(std::size_t in, std::size_t out, std::size_t rank, Rng& rng);

template <typename T>
Var<T> apply_linear(Var<T> x, const Linear<T>& layer, const LowRankDelta<T>* delta = nullptr) {
  Tape<T>& tape = *x.tape;
  Var<T> y = matmul(x, tape.param(layer.weight));
  if (delta != nullptr) {
    Var<T> low = matmul(matmul(x, tape.param(delta->down)), tape.param(delta->up));
    y = add(y, low);
  }
  if (!layer.bias.empty()) y = add_bias(y, tape.param(layer.bias));
  return y;
}

template <typename T>
Var<T> apply_layernorm(Var<T> x, const LayerNormParams<T>& ln) {
  Tape<T>& tape = *x.tape;
  return layernorm(x, tape.param(ln.gain), tape.param(ln.bias));
}

template <typename U, typename T>
Linear<U> cast_linear(const Linear<T>& l) {
  return {l.weight.template cast<U>(), l.bias.empty() ? Tensor<U>() : l.bias.template cast<U>()};
}

template <typename U, typename T>
LayerNormParams<U> cast_layernorm(const LayerNormParams<T>& l) {
  return {l.gain.template cast<U>(), l.bias.template cast<U>()};
}

template <typename U, typename T>
LowRankDelta<U> cast_low_rank(const LowRankDelta<T>& l) {
  return {l.down.template cast<U>(), l.up.template cast<U>()};
}

}  // namespace toast
