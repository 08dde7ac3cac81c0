// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

// Feedforward vision transformer: patch embedding, pre-norm transformer
// blocks whose attention accepts an optional top-down input on the value
// path, and a classification head.

#pragma once

#include <optional>
#include <type_traits>
#include <vector>

#include "toast/layers.hpp"

namespace toast {

struct BackboneConfig {
  std::size_t image_side = 32;
  std::size_t patch_side = 4;
  std::size_t channels = 1;
  std::size_t dim = 32;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t n_classes = 10;
  std::size_t mlp_ratio = 4;
  bool use_cls_token = true;

  std::size_t grid() const { return image_side / patch_side; }
  std::size_t n_patches() const { return grid() * grid(); }
  std::size_t n_tokens() const { return n_patches() + (use_cls_token ? 1 : 0); }
  std::size_t patch_dim() const { return patch_side * patch_side * channels; }
  std::size_t hidden() const { return dim * mlp_ratio; }

  /// Throws std::invalid_argument when the extents are inconsistent.
  void validate() const;

  bool operator==(const BackboneConfig&) const = default;
};

template <typename T>
struct AttentionParams {
  Linear<T> query, key, value, output;
};

template <typename T>
struct BlockParams {
  LayerNormParams<T> norm1;
  AttentionParams<T> attention;
  LayerNormParams<T> norm2;
  Linear<T> fc1, fc2;
};

template <typename T>
struct BackboneParams {
  BackboneConfig config;
  Linear<T> patch_embed;  // patch_dim -> dim
  Tensor<T> pos_embed;    // [n_patches × dim]
  Tensor<T> cls_token;    // [1 × dim], empty without a cls token
  std::vector<BlockParams<T>> blocks;
  LayerNormParams<T> final_norm;
  Linear<T> head;  // dim -> n_classes

  template <typename U>
  BackboneParams<U> cast() const;
};

BackboneParams<float> init_backbone(const BackboneConfig& config, Rng& rng);

/// Fresh classifier for `n_classes` outputs; the rest of the backbone is kept.
template <typename T>
void reset_head(BackboneParams<T>& params, std::size_t n_classes, Rng& rng);

/// Baseline additions that live inside the backbone's forward path.
template <typename T>
struct BackboneAdapters {
  std::vector<LowRankDelta<T>> query_delta;  // one per layer, or empty
  std::vector<LowRankDelta<T>> value_delta;
  std::vector<Tensor<T>> prompts;  // per layer [P × dim], or empty

  std::size_t prompt_count() const { return prompts.empty() ? 0 : prompts.front().dim(0); }
};

/// One optional top-down signal per layer, each shaped like that layer's
/// token matrix. An empty entry means no top-down input for that layer.
template <typename T>
using TopDownSignals = std::vector<std::optional<Var<T>>>;

/// Splits a [channels × side × side] image into non-overlapping patches,
/// row-major over the patch grid; each patch is flattened channel-major.
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, const BackboneConfig& config);

/// Linear patch projection plus positional embedding; prepends the cls token
/// when the config enables it. Result [n_tokens × dim].
template <typename T>
Var<T> patch_embed(Tape<T>& tape, const Tensor<T>& image, const BackboneParams<T>& params);

/// Multi-head attention on already-normalised tokens. Query and key see
/// only `x`; the top-down input is added to the value input:
/// V = (x + x_td)·W_V + b_V.
template <typename T>
AttentionResult<T> self_attention(Var<T> x, const AttentionParams<T>& params, std::size_t heads,
                                  std::optional<Var<std::type_identity_t<T>>> x_td = std::nullopt,
                                  const LowRankDelta<T>* query_delta = nullptr,
                                  const LowRankDelta<T>* value_delta = nullptr);

/// Record of a run over a contiguous range of blocks.
template <typename T>
struct BlockRun {
  std::size_t first = 0;
  std::vector<Var<T>> inputs;        // input tokens of each block run
  std::vector<Var<T>> outputs;       // output tokens of each block run
  std::vector<Tensor<T>> attention;  // [H × N × N] probabilities per block
  Var<T> tokens;                     // output of the last block run
};

/// Runs blocks [first, last) starting from `tokens`. `top_down`, when given,
/// must hold exactly one entry per backbone layer.
template <typename T>
BlockRun<T> run_blocks(Var<T> tokens, const BackboneParams<T>& params, std::size_t first, std::size_t last,
                       const TopDownSignals<std::type_identity_t<T>>* top_down = nullptr,
                       const BackboneAdapters<std::type_identity_t<T>>* adapters = nullptr);

template <typename T>
struct Readout {
  Var<T> normed;  // final-layernormed tokens [N × dim]
  Var<T> logits;  // [n_classes]
};

/// Final layernorm, pooling (cls token, else mean over tokens) and head.
template <typename T>
Readout<T> readout(Var<T> tokens, const BackboneParams<T>& params);

template <typename T>
struct FeedforwardResult {
  Var<T> logits;
  Var<T> normed;
  BlockRun<T> blocks;
};

/// Full feedforward path over embedded tokens.
template <typename T>
FeedforwardResult<T> forward_feedforward(Var<T> tokens, const BackboneParams<T>& params,
                                         const TopDownSignals<std::type_identity_t<T>>* top_down = nullptr,
                                         const BackboneAdapters<std::type_identity_t<T>>* adapters = nullptr);

/// Index of the first patch token in the token matrix.
inline std::size_t first_patch_row(const BackboneConfig& config, std::size_t prompt_count = 0) {
  return (config.use_cls_token ? 1 : 0) + prompt_count;
}

}  // namespace toast
