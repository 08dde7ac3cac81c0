// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

// Top-down attention module.
//
// Inference runs in four steps: a bottom-up pass through the frozen
// backbone, feature selection on its output tokens, a descent through the
// feedback path that produces one top-down signal per attention layer, and a
// second backbone pass whose attention layers add those signals to their
// value input.
//
// Layers are indexed from 0. The feedback span is the half-open layer range
// that receives top-down signals:
//   full   [0, L)    selection on the final output
//   early  [0, mid)  selection on the output of block mid-1
//   late   [mid, L)  selection on the final output; blocks below mid are
//                    shared between the two passes

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "toast/backbone.hpp"

namespace toast {

enum class FeedbackKind { kFull, kEarly, kLate };

std::string to_string(FeedbackKind kind);
FeedbackKind parse_feedback_kind(const std::string& name);

struct FeedbackVariant {
  FeedbackKind kind = FeedbackKind::kFull;
  std::size_t mid = 0;  // used by early and late

  /// Variant with mid = floor(layers / 2).
  static FeedbackVariant make(FeedbackKind kind, std::size_t layers);

  void validate(std::size_t layers) const;
  std::size_t span_begin(std::size_t layers) const;
  std::size_t span_end(std::size_t layers) const;
  /// Number of blocks whose output feeds feature selection in the first pass.
  std::size_t first_pass_blocks(std::size_t layers) const;
  /// Number of blocks executed in the second pass.
  std::size_t second_pass_blocks(std::size_t layers) const;

  bool operator==(const FeedbackVariant&) const = default;
};

template <typename T>
struct FeatureSelectParams {
  Tensor<T> task_embedding;  // [d]
  Tensor<T> channel_select;  // [d × d]
};

/// Feedback-path layer for one backbone layer: an affine feedback transform
/// carrying the top-down state one layer down, and a bias-free injection
/// transform producing that layer's top-down signal.
template <typename T>
struct FeedbackLayer {
  Linear<T> feedback;
  Linear<T> inject;
  LowRankDelta<T> feedback_delta;  // empty unless low-rank wrapped
  LowRankDelta<T> inject_delta;

  bool low_rank() const { return !feedback_delta.down.empty(); }
};

template <typename T>
struct TopDownParams {
  FeedbackVariant variant;
  FeatureSelectParams<T> select;
  std::vector<FeedbackLayer<T>> layers;  // span layers in ascending layer order

  bool low_rank() const { return !layers.empty() && layers.front().low_rank(); }

  template <typename U>
  TopDownParams<U> cast() const;
};

/// Task embedding ~ N(0, 1/d), channel selection = I, feedback ~ N(0, 1/d)
/// with zero bias, injection = 0 (the module starts as a no-op).
TopDownParams<float> init_topdown(const BackboneConfig& config, const FeedbackVariant& variant, Rng& rng);

/// Attaches a rank-r delta with a zero-initialised up factor to every
/// feedback and injection transform. Throws unless 1 <= rank <= d.
template <typename T>
void lite_wrap(TopDownParams<T>& params, std::size_t rank, Rng& rng);

template <typename T>
struct FeatureSelection {
  Var<T> selected;    // [N × d]
  Var<T> similarity;  // [N], entries in [0, 1]
};

/// s_i = clamp01(cos(z_i, task_embedding)); selected_i = (s_i · z_i) · P.
template <typename T>
FeatureSelection<T> feature_select(Var<T> tokens, const FeatureSelectParams<T>& params);

/// Descends the feedback span from the selected tokens. The state entering
/// the top layer of the span is `selected`; each layer l applies its feedback
/// transform to the state and its injection transform to the result, which
/// becomes layer l's top-down signal. Layers outside the span get no signal.
/// `lead_rows` zero rows (cls, prompts) are prepended to every signal.
template <typename T>
TopDownSignals<T> feedback_pass(Var<T> selected, const TopDownParams<T>& params, std::size_t layers,
                                std::size_t lead_rows);

template <typename T>
struct InferenceTrace {
  BlockRun<T> first_pass;                   // blocks run in pass 1
  std::optional<Var<T>> first_pass_logits;  // when pass 1 ran every block
  Tensor<T> similarity;                     // [n_patches]
  Var<T> selected;
  BlockRun<T> second_pass;                   // blocks executed in pass 2
  std::vector<Tensor<T>> second_attention;  // pass-2 maps for every layer
  std::size_t blocks_executed = 0;
};

template <typename T>
struct ToastResult {
  Var<T> logits;
  InferenceTrace<T> trace;
};

struct ToastOptions {
  // Late feedback: reuse pass-1 activations below mid instead of recomputing.
  bool share_activations = true;
};

template <typename T>
ToastResult<T> toast_forward(Tape<T>& tape, const Tensor<T>& image, const BackboneParams<T>& backbone,
                             const TopDownParams<T>& topdown, const ToastOptions& options = {});

/// Mean over span layers of the squared error between the feedback
/// transform applied to a layer's pass-1 output and that layer's pass-1
/// input, over patch tokens. Unweighted; zero for an empty span.
template <typename T>
Var<T> variational_loss(Tape<T>& tape, const InferenceTrace<T>& trace, const TopDownParams<T>& params,
                        const BackboneConfig& config);

}  // namespace toast
