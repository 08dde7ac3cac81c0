// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#include "toast/topdown.hpp"

#include <cmath>
#include <stdexcept>

namespace toast {

std::string to_string(FeedbackKind kind) {
  switch (kind) {
    case FeedbackKind::kFull: return "full";
    case FeedbackKind::kEarly: return "early";
    case FeedbackKind::kLate: return "late";
  }
  return "full";
}

FeedbackKind parse_feedback_kind(const std::string& name) {
  if (name == "full") return FeedbackKind::kFull;
  if (name == "early") return FeedbackKind::kEarly;
  if (name == "late") return FeedbackKind::kLate;
  throw std::invalid_argument("unknown feedback variant '" + name + "' (expected full, early or late)");
}

FeedbackVariant FeedbackVariant::make(FeedbackKind kind, std::size_t layers) {
  FeedbackVariant v;
  v.kind = kind;
  v.mid = kind == FeedbackKind::kFull ? 0 : layers / 2;
  return v;
}

void FeedbackVariant::validate(std::size_t layers) const {
  if (kind == FeedbackKind::kFull) return;
  if (mid < 1 || mid >= layers) {
    throw std::invalid_argument(to_string(kind) + " feedback needs 1 <= mid < layers, got mid=" +
                                std::to_string(mid) + " with " + std::to_string(layers) + " layers");
  }
}

std::size_t FeedbackVariant::span_begin(std::size_t layers) const {
  validate(layers);
  return kind == FeedbackKind::kLate ? mid : 0;
}

std::size_t FeedbackVariant::span_end(std::size_t layers) const {
  validate(layers);
  return kind == FeedbackKind::kEarly ? mid : layers;
}

std::size_t FeedbackVariant::first_pass_blocks(std::size_t layers) const {
  validate(layers);
  return kind == FeedbackKind::kEarly ? mid : layers;
}

std::size_t FeedbackVariant::second_pass_blocks(std::size_t layers) const {
  validate(layers);
  return kind == FeedbackKind::kLate ? layers - mid : layers;
}

TopDownParams<float> init_topdown(const BackboneConfig& config, const FeedbackVariant& variant, Rng& rng) {
  const std::size_t d = config.dim;
  TopDownParams<float> p;
  p.variant = variant;
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
  p.select.task_embedding = normal_tensor({d}, stddev, rng);
  p.select.channel_select = identity_matrix(d);
  const std::size_t begin = variant.span_begin(config.layers), end = variant.span_end(config.layers);
  for (std::size_t l = begin; l < end; ++l) {
    FeedbackLayer<float> layer;
    layer.feedback.weight = normal_tensor({d, d}, stddev, rng);
    layer.feedback.bias = Tensor<float>(Shape{d});
    layer.inject.weight = Tensor<float>(Shape{d, d});
    p.layers.push_back(std::move(layer));
  }
  return p;
}

template <typename T>
void lite_wrap(TopDownParams<T>& params, std::size_t rank, Rng& rng) {
  if (params.layers.empty()) return;
  const std::size_t d = params.layers.front().feedback.in_features();
  if (rank < 1 || rank > d) {
    throw std::invalid_argument("low-rank feedback needs 1 <= rank <= " + std::to_string(d) + ", got " +
                                std::to_string(rank));
  }
  for (auto& layer : params.layers) {
    layer.feedback_delta = cast_low_rank<T>(make_low_rank(d, d, rank, rng));
    layer.inject_delta = cast_low_rank<T>(make_low_rank(d, d, rank, rng));
  }
}

template <typename T>
template <typename U>
TopDownParams<U> TopDownParams<T>::cast() const {
  TopDownParams<U> out;
  out.variant = variant;
  out.select.task_embedding = select.task_embedding.template cast<U>();
  out.select.channel_select = select.channel_select.template cast<U>();
  for (const auto& l : layers) {
    FeedbackLayer<U> c;
    c.feedback = cast_linear<U>(l.feedback);
    c.inject = cast_linear<U>(l.inject);
    if (l.low_rank()) {
      c.feedback_delta = cast_low_rank<U>(l.feedback_delta);
      c.inject_delta = cast_low_rank<U>(l.inject_delta);
    }
    out.layers.push_back(std::move(c));
  }
  return out;
}

template <typename T>
FeatureSelection<T> feature_select(Var<T> tokens, const FeatureSelectParams<T>& params) {
  Tape<T>& tape = *tokens.tape;
  Var<T> sim = relu_clamp01(cosine_sim_rows(tokens, tape.param(params.task_embedding)));
  Var<T> selected = matmul(scale_rows(tokens, sim), tape.param(params.channel_select));
  return {selected, sim};
}

namespace {

template <typename T>
const LowRankDelta<T>* delta_or_null(const LowRankDelta<T>& d) {
  return d.down.empty() ? nullptr : &d;
}

template <typename T>
Var<T> apply_feedback(Var<T> state, const FeedbackLayer<T>& layer) {
  return apply_linear(state, layer.feedback, delta_or_null(layer.feedback_delta));
}

}  // namespace

template <typename T>
TopDownSignals<T> feedback_pass(Var<T> selected, const TopDownParams<T>& params, std::size_t layers,
                                std::size_t lead_rows) {
  const std::size_t begin = params.variant.span_begin(layers), end = params.variant.span_end(layers);
  if (params.layers.size() != end - begin) {
    throw std::invalid_argument("feedback path has " + std::to_string(params.layers.size()) +
                                " layers but the " + to_string(params.variant.kind) + " span covers " +
                                std::to_string(end - begin));
  }
  Tape<T>& tape = *selected.tape;
  std::optional<Var<T>> lead;
  if (lead_rows > 0) lead = tape.constant(Tensor<T>(Shape{lead_rows, selected.dim(1)}));

  TopDownSignals<T> signals(layers);
  Var<T> state = selected;
  for (std::size_t l = end; l-- > begin;) {
    const FeedbackLayer<T>& layer = params.layers[l - begin];
    state = apply_feedback(state, layer);
    Var<T> signal = apply_linear(state, layer.inject, delta_or_null(layer.inject_delta));
    signals[l] = lead ? concat_rows<T>({*lead, signal}) : signal;
  }
  return signals;
}

template <typename T>
ToastResult<T> toast_forward(Tape<T>& tape, const Tensor<T>& image, const BackboneParams<T>& backbone,
                             const TopDownParams<T>& topdown, const ToastOptions& options) {
  const BackboneConfig& config = backbone.config;
  const std::size_t layers = backbone.blocks.size();
  const FeedbackVariant& variant = topdown.variant;
  variant.validate(layers);
  const std::size_t lead = first_patch_row(config);
  const std::size_t n = config.n_tokens();

  ToastResult<T> result;
  InferenceTrace<T>& trace = result.trace;
  Var<T> tokens = patch_embed(tape, image, backbone);

  // Step i: bottom-up pass.
  const std::size_t pass1_blocks = variant.first_pass_blocks(layers);
  trace.first_pass = run_blocks(tokens, backbone, 0, pass1_blocks);
  Readout<T> first = readout(trace.first_pass.tokens, backbone);
  if (pass1_blocks == layers) trace.first_pass_logits = first.logits;

  // Step ii: feature selection on the normalised patch tokens.
  FeatureSelection<T> sel = feature_select(rows(first.normed, lead, n), topdown.select);
  trace.selected = sel.selected;
  trace.similarity = sel.similarity.value();

  // Step iii: feedback path.
  TopDownSignals<T> signals = feedback_pass(sel.selected, topdown, layers, lead);

  // Step iv: second pass with top-down inputs.
  std::size_t start = 0;
  Var<T> start_tokens = tokens;
  if (variant.kind == FeedbackKind::kLate && options.share_activations) {
    start = variant.mid;
    start_tokens = trace.first_pass.outputs[variant.mid - 1];
  }
  trace.second_pass = run_blocks(start_tokens, backbone, start, layers, &signals);
  for (std::size_t l = 0; l < start; ++l) trace.second_attention.push_back(trace.first_pass.attention[l]);
  for (const auto& a : trace.second_pass.attention) trace.second_attention.push_back(a);
  trace.blocks_executed = pass1_blocks + (layers - start);

  result.logits = readout(trace.second_pass.tokens, backbone).logits;
  return result;
}

template <typename T>
Var<T> variational_loss(Tape<T>& tape, const InferenceTrace<T>& trace, const TopDownParams<T>& params,
                        const BackboneConfig& config) {
  const std::size_t layers = config.layers;
  const std::size_t begin = params.variant.span_begin(layers), end = params.variant.span_end(layers);
  if (begin == end) return tape.constant(Tensor<T>::scalar(T(0)));
  const std::size_t lead = first_patch_row(config);
  const std::size_t n = config.n_tokens();
  std::optional<Var<T>> total;
  for (std::size_t l = begin; l < end; ++l) {
    if (l < trace.first_pass.first || l - trace.first_pass.first >= trace.first_pass.outputs.size()) {
      throw std::invalid_argument("variational loss: pass 1 did not run layer " + std::to_string(l));
    }
    const std::size_t k = l - trace.first_pass.first;
    Var<T> out = rows(trace.first_pass.outputs[k], lead, n);
    Var<T> in = rows(trace.first_pass.inputs[k], lead, n);
    Var<T> err = mse(apply_feedback(out, params.layers[l - begin]), in);
    total = total ? add(*total, err) : err;
  }
  return scale(*total, T(1) / static_cast<T>(end - begin));
}

#define TOAST_INSTANTIATE(T)                                                                                  \
  template void lite_wrap<T>(TopDownParams<T>&, std::size_t, Rng&);                                          \
  template TopDownParams<float> TopDownParams<T>::cast<float>() const;                                       \
  template TopDownParams<double> TopDownParams<T>::cast<double>() const;                                     \
  template FeatureSelection<T> feature_select<T>(Var<T>, const FeatureSelectParams<T>&);                     \
  template TopDownSignals<T> feedback_pass<T>(Var<T>, const TopDownParams<T>&, std::size_t, std::size_t);    \
  template ToastResult<T> toast_forward<T>(Tape<T>&, const Tensor<T>&, const BackboneParams<T>&,             \
                                           const TopDownParams<T>&, const ToastOptions&);                    \
  template Var<T> variational_loss<T>(Tape<T>&, const InferenceTrace<T>&, const TopDownParams<T>&,           \
                                      const BackboneConfig&);

TOAST_INSTANTIATE(float)
TOAST_INSTANTIATE(double)
#undef TOAST_INSTANTIATE

}  // namespace toast
