// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#include "toast/backbone.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace toast {

void BackboneConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("backbone config: " + what); };
  if (image_side == 0 || patch_side == 0 || channels == 0 || dim == 0 || heads == 0 || n_classes == 0 ||
      mlp_ratio == 0) {
    fail("extents must be positive");
  }
  if (image_side % patch_side != 0) fail("image_side must be divisible by patch_side");
  if (dim % heads != 0) fail("dim must be divisible by heads");
}

BackboneParams<float> init_backbone(const BackboneConfig& config, Rng& rng) {
  config.validate();
  const std::size_t d = config.dim;
  BackboneParams<float> p;
  p.config = config;
  p.patch_embed = make_linear(config.patch_dim(), d, true, rng);
  p.pos_embed = normal_tensor({config.n_patches(), d}, 0.02, rng);
  if (config.use_cls_token) p.cls_token = normal_tensor({1, d}, 0.02, rng);
  for (std::size_t l = 0; l < config.layers; ++l) {
    BlockParams<float> b;
    b.norm1 = make_layernorm(d);
    b.attention.query = make_linear(d, d, true, rng);
    b.attention.key = make_linear(d, d, true, rng);
    b.attention.value = make_linear(d, d, true, rng);
    b.attention.output = make_linear(d, d, true, rng);
    // Residual branches start small so a fresh stack is close to identity.
    const float branch = static_cast<float>(1.0 / std::sqrt(2.0 * std::max<std::size_t>(config.layers, 1)));
    for (float& w : b.attention.output.weight.data()) w *= branch;
    b.norm2 = make_layernorm(d);
    b.fc1 = make_linear(d, config.hidden(), true, rng);
    b.fc2 = make_linear(config.hidden(), d, true, rng);
    for (float& w : b.fc2.weight.data()) w *= branch;
    p.blocks.push_back(std::move(b));
  }
  p.final_norm = make_layernorm(d);
  p.head = make_linear(d, config.n_classes, true, rng);
  return p;
}

template <typename T>
void reset_head(BackboneParams<T>& params, std::size_t n_classes, Rng& rng) {
  params.config.n_classes = n_classes;
  Linear<float> fresh = make_linear(params.config.dim, n_classes, true, rng);
  const bool trainable = params.head.weight.requires_grad();
  params.head = cast_linear<T>(fresh);
  params.head.weight.set_requires_grad(trainable);
  params.head.bias.set_requires_grad(trainable);
}

template <typename T>
template <typename U>
BackboneParams<U> BackboneParams<T>::cast() const {
  BackboneParams<U> out;
  out.config = config;
  out.patch_embed = cast_linear<U>(patch_embed);
  out.pos_embed = pos_embed.template cast<U>();
  if (!cls_token.empty()) out.cls_token = cls_token.template cast<U>();
  for (const auto& b : blocks) {
    BlockParams<U> c;
    c.norm1 = cast_layernorm<U>(b.norm1);
    c.attention.query = cast_linear<U>(b.attention.query);
    c.attention.key = cast_linear<U>(b.attention.key);
    c.attention.value = cast_linear<U>(b.attention.value);
    c.attention.output = cast_linear<U>(b.attention.output);
    c.norm2 = cast_layernorm<U>(b.norm2);
    c.fc1 = cast_linear<U>(b.fc1);
    c.fc2 = cast_linear<U>(b.fc2);
    out.blocks.push_back(std::move(c));
  }
  out.final_norm = cast_layernorm<U>(final_norm);
  out.head = cast_linear<U>(head);
  return out;
}

template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, const BackboneConfig& config) {
  const std::size_t side = config.image_side, ps = config.patch_side, ch = config.channels;
  if (image.shape() != Shape{ch, side, side}) {
    throw ShapeError("image shape " + shape_string(image.shape()) + " does not match config " +
                     shape_string(Shape{ch, side, side}));
  }
  const std::size_t grid = config.grid();
  Tensor<T> patches(Shape{grid * grid, config.patch_dim()});
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      T* dst = patches.raw() + (gy * grid + gx) * config.patch_dim();
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < ps; ++y)
          for (std::size_t x = 0; x < ps; ++x)
            *dst++ = image[(c * side + gy * ps + y) * side + gx * ps + x];
    }
  }
  return patches;
}

template <typename T>
Var<T> patch_embed(Tape<T>& tape, const Tensor<T>& image, const BackboneParams<T>& params) {
  Var<T> patches = tape.constant(extract_patches(image, params.config));
  Var<T> tokens = add(apply_linear(patches, params.patch_embed), tape.param(params.pos_embed));
  if (params.config.use_cls_token) tokens = concat_rows<T>({tape.param(params.cls_token), tokens});
  return tokens;
}

template <typename T>
AttentionResult<T> self_attention(Var<T> x, const AttentionParams<T>& params, std::size_t heads,
                                  std::optional<Var<std::type_identity_t<T>>> x_td, const LowRankDelta<T>* query_delta,
                                  const LowRankDelta<T>* value_delta) {
  if (x_td && x_td->shape() != x.shape()) {
    throw ShapeError("top-down input " + shape_string(x_td->shape()) + " does not match tokens " +
                     shape_string(x.shape()));
  }
  Var<T> q = apply_linear(x, params.query, query_delta);
  Var<T> k = apply_linear(x, params.key);
  Var<T> value_in = x_td ? add(x, *x_td) : x;
  Var<T> v = apply_linear(value_in, params.value, value_delta);
  AttentionResult<T> att = multihead_attention(q, k, v, heads);
  att.out = apply_linear(att.out, params.output);
  return att;
}

namespace {

template <typename T>
Var<T> with_prompts(Var<T> tokens, const Tensor<T>& prompts, const BackboneConfig& config) {
  Tape<T>& tape = *tokens.tape;
  const std::size_t base = config.n_tokens();
  const std::size_t n = tokens.dim(0);
  const std::size_t p = prompts.dim(0);
  Var<T> prompt_rows = tape.param(prompts);
  std::vector<Var<T>> parts;
  const std::size_t lead = config.use_cls_token ? 1 : 0;
  if (lead) parts.push_back(rows(tokens, 0, 1));
  parts.push_back(prompt_rows);
  if (n == base) {
    parts.push_back(rows(tokens, lead, n));
  } else if (n == base + p) {
    parts.push_back(rows(tokens, lead + p, n));
  } else {
    throw ShapeError("prompt insertion: unexpected token count " + std::to_string(n));
  }
  return concat_rows(parts);
}

}  // namespace

template <typename T>
BlockRun<T> run_blocks(Var<T> tokens, const BackboneParams<T>& params, std::size_t first, std::size_t last,
                       const TopDownSignals<std::type_identity_t<T>>* top_down, const BackboneAdapters<std::type_identity_t<T>>* adapters) {
  const std::size_t layers = params.blocks.size();
  if (first > last || last > layers) throw std::invalid_argument("run_blocks: bad layer range");
  if (top_down != nullptr && top_down->size() != layers) {
    throw std::invalid_argument("top-down list has " + std::to_string(top_down->size()) + " entries for " +
                                std::to_string(layers) + " layers");
  }
  const bool has_query_delta = adapters != nullptr && !adapters->query_delta.empty();
  const bool has_value_delta = adapters != nullptr && !adapters->value_delta.empty();
  const bool has_prompts = adapters != nullptr && !adapters->prompts.empty();
  if ((has_query_delta && adapters->query_delta.size() != layers) ||
      (has_value_delta && adapters->value_delta.size() != layers) ||
      (has_prompts && adapters->prompts.size() != layers)) {
    throw std::invalid_argument("adapter lists must hold one entry per layer");
  }

  BlockRun<T> run;
  run.first = first;
  Var<T> x = tokens;
  for (std::size_t l = first; l < last; ++l) {
    const BlockParams<T>& block = params.blocks[l];
    if (has_prompts) x = with_prompts(x, adapters->prompts[l], params.config);
    run.inputs.push_back(x);
    std::optional<Var<T>> td;
    if (top_down != nullptr) td = (*top_down)[l];
    Var<T> h = apply_layernorm(x, block.norm1);
    AttentionResult<T> att =
        self_attention(h, block.attention, params.config.heads, td,
                       has_query_delta ? &adapters->query_delta[l] : nullptr,
                       has_value_delta ? &adapters->value_delta[l] : nullptr);
    x = add(x, att.out);
    Var<T> m = apply_linear(gelu(apply_linear(apply_layernorm(x, block.norm2), block.fc1)), block.fc2);
    x = add(x, m);
    run.outputs.push_back(x);
    run.attention.push_back(std::move(att.probs));
  }
  run.tokens = x;
  return run;
}

template <typename T>
Readout<T> readout(Var<T> tokens, const BackboneParams<T>& params) {
  Readout<T> r;
  r.normed = apply_layernorm(tokens, params.final_norm);
  Var<T> pooled = params.config.use_cls_token ? rows(r.normed, 0, 1) : mean_rows(r.normed);
  Var<T> logits = apply_linear(pooled, params.head);
  r.logits = reshape(logits, Shape{params.head.out_features()});
  return r;
}

template <typename T>
FeedforwardResult<T> forward_feedforward(Var<T> tokens, const BackboneParams<T>& params,
                                         const TopDownSignals<std::type_identity_t<T>>* top_down, const BackboneAdapters<std::type_identity_t<T>>* adapters) {
  FeedforwardResult<T> result;
  result.blocks = run_blocks(tokens, params, 0, params.blocks.size(), top_down, adapters);
  Readout<T> r = readout(result.blocks.tokens, params);
  result.logits = r.logits;
  result.normed = r.normed;
  return result;
}

#define TOAST_INSTANTIATE(T)                                                                                   \
  template void reset_head<T>(BackboneParams<T>&, std::size_t, Rng&);                                         \
  template BackboneParams<float> BackboneParams<T>::cast<float>() const;                                      \
  template BackboneParams<double> BackboneParams<T>::cast<double>() const;                                    \
  template Tensor<T> extract_patches<T>(const Tensor<T>&, const BackboneConfig&);                             \
  template Var<T> patch_embed<T>(Tape<T>&, const Tensor<T>&, const BackboneParams<T>&);                       \
  template AttentionResult<T> self_attention<T>(Var<T>, const AttentionParams<T>&, std::size_t,               \
                                                std::optional<Var<std::type_identity_t<T>>>, const LowRankDelta<T>*,                \
                                                const LowRankDelta<T>*);                                      \
  template BlockRun<T> run_blocks<T>(Var<T>, const BackboneParams<T>&, std::size_t, std::size_t,              \
                                     const TopDownSignals<std::type_identity_t<T>>*, const BackboneAdapters<std::type_identity_t<T>>*);                   \
  template Readout<T> readout<T>(Var<T>, const BackboneParams<T>&);                                           \
  template FeedforwardResult<T> forward_feedforward<T>(Var<T>, const BackboneParams<T>&,                      \
                                                       const TopDownSignals<std::type_identity_t<T>>*, const BackboneAdapters<std::type_identity_t<T>>*);

TOAST_INSTANTIATE(float)
TOAST_INSTANTIATE(double)
#undef TOAST_INSTANTIATE

}  // namespace toast
