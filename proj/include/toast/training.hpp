// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

// Transfer pipeline: backbone pre-training, top-down pre-tuning, downstream
// tuning with baseline methods, plus parameter and FLOP accounting.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "toast/backbone.hpp"
#include "toast/data.hpp"
#include "toast/topdown.hpp"

namespace toast {

enum class MethodKind { kLinear, kFullFinetune, kLoraBackbone, kPromptTokens, kToast, kToastLite };

std::string to_string(MethodKind kind);
MethodKind parse_method_kind(const std::string& name);
const std::vector<MethodKind>& all_methods();

struct MethodSpec {
  MethodKind kind = MethodKind::kToast;
  std::size_t lora_rank = 4;      // lora_backbone
  std::size_t prompt_count = 100;  // prompt_tokens, per layer
  std::size_t lite_rank = 4;      // toast_lite
  FeedbackKind feedback = FeedbackKind::kFull;

  bool uses_topdown() const { return kind == MethodKind::kToast || kind == MethodKind::kToastLite; }
  bool operator==(const MethodSpec&) const = default;
};

/// Parameter groups. Every tensor of a model belongs to exactly one.
namespace group {
inline constexpr const char* kBackbone = "backbone";
inline constexpr const char* kHead = "head";
inline constexpr const char* kFeatureSelect = "feature_select";
inline constexpr const char* kFeedback = "feedback";
inline constexpr const char* kFeedbackLowRank = "feedback_low_rank";
inline constexpr const char* kBackboneLowRank = "backbone_low_rank";
inline constexpr const char* kPrompts = "prompts";
}  // namespace group

template <typename T>
struct Model {
  BackboneParams<T> backbone;
  BackboneAdapters<T> adapters;
  std::optional<TopDownParams<T>> topdown;
  MethodSpec method;

  template <typename U>
  Model<U> cast() const;
};

/// Attaches the method's extra components to a backbone. `topdown`, when
/// given, is used as the starting top-down module (e.g. a pre-tuned one).
Model<float> build_model(const BackboneParams<float>& backbone, const MethodSpec& method, Rng& rng,
                         const std::optional<TopDownParams<float>>& topdown = std::nullopt);

/// Visits every parameter tensor with its stable name and group.
template <typename T, typename Fn>
void visit_params(Model<T>& model, Fn&& fn);
template <typename T, typename Fn>
void visit_params(const Model<T>& model, Fn&& fn);

/// Groups a method may update.
class TrainableSet {
 public:
  TrainableSet() = default;
  explicit TrainableSet(std::map<std::string, bool> groups) : groups_(std::move(groups)) {}

  static TrainableSet for_method(MethodKind kind);
  /// Pre-tuning updates the top-down module only; the head stays frozen.
  static TrainableSet for_pretune();

  bool trainable(const std::string& group) const;
  const std::map<std::string, bool>& groups() const { return groups_; }

  /// Sets requires_grad on every tensor according to its group.
  template <typename T>
  void apply(Model<T>& model) const;

 private:
  std::map<std::string, bool> groups_;
};

enum class OptimizerKind { kSgdMomentum, kAdaptiveMoments };

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  double lambda_variational = 0.03;
  OptimizerKind optimizer = OptimizerKind::kAdaptiveMoments;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  bool cosine_schedule = true;

  void validate() const;
};

/// First-order optimizer over named tensors. State is keyed by name, so a
/// parameter keeps its moments across steps.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

  /// Updates every tensor in `params` that has a gradient, using learning
  /// rate `lr`. Tensors without a gradient are left untouched.
  void step(const std::vector<std::pair<std::string, Tensor<float>*>>& params, double lr);

 private:
  struct State {
    std::vector<float> m, v;
  };
  TrainConfig cfg_;
  std::map<std::string, State> state_;
  std::size_t steps_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0;
  double train_accuracy = 0;
  double val_accuracy = -1;  // negative when no validation set was given
};

struct TrainReport {
  std::vector<EpochMetrics> epochs;
  double initial_loss = 0;  // mean objective of the first batch, before any update
  double final_train_accuracy = 0;
  double final_val_accuracy = -1;
};

/// Per-epoch callback, e.g. for progress output.
using EpochHook = std::function<void(const EpochMetrics&)>;

/// Logits of the model's method-specific forward path.
template <typename T>
Var<T> model_logits(Tape<T>& tape, const Model<T>& model, const Tensor<T>& image);

/// Classification loss of one example, plus lambda times the variational
/// loss when lambda > 0 and the model has a top-down module.
template <typename T>
Var<T> example_objective(Tape<T>& tape, const Model<T>& model, const LabeledImage& example, double lambda,
                         std::size_t* predicted = nullptr);

/// Mini-batch training of whatever tensors currently require gradients.
TrainReport train(Model<float>& model, const Dataset& train_set, const Dataset* val_set, const TrainConfig& cfg,
                  double lambda, const EpochHook& hook = {});

double evaluate_accuracy(const Model<float>& model, const Dataset& data);
std::vector<std::size_t> predict(const Model<float>& model, const Dataset& data);

/// Supervised training of a fresh backbone on a generic dataset.
BackboneParams<float> pretrain_backbone(const Dataset& data, const BackboneConfig& config, const TrainConfig& cfg,
                                        TrainReport* report = nullptr, const EpochHook& hook = {});

/// Trains the top-down module of `model` (backbone and head frozen) on a
/// generic dataset with task loss plus lambda_variational times the
/// variational loss. Returns the tuned top-down parameters.
TopDownParams<float> pretune(Model<float>& model, const Dataset& data, const TrainConfig& cfg,
                             TrainReport* report = nullptr, const EpochHook& hook = {});

/// Fits `model` to a downstream task: installs a fresh head for the task's
/// classes and trains exactly the method's trainable set.
TrainReport tune(Model<float>& model, const Dataset& train_set, const Dataset* val_set, const TrainConfig& cfg,
                 const EpochHook& hook = {});

/// Head-averaged cls attention over patches in the last layer of each
/// pass, and the feature-selection similarity, each flattened [n_patches].
struct PassMaps {
  Tensor<float> first_pass;
  Tensor<float> similarity;
  Tensor<float> second_pass;
};

/// Needs a top-down model with a cls token. When pass 1 stops below the top
/// layer (early feedback) the pass-1 map comes from a plain feedforward run.
PassMaps pass_maps(const Model<float>& model, const Tensor<float>& image);

/// Last-layer cls attention focus of pass 1 and pass 2 on every image that
/// carries a relevance mask. Needs a top-down model with a cls token.
struct FocusComparison {
  std::vector<double> first_pass;
  std::vector<double> second_pass;
  double mean_first = 0;
  double mean_second = 0;
  double improved_fraction = 0;  // share of images with second > first
};

FocusComparison compare_focus(const Model<float>& model, const Dataset& data);

struct ParamCount {
  std::uint64_t trainable = 0;
  std::uint64_t total = 0;
  double fraction = 0;
};

struct ParamSpec {
  std::string name;
  std::string group;
  std::uint64_t size = 0;
};

/// Every parameter tensor of a model built for `method`, computed from the
/// configuration alone.
std::vector<ParamSpec> param_specs(const BackboneConfig& config, const MethodSpec& method);
ParamCount param_count(const BackboneConfig& config, const MethodSpec& method);
template <typename T>
ParamCount param_count(const Model<T>& model);

struct FlopsReport {
  double single_pass = 0;        // one feedforward: embedding, blocks, head
  double backbone = 0;           // feedforward-path FLOPs the method executes
  double relative = 0;           // backbone / single_pass
  double block_relative = 0;     // executed transformer blocks / layers
  double feedback_overhead = 0;  // feature selection and feedback path
};

/// Matmul FLOPs (2·m·k·n per product) of one inference.
FlopsReport flops_estimate(const BackboneConfig& config, const MethodSpec& method);

/// FNV-1a digest over the bytes of every tensor in the given groups.
template <typename T>
std::uint64_t group_hash(const Model<T>& model, const std::vector<std::string>& groups);

// ---------------------------------------------------------------------------

template <typename T, typename Fn>
void visit_params_impl(Model<T>& model, Fn&& fn) {
  auto& b = model.backbone;
  auto linear = [&fn](const std::string& prefix, const char* grp, Linear<T>& l) {
    fn(prefix + ".weight", grp, l.weight);
    if (!l.bias.empty()) fn(prefix + ".bias", grp, l.bias);
  };
  auto norm = [&fn](const std::string& prefix, const char* grp, LayerNormParams<T>& l) {
    fn(prefix + ".gain", grp, l.gain);
    fn(prefix + ".bias", grp, l.bias);
  };
  auto low_rank = [&fn](const std::string& prefix, const char* grp, LowRankDelta<T>& l) {
    fn(prefix + ".down", grp, l.down);
    fn(prefix + ".up", grp, l.up);
  };
  linear("backbone.patch_embed", group::kBackbone, b.patch_embed);
  fn("backbone.pos_embed", group::kBackbone, b.pos_embed);
  if (!b.cls_token.empty()) fn("backbone.cls_token", group::kBackbone, b.cls_token);
  for (std::size_t l = 0; l < b.blocks.size(); ++l) {
    auto& blk = b.blocks[l];
    const std::string p = "backbone.blocks." + std::to_string(l);
    norm(p + ".norm1", group::kBackbone, blk.norm1);
    linear(p + ".attention.query", group::kBackbone, blk.attention.query);
    linear(p + ".attention.key", group::kBackbone, blk.attention.key);
    linear(p + ".attention.value", group::kBackbone, blk.attention.value);
    linear(p + ".attention.output", group::kBackbone, blk.attention.output);
    norm(p + ".norm2", group::kBackbone, blk.norm2);
    linear(p + ".fc1", group::kBackbone, blk.fc1);
    linear(p + ".fc2", group::kBackbone, blk.fc2);
  }
  norm("backbone.final_norm", group::kBackbone, b.final_norm);
  linear("head", group::kHead, b.head);

  for (std::size_t l = 0; l < model.adapters.query_delta.size(); ++l)
    low_rank("adapters.query." + std::to_string(l), group::kBackboneLowRank, model.adapters.query_delta[l]);
  for (std::size_t l = 0; l < model.adapters.value_delta.size(); ++l)
    low_rank("adapters.value." + std::to_string(l), group::kBackboneLowRank, model.adapters.value_delta[l]);
  for (std::size_t l = 0; l < model.adapters.prompts.size(); ++l)
    fn("adapters.prompts." + std::to_string(l), group::kPrompts, model.adapters.prompts[l]);

  if (model.topdown) {
    auto& td = *model.topdown;
    fn("topdown.task_embedding", group::kFeatureSelect, td.select.task_embedding);
    fn("topdown.channel_select", group::kFeatureSelect, td.select.channel_select);
    const std::size_t begin = td.variant.span_begin(b.blocks.size());
    for (std::size_t i = 0; i < td.layers.size(); ++i) {
      auto& fl = td.layers[i];
      const std::string idx = std::to_string(begin + i);
      linear("topdown.feedback." + idx, group::kFeedback, fl.feedback);
      linear("topdown.inject." + idx, group::kFeedback, fl.inject);
      if (fl.low_rank()) {
        low_rank("topdown.feedback." + idx, group::kFeedbackLowRank, fl.feedback_delta);
        low_rank("topdown.inject." + idx, group::kFeedbackLowRank, fl.inject_delta);
      }
    }
  }
}

template <typename T, typename Fn>
void visit_params(Model<T>& model, Fn&& fn) {
  visit_params_impl(model, std::forward<Fn>(fn));
}

template <typename T, typename Fn>
void visit_params(const Model<T>& model, Fn&& fn) {
  visit_params_impl(const_cast<Model<T>&>(model),
                    [&fn](const std::string& name, const char* grp, Tensor<T>& t) {
                      fn(name, grp, static_cast<const Tensor<T>&>(t));
                    });
}

template <typename T>
void TrainableSet::apply(Model<T>& model) const {
  visit_params(model, [this](const std::string&, const char* grp, Tensor<T>& t) {
    t.set_requires_grad(trainable(grp));
  });
}

}  // namespace toast
