// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#include "toast/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace toast {

std::string to_string(MethodKind kind) {
  switch (kind) {
    case MethodKind::kLinear: return "linear";
    case MethodKind::kFullFinetune: return "full_finetune";
    case MethodKind::kLoraBackbone: return "lora_backbone";
    case MethodKind::kPromptTokens: return "prompt_tokens";
    case MethodKind::kToast: return "toast";
    case MethodKind::kToastLite: return "toast_lite";
  }
  return "toast";
}

MethodKind parse_method_kind(const std::string& name) {
  for (MethodKind k : all_methods())
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown method '" + name +
                              "' (expected linear, full_finetune, lora_backbone, prompt_tokens, toast or toast_lite)");
}

const std::vector<MethodKind>& all_methods() {
  static const std::vector<MethodKind> kinds = {MethodKind::kLinear,       MethodKind::kFullFinetune,
                                                MethodKind::kLoraBackbone, MethodKind::kPromptTokens,
                                                MethodKind::kToast,        MethodKind::kToastLite};
  return kinds;
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out;
  out.backbone = backbone.template cast<U>();
  for (const auto& d : adapters.query_delta) out.adapters.query_delta.push_back(cast_low_rank<U>(d));
  for (const auto& d : adapters.value_delta) out.adapters.value_delta.push_back(cast_low_rank<U>(d));
  for (const auto& p : adapters.prompts) out.adapters.prompts.push_back(p.template cast<U>());
  if (topdown) out.topdown = topdown->template cast<U>();
  out.method = method;
  return out;
}

Model<float> build_model(const BackboneParams<float>& backbone, const MethodSpec& method, Rng& rng,
                         const std::optional<TopDownParams<float>>& topdown) {
  Model<float> m;
  m.backbone = backbone;
  m.method = method;
  const BackboneConfig& c = backbone.config;
  const std::size_t d = c.dim, layers = backbone.blocks.size();
  switch (method.kind) {
    case MethodKind::kLinear:
    case MethodKind::kFullFinetune: break;
    case MethodKind::kLoraBackbone:
      if (method.lora_rank < 1 || method.lora_rank > d)
        throw std::invalid_argument("lora rank must be in [1, " + std::to_string(d) + "]");
      for (std::size_t l = 0; l < layers; ++l) {
        m.adapters.query_delta.push_back(make_low_rank(d, d, method.lora_rank, rng));
        m.adapters.value_delta.push_back(make_low_rank(d, d, method.lora_rank, rng));
      }
      break;
    case MethodKind::kPromptTokens:
      if (method.prompt_count < 1) throw std::invalid_argument("prompt count must be positive");
      for (std::size_t l = 0; l < layers; ++l) m.adapters.prompts.push_back(normal_tensor({method.prompt_count, d}, 0.02, rng));
      break;
    case MethodKind::kToast:
    case MethodKind::kToastLite: {
      const FeedbackVariant variant = FeedbackVariant::make(method.feedback, layers);
      variant.validate(layers);
      if (topdown) {
        if (topdown->variant != variant)
          throw std::invalid_argument("top-down module was built for the " + to_string(topdown->variant.kind) +
                                      " variant, method asks for " + to_string(variant.kind));
        m.topdown = *topdown;
      } else {
        m.topdown = init_topdown(c, variant, rng);
      }
      if (method.kind == MethodKind::kToastLite && !m.topdown->low_rank()) lite_wrap(*m.topdown, method.lite_rank, rng);
      break;
    }
  }
  TrainableSet::for_method(method.kind).apply(m);
  return m;
}

TrainableSet TrainableSet::for_method(MethodKind kind) {
  std::map<std::string, bool> g = {{group::kBackbone, false},        {group::kHead, true},
                                   {group::kFeatureSelect, false},   {group::kFeedback, false},
                                   {group::kFeedbackLowRank, false}, {group::kBackboneLowRank, false},
                                   {group::kPrompts, false}};
  switch (kind) {
    case MethodKind::kLinear: break;
    case MethodKind::kFullFinetune: g[group::kBackbone] = true; break;
    case MethodKind::kLoraBackbone: g[group::kBackboneLowRank] = true; break;
    case MethodKind::kPromptTokens: g[group::kPrompts] = true; break;
    case MethodKind::kToast:
      g[group::kFeatureSelect] = true;
      g[group::kFeedback] = true;
      break;
    case MethodKind::kToastLite:
      g[group::kFeatureSelect] = true;
      g[group::kFeedbackLowRank] = true;
      break;
  }
  return TrainableSet(std::move(g));
}

TrainableSet TrainableSet::for_pretune() {
  TrainableSet s = for_method(MethodKind::kToast);
  s.groups_[group::kHead] = false;
  return s;
}

bool TrainableSet::trainable(const std::string& name) const {
  auto it = groups_.find(name);
  return it != groups_.end() && it->second;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) fail("learning_rate must be finite and >= 0");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be >= 0");
  if (!(lambda_variational >= 0)) fail("lambda_variational must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) fail("momentum must be in [0, 1)");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) fail("betas must be in [0, 1)");
  if (!(epsilon > 0)) fail("epsilon must be positive");
}

void Optimizer::step(const std::vector<std::pair<std::string, Tensor<float>*>>& params, double lr) {
  ++steps_;
  for (const auto& [name, p] : params) {
    if (!p->has_grad()) continue;
    std::span<float> w = p->data();
    std::span<const float> g = p->grad();
    State& s = state_[name];
    if (s.m.size() != w.size()) s.m.assign(w.size(), 0.0f);
    if (cfg_.optimizer == OptimizerKind::kAdaptiveMoments) {
      if (s.v.size() != w.size()) s.v.assign(w.size(), 0.0f);
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
      for (std::size_t i = 0; i < w.size(); ++i) {
        s.m[i] = static_cast<float>(cfg_.beta1 * s.m[i] + (1 - cfg_.beta1) * g[i]);
        s.v[i] = static_cast<float>(cfg_.beta2 * s.v[i] + (1 - cfg_.beta2) * double(g[i]) * g[i]);
        const double update = (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + cfg_.epsilon) + cfg_.weight_decay * w[i];
        w[i] = static_cast<float>(w[i] - lr * update);
      }
    } else {
      for (std::size_t i = 0; i < w.size(); ++i) {
        s.m[i] = static_cast<float>(cfg_.momentum * s.m[i] + g[i]);
        w[i] = static_cast<float>(w[i] - lr * (s.m[i] + cfg_.weight_decay * w[i]));
      }
    }
  }
}

template <typename T>
Var<T> model_logits(Tape<T>& tape, const Model<T>& model, const Tensor<T>& image) {
  if (model.topdown) return toast_forward(tape, image, model.backbone, *model.topdown).logits;
  Var<T> tokens = patch_embed(tape, image, model.backbone);
  return forward_feedforward(tokens, model.backbone, nullptr, &model.adapters).logits;
}

namespace {

template <typename T>
std::size_t argmax(const Tensor<T>& v) {
  return static_cast<std::size_t>(std::max_element(v.data().begin(), v.data().end()) - v.data().begin());
}

}  // namespace

template <typename T>
Var<T> example_objective(Tape<T>& tape, const Model<T>& model, const LabeledImage& example, double lambda,
                         std::size_t* predicted) {
  const Tensor<T> image = example.pixels.template cast<T>();
  Var<T> logits;
  Var<T> loss;
  if (model.topdown) {
    ToastResult<T> r = toast_forward(tape, image, model.backbone, *model.topdown);
    logits = r.logits;
    loss = cross_entropy(logits, example.label);
    if (lambda > 0)
      loss = add(loss, scale(variational_loss(tape, r.trace, *model.topdown, model.backbone.config), T(lambda)));
  } else {
    logits = model_logits(tape, model, image);
    loss = cross_entropy(logits, example.label);
  }
  if (predicted != nullptr) *predicted = argmax(logits.value());
  return loss;
}

namespace {

std::vector<std::pair<std::string, Tensor<float>*>> trainable_params(Model<float>& model) {
  std::vector<std::pair<std::string, Tensor<float>*>> out;
  visit_params(model, [&out](const std::string& name, const char*, Tensor<float>& t) {
    if (t.requires_grad()) out.emplace_back(name, &t);
  });
  return out;
}

void check_dataset(const Model<float>& model, const Dataset& data) {
  const BackboneConfig& c = model.backbone.config;
  if (data.size() == 0) return;
  if (data.side != c.image_side || data.channels != c.channels)
    throw std::invalid_argument("dataset images are " + std::to_string(data.channels) + "x" +
                                std::to_string(data.side) + "x" + std::to_string(data.side) + ", model expects " +
                                std::to_string(c.channels) + "x" + std::to_string(c.image_side) + "x" +
                                std::to_string(c.image_side));
  for (const auto& img : data.images)
    if (img.label >= model.backbone.head.out_features())
      throw std::invalid_argument("label " + std::to_string(img.label) + " exceeds the head's " +
                                  std::to_string(model.backbone.head.out_features()) + " classes");
}

}  // namespace

std::vector<std::size_t> predict(const Model<float>& model, const Dataset& data) {
  check_dataset(model, data);
  std::vector<std::size_t> out;
  out.reserve(data.size());
  for (const auto& img : data.images) {
    Tape<float> tape;
    out.push_back(argmax(model_logits(tape, model, img.pixels).value()));
  }
  return out;
}

double evaluate_accuracy(const Model<float>& model, const Dataset& data) {
  if (data.size() == 0) return 0;
  const std::vector<std::size_t> pred = predict(model, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.images[i].label;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainReport train(Model<float>& model, const Dataset& train_set, const Dataset* val_set, const TrainConfig& cfg,
                  double lambda, const EpochHook& hook) {
  cfg.validate();
  check_dataset(model, train_set);
  TrainReport report;
  const auto params = trainable_params(model);
  Optimizer opt(cfg);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t n = train_set.size();
  const std::size_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches_per_epoch * cfg.epochs;
  std::size_t step = 0;
  bool first_batch = true;

  for (std::size_t epoch = 0; epoch < cfg.epochs && n > 0; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      for (const auto& p : params) p.second->clear_grad();
      double batch_loss = 0;
      for (std::size_t i = start; i < end; ++i) {
        const LabeledImage& ex = train_set.images[order[i]];
        Tape<float> tape;
        std::size_t pred = 0;
        Var<float> loss = example_objective(tape, model, ex, lambda, &pred);
        const float value = loss.value().item();
        if (!std::isfinite(value))
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", example " +
                             std::to_string(order[i]));
        batch_loss += value;
        correct += pred == ex.label;
        tape.backward(loss);
      }
      const float inv = 1.0f / static_cast<float>(end - start);
      for (const auto& p : params) {
        if (!p.second->has_grad()) continue;
        for (float& g : p.second->grad()) {
          g *= inv;
          if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p.first);
        }
      }
      if (first_batch) {
        report.initial_loss = batch_loss / static_cast<double>(end - start);
        first_batch = false;
      }
      loss_sum += batch_loss;
      double lr = cfg.learning_rate;
      if (cfg.cosine_schedule && total_steps > 1)
        lr *= 0.5 * (1 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
      opt.step(params, lr);
      ++step;
    }
    for (const auto& p : params) p.second->clear_grad();
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.loss = loss_sum / static_cast<double>(n);
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (val_set != nullptr) m.val_accuracy = evaluate_accuracy(model, *val_set);
    report.epochs.push_back(m);
    if (hook) hook(m);
  }
  if (!report.epochs.empty()) {
    report.final_train_accuracy = report.epochs.back().train_accuracy;
    report.final_val_accuracy = report.epochs.back().val_accuracy;
  }
  return report;
}

BackboneParams<float> pretrain_backbone(const Dataset& data, const BackboneConfig& config, const TrainConfig& cfg,
                                        TrainReport* report, const EpochHook& hook) {
  BackboneConfig c = config;
  if (data.n_classes > 0) c.n_classes = data.n_classes;
  Rng rng(cfg.seed);
  Model<float> model;
  model.backbone = init_backbone(c, rng);
  model.method.kind = MethodKind::kFullFinetune;
  TrainableSet::for_method(MethodKind::kFullFinetune).apply(model);
  TrainReport r = train(model, data, nullptr, cfg, 0.0, hook);
  if (report != nullptr) *report = r;
  return model.backbone;
}

TopDownParams<float> pretune(Model<float>& model, const Dataset& data, const TrainConfig& cfg, TrainReport* report,
                             const EpochHook& hook) {
  if (!model.topdown) throw std::invalid_argument("pretune needs a model with a top-down module");
  if (data.n_classes != 0 && data.n_classes != model.backbone.head.out_features())
    throw std::invalid_argument("pretune dataset has " + std::to_string(data.n_classes) +
                                " classes but the backbone head has " +
                                std::to_string(model.backbone.head.out_features()));
  TrainableSet::for_pretune().apply(model);
  TrainReport r = train(model, data, nullptr, cfg, cfg.lambda_variational, hook);
  if (report != nullptr) *report = r;
  TrainableSet::for_method(model.method.kind).apply(model);
  return *model.topdown;
}

TrainReport tune(Model<float>& model, const Dataset& train_set, const Dataset* val_set, const TrainConfig& cfg,
                 const EpochHook& hook) {
  if (train_set.n_classes == 0) throw std::invalid_argument("tune: dataset declares no classes");
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  reset_head(model.backbone, train_set.n_classes, rng);
  TrainableSet::for_method(model.method.kind).apply(model);
  return train(model, train_set, val_set, cfg, 0.0, hook);
}

PassMaps pass_maps(const Model<float>& model, const Tensor<float>& image) {
  if (!model.topdown) throw std::invalid_argument("attention maps need a top-down model");
  const BackboneConfig& c = model.backbone.config;
  if (!c.use_cls_token) throw std::invalid_argument("attention maps read the cls attention row");
  Tape<float> tape;
  ToastResult<float> r = toast_forward(tape, image, model.backbone, *model.topdown);
  const InferenceTrace<float>& t = r.trace;
  const std::size_t lead = first_patch_row(c);
  PassMaps maps;
  if (t.first_pass.first == 0 && t.first_pass.attention.size() == c.layers) {
    maps.first_pass = cls_attention_map(t.first_pass.attention.back(), lead);
  } else {
    Tape<float> plain;
    FeedforwardResult<float> ff = forward_feedforward(patch_embed(plain, image, model.backbone), model.backbone);
    maps.first_pass = cls_attention_map(ff.blocks.attention.back(), lead);
  }
  maps.second_pass = cls_attention_map(t.second_attention.back(), lead);
  maps.similarity = t.similarity;
  return maps;
}

FocusComparison compare_focus(const Model<float>& model, const Dataset& data) {
  check_dataset(model, data);
  FocusComparison out;
  std::size_t improved = 0;
  for (const auto& img : data.images) {
    if (img.relevance_mask.empty()) continue;
    const PassMaps maps = pass_maps(model, img.pixels);
    const double f1 = attention_focus_score(maps.first_pass.data(), img.relevance_mask);
    const double f2 = attention_focus_score(maps.second_pass.data(), img.relevance_mask);
    out.first_pass.push_back(f1);
    out.second_pass.push_back(f2);
    improved += f2 > f1;
  }
  const std::size_t n = out.first_pass.size();
  if (n > 0) {
    out.mean_first = std::accumulate(out.first_pass.begin(), out.first_pass.end(), 0.0) / double(n);
    out.mean_second = std::accumulate(out.second_pass.begin(), out.second_pass.end(), 0.0) / double(n);
    out.improved_fraction = static_cast<double>(improved) / double(n);
  }
  return out;
}

std::vector<ParamSpec> param_specs(const BackboneConfig& c, const MethodSpec& method) {
  c.validate();
  const std::uint64_t d = c.dim, hidden = c.hidden(), L = c.layers;
  std::vector<ParamSpec> out;
  auto add = [&out](std::string name, const char* grp, std::uint64_t size) {
    out.push_back({std::move(name), grp, size});
  };
  auto linear = [&add](const std::string& p, const char* grp, std::uint64_t in, std::uint64_t o, bool bias) {
    add(p + ".weight", grp, in * o);
    if (bias) add(p + ".bias", grp, o);
  };
  auto norm = [&add, d](const std::string& p) {
    add(p + ".gain", group::kBackbone, d);
    add(p + ".bias", group::kBackbone, d);
  };
  linear("backbone.patch_embed", group::kBackbone, c.patch_dim(), d, true);
  add("backbone.pos_embed", group::kBackbone, c.n_patches() * d);
  if (c.use_cls_token) add("backbone.cls_token", group::kBackbone, d);
  for (std::uint64_t l = 0; l < L; ++l) {
    const std::string p = "backbone.blocks." + std::to_string(l);
    norm(p + ".norm1");
    for (const char* n : {".attention.query", ".attention.key", ".attention.value", ".attention.output"})
      linear(p + n, group::kBackbone, d, d, true);
    norm(p + ".norm2");
    linear(p + ".fc1", group::kBackbone, d, hidden, true);
    linear(p + ".fc2", group::kBackbone, hidden, d, true);
  }
  norm("backbone.final_norm");
  linear("head", group::kHead, d, c.n_classes, true);

  auto low_rank = [&add, d](const std::string& p, const char* grp, std::uint64_t r) {
    add(p + ".down", grp, d * r);
    add(p + ".up", grp, r * d);
  };
  if (method.kind == MethodKind::kLoraBackbone) {
    for (std::uint64_t l = 0; l < L; ++l) low_rank("adapters.query." + std::to_string(l), group::kBackboneLowRank, method.lora_rank);
    for (std::uint64_t l = 0; l < L; ++l) low_rank("adapters.value." + std::to_string(l), group::kBackboneLowRank, method.lora_rank);
  }
  if (method.kind == MethodKind::kPromptTokens)
    for (std::uint64_t l = 0; l < L; ++l) add("adapters.prompts." + std::to_string(l), group::kPrompts, method.prompt_count * d);
  if (method.uses_topdown()) {
    const FeedbackVariant v = FeedbackVariant::make(method.feedback, L);
    add("topdown.task_embedding", group::kFeatureSelect, d);
    add("topdown.channel_select", group::kFeatureSelect, d * d);
    for (std::size_t l = v.span_begin(L); l < v.span_end(L); ++l) {
      const std::string idx = std::to_string(l);
      linear("topdown.feedback." + idx, group::kFeedback, d, d, true);
      linear("topdown.inject." + idx, group::kFeedback, d, d, false);
      if (method.kind == MethodKind::kToastLite) {
        low_rank("topdown.feedback." + idx, group::kFeedbackLowRank, method.lite_rank);
        low_rank("topdown.inject." + idx, group::kFeedbackLowRank, method.lite_rank);
      }
    }
  }
  return out;
}

ParamCount param_count(const BackboneConfig& config, const MethodSpec& method) {
  const TrainableSet set = TrainableSet::for_method(method.kind);
  ParamCount pc;
  for (const auto& s : param_specs(config, method)) {
    pc.total += s.size;
    if (set.trainable(s.group)) pc.trainable += s.size;
  }
  pc.fraction = pc.total == 0 ? 0 : static_cast<double>(pc.trainable) / static_cast<double>(pc.total);
  return pc;
}

template <typename T>
ParamCount param_count(const Model<T>& model) {
  const TrainableSet set = TrainableSet::for_method(model.method.kind);
  ParamCount pc;
  visit_params(model, [&](const std::string&, const char* grp, const Tensor<T>& t) {
    pc.total += t.size();
    if (set.trainable(grp)) pc.trainable += t.size();
  });
  pc.fraction = pc.total == 0 ? 0 : static_cast<double>(pc.trainable) / static_cast<double>(pc.total);
  return pc;
}

FlopsReport flops_estimate(const BackboneConfig& c, const MethodSpec& method) {
  c.validate();
  const double d = static_cast<double>(c.dim), hidden = static_cast<double>(c.hidden());
  const double np = static_cast<double>(c.n_patches());
  const std::size_t L = c.layers;
  auto block = [&](double n) {
    return 2 * n * d * d * 4     // query, key, value, output projections
           + 2 * n * n * d * 2   // scores and weighted values
           + 2 * n * d * hidden * 2;
  };
  const double n = static_cast<double>(c.n_tokens());
  const double embed = 2 * np * static_cast<double>(c.patch_dim()) * d;
  const double head = 2 * d * static_cast<double>(c.n_classes);

  FlopsReport r;
  r.single_pass = embed + static_cast<double>(L) * block(n) + head;
  double blocks_run = static_cast<double>(L);
  switch (method.kind) {
    case MethodKind::kLinear:
    case MethodKind::kFullFinetune: r.backbone = r.single_pass; break;
    case MethodKind::kLoraBackbone: {
      const double rank = static_cast<double>(method.lora_rank);
      r.backbone = r.single_pass + static_cast<double>(L) * 2 * (2 * n * d * rank * 2);
      break;
    }
    case MethodKind::kPromptTokens:
      r.backbone = embed + static_cast<double>(L) * block(n + static_cast<double>(method.prompt_count)) + head;
      break;
    case MethodKind::kToast:
    case MethodKind::kToastLite: {
      const FeedbackVariant v = FeedbackVariant::make(method.feedback, L);
      const std::size_t executed = v.first_pass_blocks(L) + v.second_pass_blocks(L);
      blocks_run = static_cast<double>(executed);
      r.backbone = embed + blocks_run * block(n) + head;
      const double span = static_cast<double>(v.span_end(L) - v.span_begin(L));
      r.feedback_overhead = 2 * np * d            // cosine similarity
                            + 2 * np * d * d       // channel selection
                            + span * 2 * (2 * np * d * d);
      if (method.kind == MethodKind::kToastLite)
        r.feedback_overhead += span * 2 * (2 * np * d * static_cast<double>(method.lite_rank) * 2);
      break;
    }
  }
  r.relative = r.backbone / r.single_pass;
  r.block_relative = blocks_run / static_cast<double>(L);
  return r;
}

template <typename T>
std::uint64_t group_hash(const Model<T>& model, const std::vector<std::string>& groups) {
  ByteWriter w;
  visit_params(model, [&](const std::string& name, const char* grp, const Tensor<T>& t) {
    if (std::find(groups.begin(), groups.end(), grp) == groups.end()) return;
    w.short_string(name);
    w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(t.raw()), t.size() * sizeof(T)));
  });
  const std::vector<std::uint8_t> bytes = w.take();
  return fnv1a64(bytes);
}

#define TOAST_INSTANTIATE(T)                                                                                 \
  template Model<float> Model<T>::cast<float>() const;                                                      \
  template Model<double> Model<T>::cast<double>() const;                                                    \
  template Var<T> model_logits<T>(Tape<T>&, const Model<T>&, const Tensor<T>&);                             \
  template Var<T> example_objective<T>(Tape<T>&, const Model<T>&, const LabeledImage&, double, std::size_t*); \
  template ParamCount param_count<T>(const Model<T>&);                                                      \
  template std::uint64_t group_hash<T>(const Model<T>&, const std::vector<std::string>&);

TOAST_INSTANTIATE(float)
TOAST_INSTANTIATE(double)
#undef TOAST_INSTANTIATE

}  // namespace toast
