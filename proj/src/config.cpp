// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#include "toast/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace toast {

using nlohmann::json;

namespace {

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::kSgdMomentum ? "sgd_momentum" : "adaptive_moments";
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd_momentum") return OptimizerKind::kSgdMomentum;
  if (s == "adaptive_moments") return OptimizerKind::kAdaptiveMoments;
  throw ConfigError("unknown optimizer '" + s + "' (expected adaptive_moments or sgd_momentum)");
}

// Reads the keys of one JSON object, remembering which were consumed so the
// rest can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<V, std::size_t> || std::is_same_v<V, std::uint64_t>) {
        if (!it->is_number_unsigned()) throw ConfigError(key_path(key) + " must be a non-negative integer");
      } else if constexpr (std::is_same_v<V, double>) {
        if (!it->is_number()) throw ConfigError(key_path(key) + " must be a number");
      } else if constexpr (std::is_same_v<V, bool>) {
        if (!it->is_boolean()) throw ConfigError(key_path(key) + " must be true or false");
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!it->is_string()) throw ConfigError(key_path(key) + " must be a string");
      }
      out = it->get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(key_path(key) + ": " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Section child(const char* key) {
    seen_.insert(key);
    return Section(j_.at(key), key_path(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + key_path(it.key().c_str()) + "'");
  }

 private:
  std::string where() const { return path_.empty() ? "configuration" : "'" + path_ + "'"; }
  std::string key_path(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_model(Section s, BackboneConfig& m) {
  s.read("image_side", m.image_side);
  s.read("patch_side", m.patch_side);
  s.read("channels", m.channels);
  s.read("dim", m.dim);
  s.read("layers", m.layers);
  s.read("heads", m.heads);
  s.read("n_classes", m.n_classes);
  s.read("mlp_ratio", m.mlp_ratio);
  s.read("use_cls_token", m.use_cls_token);
  s.finish();
}

void read_train(Section s, TrainConfig& t) {
  s.read("learning_rate", t.learning_rate);
  s.read("epochs", t.epochs);
  s.read("batch_size", t.batch_size);
  s.read("weight_decay", t.weight_decay);
  s.read("lambda_variational", t.lambda_variational);
  std::string opt = to_string(t.optimizer);
  s.read("optimizer", opt);
  t.optimizer = parse_optimizer(opt);
  s.read("momentum", t.momentum);
  s.read("beta1", t.beta1);
  s.read("beta2", t.beta2);
  s.read("epsilon", t.epsilon);
  s.read("cosine_schedule", t.cosine_schedule);
  s.finish();
}

void read_method(Section s, MethodSpec& m) {
  std::string kind = to_string(m.kind), variant = to_string(m.feedback);
  s.read("kind", kind);
  s.read("variant", variant);
  s.read("lora_rank", m.lora_rank);
  s.read("prompt_count", m.prompt_count);
  s.read("lite_rank", m.lite_rank);
  s.finish();
  try {
    m.kind = parse_method_kind(kind);
    m.feedback = parse_feedback_kind(variant);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

void read_source(Section s, DataSource& d) {
  if (s.has("file")) {
    std::string path;
    s.read("file", path);
    s.finish();
    if (path.empty()) throw ConfigError("data source file path is empty");
    d.file = path;
    return;
  }
  SyntheticCfg& c = d.synthetic;
  s.read("grid", c.grid);
  s.read("patch_side", c.patch_side);
  s.read("channels", c.channels);
  s.read("n_classes", c.n_classes);
  s.read("n_images", c.n_images);
  s.read("signal_patch_count", c.signal_patch_count);
  s.read("distractor_count", c.distractor_count);
  s.read("distractor_pool", c.distractor_pool);
  s.read("contrast", c.contrast);
  s.read("noise_level", c.noise_level);
  s.read("seed", c.seed);
  s.read("texture_seed", c.texture_seed);
  s.read("distractor_seed", c.distractor_seed);
  s.finish();
}

json train_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"epochs", t.epochs},
          {"batch_size", t.batch_size},       {"weight_decay", t.weight_decay},
          {"lambda_variational", t.lambda_variational}, {"optimizer", to_string(t.optimizer)},
          {"momentum", t.momentum},           {"beta1", t.beta1},
          {"beta2", t.beta2},                 {"epsilon", t.epsilon},
          {"cosine_schedule", t.cosine_schedule}};
}

json source_json(const DataSource& d) {
  if (d.from_file()) return {{"file", d.file.string()}};
  const SyntheticCfg& c = d.synthetic;
  return {{"grid", c.grid},
          {"patch_side", c.patch_side},
          {"channels", c.channels},
          {"n_classes", c.n_classes},
          {"n_images", c.n_images},
          {"signal_patch_count", c.signal_patch_count},
          {"distractor_count", c.distractor_count},
          {"distractor_pool", c.distractor_pool},
          {"contrast", c.contrast},
          {"noise_level", c.noise_level},
          {"seed", c.seed},
          {"texture_seed", c.texture_seed},
          {"distractor_seed", c.distractor_seed}};
}

}  // namespace

TrainConfig RunConfig::stage(const TrainConfig& base) const {
  TrainConfig t = base;
  t.seed = seed;
  return t;
}

void RunConfig::validate() const {
  try {
    model.validate();
    pretrain.validate();
    pretune.validate();
    tune.validate();
    if (method.uses_topdown()) FeedbackVariant::make(method.feedback, model.layers).validate(model.layers);
    for (const DataSource* d : {&generic, &downstream}) {
      if (d->from_file()) continue;
      d->synthetic.validate();
      if (d->synthetic.side() != model.image_side || d->synthetic.channels != model.channels ||
          d->synthetic.patch_side != model.patch_side)
        throw ConfigError("synthetic data geometry (side " + std::to_string(d->synthetic.side()) + ", patch " +
                          std::to_string(d->synthetic.patch_side) + ", channels " +
                          std::to_string(d->synthetic.channels) + ") does not match the model");
    }
    if (!downstream.from_file() && downstream.synthetic.n_classes != model.n_classes)
      throw ConfigError("model.n_classes must equal the downstream synthetic n_classes");
    if (!downstream.from_file() && val_images >= downstream.synthetic.n_images)
      throw ConfigError("data.val_images leaves no downstream training images");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

RunConfig default_run_config() {
  RunConfig c;
  c.pretrain.epochs = 10;
  c.pretrain.learning_rate = 1e-3;
  c.pretune.epochs = 3;
  c.pretune.learning_rate = 3e-3;
  c.tune.epochs = 5;
  c.tune.learning_rate = 3e-3;

  SyntheticCfg& g = c.generic.synthetic;
  g.n_images = 2000;
  g.seed = 11;
  g.texture_seed = 1001;
  g.distractor_seed = 1001;
  SyntheticCfg& d = c.downstream.synthetic;
  d.n_images = 2500;
  d.seed = 22;
  d.texture_seed = 2002;
  d.distractor_seed = 2002;
  return c;
}

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  RunConfig c = default_run_config();
  Section root(j, "");
  root.read("seed", c.seed);
  if (root.has("model")) read_model(root.child("model"), c.model);
  if (root.has("pretrain")) read_train(root.child("pretrain"), c.pretrain);
  if (root.has("pretune")) read_train(root.child("pretune"), c.pretune);
  if (root.has("tune")) read_train(root.child("tune"), c.tune);
  if (root.has("method")) read_method(root.child("method"), c.method);
  if (root.has("data")) {
    Section data = root.child("data");
    data.read("val_images", c.val_images);
    if (data.has("generic")) read_source(data.child("generic"), c.generic);
    if (data.has("downstream")) read_source(data.child("downstream"), c.downstream);
    data.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& c) {
  const BackboneConfig& m = c.model;
  json j = {{"seed", c.seed},
            {"model",
             {{"image_side", m.image_side},
              {"patch_side", m.patch_side},
              {"channels", m.channels},
              {"dim", m.dim},
              {"layers", m.layers},
              {"heads", m.heads},
              {"n_classes", m.n_classes},
              {"mlp_ratio", m.mlp_ratio},
              {"use_cls_token", m.use_cls_token}}},
            {"pretrain", train_json(c.pretrain)},
            {"pretune", train_json(c.pretune)},
            {"tune", train_json(c.tune)},
            {"method",
             {{"kind", to_string(c.method.kind)},
              {"variant", to_string(c.method.feedback)},
              {"lora_rank", c.method.lora_rank},
              {"prompt_count", c.method.prompt_count},
              {"lite_rank", c.method.lite_rank}}},
            {"data",
             {{"val_images", c.val_images},
              {"generic", source_json(c.generic)},
              {"downstream", source_json(c.downstream)}}}};
  return j.dump(2) + "\n";
}

Dataset load_source(const DataSource& source, const BackboneConfig& model) {
  Dataset d = source.from_file() ? load_dataset(source.file) : gen_cluttered(source.synthetic);
  if (d.size() > 0 && (d.side != model.image_side || d.channels != model.channels))
    throw ConfigError("dataset images are " + std::to_string(d.channels) + "x" + std::to_string(d.side) + "x" +
                      std::to_string(d.side) + " but the model expects " + std::to_string(model.channels) + "x" +
                      std::to_string(model.image_side) + "x" + std::to_string(model.image_side));
  return d;
}

DownstreamSplit load_downstream(const RunConfig& cfg) {
  Dataset all = load_source(cfg.downstream, cfg.model);
  if (cfg.val_images >= all.size())
    throw ConfigError("data.val_images (" + std::to_string(cfg.val_images) + ") leaves no training images out of " +
                      std::to_string(all.size()));
  auto [train, val] = split_dataset(all, all.size() - cfg.val_images);
  return {std::move(train), std::move(val)};
}

}  // namespace toast
