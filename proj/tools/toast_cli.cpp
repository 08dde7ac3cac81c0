// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

// toast: command-line driver for the pre-train / pre-tune / tune pipeline,
// evaluation, attention-map export and parameter / FLOP reports.
//
// Exit codes: 0 success, 1 unexpected failure, 2 bad configuration or input,
// 3 numeric blow-up during training.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "toast/checkpoint.hpp"
#include "toast/config.hpp"
#include "toast/report.hpp"
#include "toast/training.hpp"

namespace fs = std::filesystem;
using namespace toast;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

// Errors the user can fix by changing the command line or its inputs.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string out;
  std::string ckpt;
  std::string out_dir;
  std::string method;
  std::string variant;
  std::optional<std::uint64_t> seed;
  std::size_t image_index = 0;
  bool json = false;
};

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? default_run_config() : load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  try {
    if (!o.method.empty()) cfg.method.kind = parse_method_kind(o.method);
    if (!o.variant.empty()) cfg.method.feedback = parse_feedback_kind(o.variant);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  cfg.validate();
  return cfg;
}

Checkpoint require_checkpoint(const std::string& path) {
  if (path.empty()) throw UsageError("this command needs --ckpt");
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  try {
    return load_checkpoint(path);
  } catch (const FormatError& e) {
    throw UsageError("cannot read checkpoint " + path + ": " + e.what());
  }
}

Model<float> require_model(const Checkpoint& ckpt, const std::string& path) {
  try {
    return model_from_checkpoint(ckpt);
  } catch (const std::invalid_argument& e) {
    throw UsageError("checkpoint " + path + " does not hold a usable model: " + e.what());
  }
}

void require_out(const Options& o) {
  if (o.out.empty()) throw UsageError("this command needs --out");
}

EpochHook progress(const char* stage) {
  return [stage](const EpochMetrics& m) {
    std::printf("%s epoch %zu loss %.6f train_acc %.4f", stage, m.epoch, m.loss, m.train_accuracy);
    if (m.val_accuracy >= 0) std::printf(" val_acc %.4f", m.val_accuracy);
    std::printf("\n");
    std::fflush(stdout);
  };
}

std::string metrics_path(const std::string& out) { return out + ".metrics.tsv"; }

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int cmd_pretrain(const Options& o) {
  require_out(o);
  const RunConfig cfg = resolve_config(o);
  const Dataset generic = load_source(cfg.generic, cfg.model);
  TrainReport report;
  BackboneParams<float> backbone =
      pretrain_backbone(generic, cfg.model, cfg.stage(cfg.pretrain), &report, progress("pretrain"));
  Model<float> model;
  model.backbone = std::move(backbone);
  model.method.kind = MethodKind::kLinear;
  save_checkpoint(checkpoint_from_model(model, {{"stage", "pretrain"}, {"seed", std::to_string(cfg.seed)}}), o.out);
  write_text_atomic(metrics_path(o.out), metrics_tsv(report));
  std::printf("wrote %s\n", o.out.c_str());
  return 0;
}

int cmd_pretune(const Options& o) {
  const Checkpoint ckpt = require_checkpoint(o.ckpt);
  require_out(o);
  const RunConfig cfg = resolve_config(o);
  const Model<float> base = require_model(ckpt, o.ckpt);
  // Pre-tuning always trains the full-rank module; the lite wrapping is
  // added at tuning time.
  MethodSpec spec = cfg.method;
  spec.kind = MethodKind::kToast;
  Rng rng(cfg.seed);
  std::optional<TopDownParams<float>> start;
  if (base.topdown && base.topdown->variant == FeedbackVariant::make(spec.feedback, cfg.model.layers) &&
      !base.topdown->low_rank())
    start = base.topdown;
  Model<float> model = build_model(base.backbone, spec, rng, start);
  const Dataset generic = load_source(cfg.generic, cfg.model);
  TrainReport report;
  pretune(model, generic, cfg.stage(cfg.pretune), &report, progress("pretune"));
  save_checkpoint(checkpoint_from_model(model, {{"stage", "pretune"}, {"seed", std::to_string(cfg.seed)}}), o.out);
  write_text_atomic(metrics_path(o.out), metrics_tsv(report));
  std::printf("wrote %s\n", o.out.c_str());
  return 0;
}

int cmd_tune(const Options& o) {
  const Checkpoint ckpt = require_checkpoint(o.ckpt);
  require_out(o);
  const RunConfig cfg = resolve_config(o);
  const Model<float> base = require_model(ckpt, o.ckpt);
  Rng rng(cfg.seed);
  std::optional<TopDownParams<float>> start;
  if (cfg.method.uses_topdown() && base.topdown) {
    if (base.topdown->variant != FeedbackVariant::make(cfg.method.feedback, cfg.model.layers))
      throw UsageError("checkpoint top-down module is " + to_string(base.topdown->variant.kind) +
                       ", method asks for " + to_string(cfg.method.feedback));
    start = base.topdown;
  }
  Model<float> model = build_model(base.backbone, cfg.method, rng, start);
  const DownstreamSplit data = load_downstream(cfg);
  TrainReport report = tune(model, data.train, &data.val, cfg.stage(cfg.tune), progress("tune"));
  const double val = evaluate_accuracy(model, data.val);
  save_checkpoint(checkpoint_from_model(model, {{"stage", "tune"},
                                                {"seed", std::to_string(cfg.seed)},
                                                {"val_accuracy", exact(val)},
                                                {"train_accuracy", exact(report.final_train_accuracy)}}),
                  o.out);
  write_text_atomic(metrics_path(o.out), metrics_tsv(report));
  std::printf("val_accuracy %.6f\nwrote %s\n", val, o.out.c_str());
  return 0;
}

int cmd_eval(const Options& o) {
  const Checkpoint ckpt = require_checkpoint(o.ckpt);
  const RunConfig cfg = resolve_config(o);
  const Model<float> model = require_model(ckpt, o.ckpt);
  const DownstreamSplit data = load_downstream(cfg);
  if (model.backbone.head.out_features() != data.val.n_classes)
    throw UsageError("checkpoint head has " + std::to_string(model.backbone.head.out_features()) +
                     " classes, downstream data has " + std::to_string(data.val.n_classes));
  const double acc = evaluate_accuracy(model, data.val);
  std::printf("method %s\nval_accuracy %.6f\n", to_string(model.method.kind).c_str(), acc);
  auto it = ckpt.metadata.find("val_accuracy");
  if (it != ckpt.metadata.end())
    std::printf("recorded_val_accuracy %s %s\n", it->second.c_str(), it->second == exact(acc) ? "match" : "MISMATCH");
  if (model.topdown && model.backbone.config.use_cls_token) {
    const FocusComparison f = compare_focus(model, data.val);
    std::printf("focus pass1 %.6f pass2 %.6f improved_fraction %.4f\n", f.mean_first, f.mean_second,
                f.improved_fraction);
  }
  return 0;
}

int cmd_attn_export(const Options& o) {
  const Checkpoint ckpt = require_checkpoint(o.ckpt);
  if (o.out_dir.empty()) throw UsageError("attn-export needs --out-dir");
  const RunConfig cfg = resolve_config(o);
  const Model<float> model = require_model(ckpt, o.ckpt);
  if (!model.topdown) throw UsageError("attn-export needs a checkpoint with a top-down module");
  if (!model.backbone.config.use_cls_token) throw UsageError("attn-export reads the cls attention row");
  const DownstreamSplit data = load_downstream(cfg);
  if (o.image_index >= data.val.size())
    throw UsageError("image index " + std::to_string(o.image_index) + " out of range (validation set has " +
                     std::to_string(data.val.size()) + " images)");
  const LabeledImage& img = data.val.images[o.image_index];
  const PassMaps maps = pass_maps(model, img.pixels);
  const std::size_t grid = model.backbone.config.grid();
  fs::create_directories(o.out_dir);
  const std::pair<const char*, const Tensor<float>*> outputs[] = {
      {"pass1_attention", &maps.first_pass}, {"similarity", &maps.similarity}, {"pass2_attention", &maps.second_pass}};
  for (const auto& [name, map] : outputs) {
    write_text_atomic(fs::path(o.out_dir) / (std::string(name) + ".csv"), map_csv(*map, grid));
    write_file_atomic(fs::path(o.out_dir) / (std::string(name) + ".pgm"), map_pgm(*map, grid));
  }
  if (img.relevance_mask.empty()) {
    std::printf("image %zu label %u: no relevance mask, focus scores unavailable\n", o.image_index, img.label);
  } else {
    std::printf("image %zu label %u focus pass1 %.6f similarity %.6f pass2 %.6f\n", o.image_index, img.label,
                attention_focus_score(maps.first_pass.data(), img.relevance_mask),
                attention_focus_score(maps.similarity.data(), img.relevance_mask),
                attention_focus_score(maps.second_pass.data(), img.relevance_mask));
  }
  return 0;
}

std::vector<MethodSpec> report_methods(const Options& o, const RunConfig& cfg) {
  if (!o.method.empty()) return {cfg.method};
  std::vector<MethodSpec> out;
  for (MethodKind k : all_methods()) {
    MethodSpec m = cfg.method;
    m.kind = k;
    m.feedback = FeedbackKind::kFull;
    out.push_back(m);
  }
  for (FeedbackKind v : {FeedbackKind::kEarly, FeedbackKind::kLate}) {
    MethodSpec m = cfg.method;
    m.kind = MethodKind::kToast;
    m.feedback = v;
    out.push_back(m);
  }
  return out;
}

int cmd_report(const Options& o, bool flops) {
  const RunConfig cfg = resolve_config(o);
  const auto rows = method_rows(cfg.model, report_methods(o, cfg));
  if (flops)
    std::cout << (o.json ? flops_json(rows) : flops_table(rows));
  else
    std::cout << (o.json ? params_json(rows) : params_table(rows));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Top-down attention steering: pre-train, pre-tune, tune and inspect small vision transformers"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&o](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "JSON run configuration (defaults when omitted)");
    cmd->add_option("--seed", o.seed, "override the configured seed");
    cmd->add_option("--method", o.method,
                    "linear|full_finetune|lora_backbone|prompt_tokens|toast|toast_lite");
    cmd->add_option("--variant", o.variant, "feedback span: full|early|late");
  };
  auto* pretrain = app.add_subcommand("pretrain", "train a backbone on the generic dataset");
  add_common(pretrain);
  pretrain->add_option("--out", o.out, "output checkpoint");
  auto* pretune_cmd = app.add_subcommand("pretune", "train the top-down module on the generic dataset");
  add_common(pretune_cmd);
  pretune_cmd->add_option("--ckpt", o.ckpt, "backbone checkpoint");
  pretune_cmd->add_option("--out", o.out, "output checkpoint");
  auto* tune_cmd = app.add_subcommand("tune", "fit a transfer method to the downstream dataset");
  add_common(tune_cmd);
  tune_cmd->add_option("--ckpt", o.ckpt, "backbone or pre-tuned checkpoint");
  tune_cmd->add_option("--out", o.out, "output checkpoint");
  auto* eval = app.add_subcommand("eval", "validation accuracy of a tuned checkpoint");
  add_common(eval);
  eval->add_option("--ckpt", o.ckpt, "tuned checkpoint");
  auto* attn = app.add_subcommand("attn-export", "write pass-1, similarity and pass-2 maps for one image");
  add_common(attn);
  attn->add_option("--ckpt", o.ckpt, "checkpoint with a top-down module");
  attn->add_option("--image-index", o.image_index, "index into the validation set");
  attn->add_option("--out-dir", o.out_dir, "output directory");
  auto* params = app.add_subcommand("report-params", "trainable and total parameter counts");
  add_common(params);
  params->add_flag("--json", o.json, "machine-readable output");
  auto* flops = app.add_subcommand("report-flops", "inference FLOPs relative to one feedforward pass");
  add_common(flops);
  flops->add_flag("--json", o.json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*pretrain) return cmd_pretrain(o);
    if (*pretune_cmd) return cmd_pretune(o);
    if (*tune_cmd) return cmd_tune(o);
    if (*eval) return cmd_eval(o);
    if (*attn) return cmd_attn_export(o);
    if (*params) return cmd_report(o, false);
    if (*flops) return cmd_report(o, true);
  } catch (const NumericError& e) {
    std::cerr << "error: numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
