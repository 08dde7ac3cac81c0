// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "toast/checkpoint.hpp"
#include "toast/config.hpp"
#include "toast/report.hpp"

using namespace toast;
using namespace toast::testing;
namespace fs = std::filesystem;

namespace {

Model<float> tiny_model(MethodKind kind, std::uint64_t seed = 1) {
  Rng rng(seed);
  MethodSpec m{kind};
  m.lora_rank = 2;
  m.prompt_count = 2;
  m.lite_rank = 2;
  auto model = build_model(init_backbone(tiny_config(), rng), m, rng);
  if (model.topdown) {
    for (auto& l : model.topdown->layers) l.inject.weight = normal_tensor(l.inject.weight.shape(), 0.3, rng);
  }
  return model;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int status = -1;
  std::string out;
};

Run run_cli(const std::string& args) {
  const std::string cmd = std::string(TOAST_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) r.out += buf;
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::vector<double> parse_csv(const std::string& text, std::size_t* rows_out) {
  std::vector<double> values;
  std::size_t rows = 0;
  std::stringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++rows;
    std::stringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) values.push_back(std::stod(cell));
  }
  if (rows_out) *rows_out = rows;
  return values;
}

// Pixel payload of a binary graymap written by map_pgm.
std::vector<std::uint8_t> pgm_pixels(const std::vector<std::uint8_t>& bytes, std::size_t grid) {
  const std::string header = "P5\n" + std::to_string(grid) + " " + std::to_string(grid) + "\n255\n";
  REQUIRE(bytes.size() == header.size() + grid * grid);
  CHECK(std::equal(header.begin(), header.end(), bytes.begin()));
  return {bytes.begin() + static_cast<std::ptrdiff_t>(header.size()), bytes.end()};
}

void check_monotone(const std::vector<double>& csv, const std::vector<std::uint8_t>& pgm) {
  REQUIRE(csv.size() == pgm.size());
  for (std::size_t i = 0; i < csv.size(); ++i)
    for (std::size_t j = 0; j < csv.size(); ++j)
      if (csv[i] < csv[j]) CHECK(pgm[i] <= pgm[j]);
}

const char* kTinyRun = R"({
  "seed": 5,
  "model": {"image_side": 8, "patch_side": 2, "channels": 1, "dim": 8, "layers": 2, "heads": 2,
            "n_classes": 4, "mlp_ratio": 2},
  "pretrain": {"epochs": 2, "batch_size": 8, "learning_rate": 0.003},
  "pretune": {"epochs": 1, "batch_size": 8, "learning_rate": 0.003},
  "tune": {"epochs": 2, "batch_size": 8, "learning_rate": 0.003},
  "method": {"kind": "toast", "variant": "full"},
  "data": {
    "val_images": 8,
    "generic": {"grid": 4, "patch_side": 2, "n_classes": 4, "n_images": 24, "signal_patch_count": 2,
                "distractor_count": 4, "distractor_pool": 3, "seed": 1, "texture_seed": 3, "distractor_seed": 3},
    "downstream": {"grid": 4, "patch_side": 2, "n_classes": 4, "n_images": 32, "signal_patch_count": 2,
                   "distractor_count": 4, "distractor_pool": 3, "seed": 2, "texture_seed": 4, "distractor_seed": 4}
  }
})";

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("toast_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("checkpoint round trips bytes and weights") {
  for (MethodKind kind : all_methods()) {
    auto model = tiny_model(kind);
    auto bytes = encode_checkpoint(checkpoint_from_model(model, {{"note", "x"}}));
    Checkpoint back = decode_checkpoint(bytes);
    CHECK(encode_checkpoint(back) == bytes);
    CHECK(back.metadata.at("note") == "x");
    CHECK(back.metadata.at("method") == to_string(kind));
    Model<float> restored = model_from_checkpoint(back);
    CHECK(restored.method == model.method);
    CHECK(group_hash(restored, {group::kBackbone, group::kHead, group::kFeedback, group::kFeatureSelect,
                                group::kFeedbackLowRank, group::kBackboneLowRank, group::kPrompts}) ==
          group_hash(model, {group::kBackbone, group::kHead, group::kFeedback, group::kFeatureSelect,
                             group::kFeedbackLowRank, group::kBackboneLowRank, group::kPrompts}));
    Tensor<float> img = random_image<float>(tiny_config(), 3);
    Tape<float> a, b;
    CHECK(model_logits(a, model, img).value().same_bytes(model_logits(b, restored, img).value()));
  }
}

TEST_CASE("save, load, save gives identical files") {
  fs::path dir = scratch("ckpt");
  auto ckpt = checkpoint_from_model(tiny_model(MethodKind::kToast));
  save_checkpoint(ckpt, dir / "a.ckpt");
  save_checkpoint(load_checkpoint(dir / "a.ckpt"), dir / "b.ckpt");
  CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));
  fs::remove_all(dir);
}

TEST_CASE("checkpoint corruption and version checks") {
  auto bytes = encode_checkpoint(checkpoint_from_model(tiny_model(MethodKind::kToast)));
  SUBCASE("every flipped payload byte is caught") {
    for (std::size_t i = 4; i < bytes.size(); i += 97) {
      auto copy = bytes;
      copy[i] ^= 0x20;
      CHECK_THROWS_AS(decode_checkpoint(copy), CorruptionError);
    }
  }
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bytes), FormatError);
  }
  SUBCASE("version ahead of the reader") {
    bytes[4] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
    ByteWriter w;
    w.raw(std::span<const std::uint8_t>(bytes).first(bytes.size() - 8));
    w.u64(fnv1a64(w.bytes()));
    CHECK_THROWS_AS(decode_checkpoint(w.bytes()), VersionError);
  }
  SUBCASE("truncation") {
    bytes.resize(bytes.size() / 2);
    CHECK_THROWS_AS(decode_checkpoint(bytes), FormatError);
  }
}

TEST_CASE("a checkpoint of another method still exposes its tensors") {
  Checkpoint lora = decode_checkpoint(encode_checkpoint(checkpoint_from_model(tiny_model(MethodKind::kLoraBackbone))));
  CHECK(lora.find("backbone.blocks.1.fc2.weight") != nullptr);
  CHECK(lora.find("adapters.query.0.down") != nullptr);
  CHECK(lora.find("topdown.task_embedding") == nullptr);
  // A toast model built on it takes the backbone straight from the file.
  Model<float> base = model_from_checkpoint(lora);
  Rng rng(4);
  auto toast = build_model(base.backbone, MethodSpec{MethodKind::kToast}, rng);
  CHECK(toast.backbone.blocks[1].fc2.weight.same_bytes(*lora.find("backbone.blocks.1.fc2.weight")));
}

TEST_CASE("model restoration rejects inconsistent tensor sets") {
  Checkpoint ckpt = checkpoint_from_model(tiny_model(MethodKind::kToast));
  SUBCASE("missing tensor") {
    ckpt.tensors.erase(ckpt.tensors.begin() + 3);
    CHECK_THROWS_AS(model_from_checkpoint(ckpt), std::invalid_argument);
  }
  SUBCASE("leftover tensor") {
    ckpt.tensors.push_back({"stray", Tensor<float>(Shape{2})});
    CHECK_THROWS_AS(model_from_checkpoint(ckpt), std::invalid_argument);
  }
  SUBCASE("wrong shape") {
    ckpt.tensors[0].value = Tensor<float>(Shape{1, 1});
    CHECK_THROWS_AS(model_from_checkpoint(ckpt), std::invalid_argument);
  }
  SUBCASE("unknown method") {
    ckpt.metadata["method"] = "adapter";
    CHECK_THROWS_AS(model_from_checkpoint(ckpt), std::invalid_argument);
  }
}

TEST_CASE("run configuration parsing") {
  CHECK(run_config_json(parse_run_config("{}")) == run_config_json(default_run_config()));
  RunConfig cfg = parse_run_config(kTinyRun);
  CHECK(cfg.seed == 5);
  CHECK(cfg.model.dim == 8);
  CHECK(cfg.tune.epochs == 2);
  CHECK(cfg.downstream.synthetic.n_images == 32);
  CHECK(cfg.val_images == 8);
  CHECK(cfg.stage(cfg.tune).seed == 5);
  CHECK(run_config_json(parse_run_config(run_config_json(cfg))) == run_config_json(cfg));

  CHECK_THROWS_AS(parse_run_config(R"({"model": {"foo": 1}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"extra": {}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"data": {"generic": {"grid": 4, "colour": 1}}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"model": {"dim": "wide"}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"model": {"dim": -4}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"method": {"kind": "adapter"}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{\"seed\": 1,"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"model": {"heads": 3}})"), ConfigError);
  try {
    parse_run_config(R"({"model": {"foo": 1}})");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("model.foo") != std::string::npos);
  }
}

TEST_CASE("shipped configuration files") {
  const fs::path dir = fs::path(TOAST_SOURCE_DIR) / "configs";
  CHECK(run_config_json(load_run_config(dir / "default.json")) == run_config_json(default_run_config()));
  RunConfig vit = load_run_config(dir / "vit_b.json");
  CHECK(vit.model.dim == 768);
  CHECK(vit.model.n_tokens() == 197);
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), ConfigError);
}

TEST_CASE("downstream split holds out the tail") {
  RunConfig cfg = parse_run_config(kTinyRun);
  auto split = load_downstream(cfg);
  CHECK(split.train.size() == 24);
  CHECK(split.val.size() == 8);
  Dataset all = gen_cluttered(cfg.downstream.synthetic);
  CHECK(split.val.images[0] == all.images[24]);
  cfg.val_images = 40;
  CHECK_THROWS_AS(load_downstream(cfg), ConfigError);
}

TEST_CASE("metrics table") {
  TrainReport r;
  r.epochs.push_back({1, 0.5, 0.25, -1});
  r.epochs.push_back({2, 0.125, 0.75, 0.5});
  CHECK(metrics_tsv(r) == "epoch\tloss\ttrain_accuracy\tval_accuracy\n1\t0.5\t0.25\tnan\n2\t0.125\t0.75\t0.5\n");
}

TEST_CASE("map exports") {
  Tensor<float> map(Shape{9}, std::vector<float>{0.1f, 0.5f, 0.2f, 0.0f, 0.9f, 0.3f, 0.3f, 0.05f, 0.7f});
  std::size_t rows = 0;
  auto csv = parse_csv(map_csv(map, 3), &rows);
  CHECK(rows == 3);
  REQUIRE(csv.size() == 9);
  for (std::size_t i = 0; i < 9; ++i) CHECK(static_cast<float>(csv[i]) == map[i]);
  auto px = pgm_pixels(map_pgm(map, 3), 3);
  CHECK(px[3] == 0);
  CHECK(px[4] == 255);
  check_monotone(csv, px);
  auto flat = pgm_pixels(map_pgm(Tensor<float>(Shape{4}, 0.25f), 2), 2);
  for (auto v : flat) CHECK(v == 0);
  CHECK_THROWS_AS(map_csv(map, 2), ShapeError);
}

TEST_CASE("parameter and flop reports") {
  std::vector<MethodSpec> methods;
  for (MethodKind k : all_methods()) methods.push_back(MethodSpec{k});
  auto rows = method_rows(tiny_config(), methods);
  auto params = nlohmann::json::parse(params_json(rows));
  REQUIRE(params.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(params[i]["method"] == to_string(all_methods()[i]));
    CHECK(params[i]["trainable"].get<std::uint64_t>() == rows[i].params.trainable);
    CHECK(params[i]["total"].get<std::uint64_t>() == rows[i].params.total);
  }
  auto flops = nlohmann::json::parse(flops_json(rows));
  CHECK(flops[4]["block_relative"].get<double>() == 2.0);
  CHECK(flops[0]["relative"].get<double>() == 1.0);
  const std::string table = params_table(rows);
  for (MethodKind k : all_methods()) CHECK(table.find(to_string(k)) != std::string::npos);
  CHECK(flops_table(rows).find("toast/full") != std::string::npos);
}

TEST_CASE("command line pipeline end to end") {
  fs::path dir = scratch("pipeline");
  const std::string cfg = (dir / "run.json").string();
  std::ofstream(cfg) << kTinyRun;
  const std::string base = (dir / "base.ckpt").string(), pre = (dir / "pre.ckpt").string(),
                    tuned = (dir / "tuned.ckpt").string();

  Run r = run_cli("pretrain --config " + cfg + " --out " + base);
  REQUIRE_MESSAGE(r.status == 0, r.out);
  CHECK(read_text(base + ".metrics.tsv").rfind("epoch\tloss\ttrain_accuracy\tval_accuracy\n", 0) == 0);

  SUBCASE("same seed, same checkpoint bytes") {
    const std::string again = (dir / "again.ckpt").string();
    REQUIRE(run_cli("pretrain --config " + cfg + " --out " + again).status == 0);
    CHECK(read_bytes(base) == read_bytes(again));
    REQUIRE(run_cli("pretrain --config " + cfg + " --seed 6 --out " + again).status == 0);
    CHECK(read_bytes(base) != read_bytes(again));
  }

  SUBCASE("pretune, tune, eval, export") {
    r = run_cli("pretune --config " + cfg + " --ckpt " + base + " --out " + pre);
    REQUIRE_MESSAGE(r.status == 0, r.out);
    r = run_cli("tune --config " + cfg + " --ckpt " + pre + " --out " + tuned);
    REQUIRE_MESSAGE(r.status == 0, r.out);

    // The frozen backbone leaves tuning byte-identical.
    Checkpoint in = load_checkpoint(base), out = load_checkpoint(tuned);
    std::size_t backbone_tensors = 0;
    for (const auto& t : in.tensors) {
      if (t.name.rfind("backbone.", 0) != 0) continue;
      ++backbone_tensors;
      const Tensor<float>* match = out.find(t.name);
      REQUIRE(match != nullptr);
      CHECK(match->same_bytes(t.value));
    }
    CHECK(backbone_tensors > 0);
    CHECK(out.metadata.at("method") == "toast");

    r = run_cli("eval --config " + cfg + " --ckpt " + tuned);
    REQUIRE_MESSAGE(r.status == 0, r.out);
    CHECK(r.out.find("recorded_val_accuracy " + out.metadata.at("val_accuracy") + " match") != std::string::npos);

    const fs::path maps = dir / "maps";
    r = run_cli("attn-export --config " + cfg + " --ckpt " + tuned + " --image-index 3 --out-dir " + maps.string());
    REQUIRE_MESSAGE(r.status == 0, r.out);
    CHECK(r.out.find("focus pass1") != std::string::npos);
    for (const char* name : {"pass1_attention", "similarity", "pass2_attention"}) {
      std::size_t rows = 0;
      auto csv = parse_csv(read_text(maps / (std::string(name) + ".csv")), &rows);
      CHECK(rows == 4);
      CHECK(csv.size() == 16);
      if (std::string(name) == "similarity") {
        for (double v : csv) {
          CHECK(v >= 0.0);
          CHECK(v <= 1.0);
        }
      }
      check_monotone(csv, pgm_pixels(read_bytes(maps / (std::string(name) + ".pgm")), 4));
    }
    CHECK(run_cli("attn-export --config " + cfg + " --ckpt " + tuned + " --image-index 8 --out-dir " + maps.string())
              .status == 2);
  }

  SUBCASE("usage errors exit with 2") {
    CHECK(run_cli("pretune --config " + cfg + " --out " + pre).status == 2);
    CHECK(run_cli("pretune --config " + cfg + " --ckpt " + (dir / "missing.ckpt").string() + " --out " + pre).status ==
          2);
    CHECK(run_cli("tune --config " + (dir / "missing.json").string() + " --ckpt " + base + " --out " + tuned).status ==
          2);
    std::ofstream(dir / "bad.json") << R"({"model": {"depth": 3}})";
    r = run_cli("pretrain --config " + (dir / "bad.json").string() + " --out " + base);
    CHECK(r.status == 2);
    CHECK(r.out.find("model.depth") != std::string::npos);
    CHECK(run_cli("tune --config " + cfg + " --ckpt " + base + " --method adapter --out " + tuned).status == 2);
    CHECK(run_cli("frobnicate").status == 2);
    auto bytes = read_bytes(base);
    bytes[bytes.size() / 2] ^= 1;
    std::ofstream(dir / "corrupt.ckpt", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                               static_cast<std::streamsize>(bytes.size()));
    CHECK(run_cli("eval --config " + cfg + " --ckpt " + (dir / "corrupt.ckpt").string()).status == 2);
  }

  SUBCASE("numeric blow-up exits with 3") {
    auto blow = nlohmann::json::parse(kTinyRun);
    blow["pretrain"]["learning_rate"] = 1e30;
    std::ofstream(dir / "blow.json") << blow.dump();
    r = run_cli("pretrain --config " + (dir / "blow.json").string() + " --out " + (dir / "blow.ckpt").string());
    CHECK_MESSAGE(r.status == 3, r.out);
  }

  SUBCASE("reports") {
    r = run_cli("report-params --config " + cfg + " --json");
    REQUIRE(r.status == 0);
    CHECK(nlohmann::json::parse(r.out).size() == 8);
    r = run_cli("report-flops --config " + cfg + " --method toast --variant early");
    REQUIRE(r.status == 0);
    CHECK(r.out.find("1.50x") != std::string::npos);
  }
  fs::remove_all(dir);
}
