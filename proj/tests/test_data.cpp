// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <set>

#include "doctest.h"
#include "helpers.hpp"

using namespace toast;
using namespace toast::testing;

namespace {

std::vector<float> patch_pixels(const LabeledImage& img, std::size_t cell, std::size_t grid, std::size_t ps) {
  const std::size_t side = grid * ps, gy = cell / grid, gx = cell % grid;
  std::vector<float> out;
  for (std::size_t y = 0; y < ps; ++y)
    for (std::size_t x = 0; x < ps; ++x) out.push_back(img.pixels[(gy * ps + y) * side + gx * ps + x]);
  return out;
}

SyntheticCfg clean(std::size_t n, std::uint64_t seed) {
  SyntheticCfg s = small_data(n, seed);
  s.distractor_count = 0;
  s.noise_level = 0;
  return s;
}

}  // namespace

TEST_CASE("generator invariants") {
  SyntheticCfg s = small_data(40, 1);
  Dataset d = gen_cluttered(s);
  CHECK(d.size() == 40);
  CHECK(d.side == 8);
  CHECK(d.grid == 4);
  std::vector<std::size_t> per_class(4, 0);
  for (const auto& img : d.images) {
    CHECK(img.label < 4);
    ++per_class[img.label];
    REQUIRE(img.relevance_mask.size() == 16);
    std::size_t on = 0;
    for (auto m : img.relevance_mask) on += m;
    CHECK(on == s.signal_patch_count);
    CHECK(img.pixels.shape() == Shape{1, 8, 8});
    for (float v : img.pixels.data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  for (auto c : per_class) CHECK(c == 10);
}

TEST_CASE("generation is deterministic in the seed") {
  CHECK(gen_cluttered(small_data(12, 2)) == gen_cluttered(small_data(12, 2)));
  CHECK_FALSE(gen_cluttered(small_data(12, 2)) == gen_cluttered(small_data(12, 3)));
  CHECK(encode_dataset(gen_cluttered(small_data(12, 2))) == encode_dataset(gen_cluttered(small_data(12, 2))));
}

TEST_CASE("over-full grids and impossible texture counts are rejected") {
  SyntheticCfg s = small_data(4, 1);
  s.signal_patch_count = 10;
  s.distractor_count = 7;
  CHECK_THROWS_AS(gen_cluttered(s), std::invalid_argument);
  s = small_data(4, 1);
  s.distractor_pool = 0;
  CHECK_THROWS_AS(gen_cluttered(s), std::invalid_argument);
  // A 2x2 single-channel patch has 16 sign patterns.
  s = small_data(4, 1, 14);
  s.distractor_pool = 2;
  CHECK_NOTHROW(gen_cluttered(s));
  s.distractor_pool = 3;
  CHECK_THROWS_AS(gen_cluttered(s), std::invalid_argument);
  s = small_data(4, 1);
  s.contrast = 0;
  CHECK_THROWS_AS(gen_cluttered(s), std::invalid_argument);
}

TEST_CASE("signal patches carry one texture per class, shared across placement seeds") {
  Dataset a = gen_cluttered(clean(8, 4)), b = gen_cluttered(clean(8, 5));
  std::vector<std::vector<float>> texture(4);
  for (const Dataset* d : {&a, &b}) {
    for (const auto& img : d->images) {
      for (std::size_t cell = 0; cell < 16; ++cell) {
        auto px = patch_pixels(img, cell, 4, 2);
        if (!img.relevance_mask[cell]) {
          for (float v : px) CHECK(v == 0.5f);  // bare background
          continue;
        }
        if (texture[img.label].empty()) texture[img.label] = px;
        CHECK(px == texture[img.label]);
      }
    }
  }
  std::set<std::vector<float>> distinct(texture.begin(), texture.end());
  CHECK(distinct.size() == 4);
}

TEST_CASE("distractors never reuse a class texture") {
  // 14 classes plus 2 distractors use up every 2x2 sign pattern.
  SyntheticCfg s = small_data(28, 6, 14);
  s.distractor_pool = 2;
  s.noise_level = 0;
  Dataset d = gen_cluttered(s);
  std::set<std::vector<float>> signal, other;
  for (const auto& img : d.images) {
    for (std::size_t cell = 0; cell < 16; ++cell) {
      auto px = patch_pixels(img, cell, 4, 2);
      if (img.relevance_mask[cell]) {
        signal.insert(px);
      } else if (px != std::vector<float>(4, 0.5f)) {
        other.insert(px);
      }
    }
  }
  CHECK(signal.size() == 14);
  CHECK(other.size() == 2);
  for (const auto& t : other) CHECK(signal.count(t) == 0);
}

TEST_CASE("without clutter a linear probe on pixels fits the training set") {
  Dataset d = gen_cluttered(clean(40, 7));
  const std::size_t pixels = 64;
  Tensor<float> x(Shape{d.size(), pixels});
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t p = 0; p < pixels; ++p) x.at(i, p) = d.images[i].pixels[p];
  Rng rng(8);
  Linear<float> probe{normal_tensor({pixels, 4}, 0.01, rng), Tensor<float>(Shape{4})};
  probe.weight.set_requires_grad(true);
  probe.bias.set_requires_grad(true);
  TrainConfig cfg;
  Optimizer opt(cfg);
  std::size_t correct = 0;
  for (int step = 0; step < 400 && correct < d.size(); ++step) {
    probe.weight.clear_grad();
    probe.bias.clear_grad();
    Tape<float> tape;
    Var<float> logits = apply_linear(tape.constant(x), probe);
    Var<float> loss = cross_entropy(rows(logits, 0, 1), d.images[0].label);
    for (std::size_t i = 1; i < d.size(); ++i) loss = add(loss, cross_entropy(rows(logits, i, i + 1), d.images[i].label));
    tape.backward(loss);
    opt.step({{"w", &probe.weight}, {"b", &probe.bias}}, 0.05);
    correct = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < 4; ++c)
        if (logits.value().at(i, c) > logits.value().at(i, best)) best = c;
      correct += best == d.images[i].label;
    }
  }
  CHECK(correct == d.size());
}

TEST_CASE("split keeps order") {
  Dataset d = gen_cluttered(small_data(10, 9));
  auto [a, b] = split_dataset(d, 7);
  CHECK(a.size() == 7);
  CHECK(b.size() == 3);
  CHECK(b.images[0] == d.images[7]);
  CHECK(b.n_classes == d.n_classes);
  auto [all, none] = split_dataset(d, 99);
  CHECK(all.size() == 10);
  CHECK(none.size() == 0);
}

TEST_CASE("dataset round trip") {
  Dataset d = gen_cluttered(small_data(3, 10));
  d.images[1].relevance_mask.clear();  // images without annotation survive too
  auto bytes = encode_dataset(d);
  CHECK(bytes.size() == 26 + 3 * (4 + 1 + 2 + 4 * 64));
  Dataset back = decode_dataset(bytes);
  CHECK(back == d);
  CHECK(encode_dataset(back) == bytes);

  auto path = std::filesystem::temp_directory_path() / "toast_test_dataset.bin";
  save_dataset(d, path);
  CHECK(load_dataset(path) == d);
  std::filesystem::remove(path);
}

TEST_CASE("empty dataset round trips") {
  Dataset empty;
  empty.side = 8;
  empty.grid = 4;
  empty.n_classes = 4;
  Dataset back = decode_dataset(encode_dataset(empty));
  CHECK(back.size() == 0);
  CHECK(back == empty);
}

TEST_CASE("malformed dataset bytes") {
  auto bytes = encode_dataset(gen_cluttered(small_data(3, 11)));
  SUBCASE("bad magic") {
    bytes[1] ^= 0xFF;
    CHECK_THROWS_AS(decode_dataset(bytes), FormatError);
  }
  SUBCASE("unsupported version") {
    bytes[4] = 9;
    try {
      decode_dataset(bytes);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 4);
    }
  }
  SUBCASE("truncated payload") {
    bytes.resize(bytes.size() - 5);
    CHECK_THROWS_AS(decode_dataset(bytes), FormatError);
  }
  SUBCASE("truncated header reports the offset") {
    bytes.resize(12);
    try {
      decode_dataset(bytes);
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 10);
    }
  }
  SUBCASE("label out of range") {
    bytes[26] = 200;
    CHECK_THROWS_AS(decode_dataset(bytes), FormatError);
  }
  SUBCASE("trailing bytes") {
    bytes.push_back(0);
    CHECK_THROWS_AS(decode_dataset(bytes), FormatError);
  }
  CHECK_THROWS_AS(load_dataset("/nonexistent/toast.bin"), std::runtime_error);
}

TEST_CASE("focus score examples") {
  const std::vector<std::uint8_t> mask = {1, 0, 0, 1};
  const std::vector<float> uniform(4, 0.25f);
  CHECK(attention_focus_score(uniform, mask) == doctest::Approx(0.5));
  const std::vector<float> on_target = {0.7f, 0.0f, 0.0f, 0.3f};
  CHECK(attention_focus_score(on_target, mask) == doctest::Approx(1.0));
  const std::vector<float> unnormalised = {2.0f, 1.0f, 1.0f, 0.0f};
  CHECK(attention_focus_score(unnormalised, mask) == doctest::Approx(0.5));
  const std::vector<float> zero(4, 0.0f);
  CHECK(attention_focus_score(zero, mask) == 0.0);
  const std::vector<float> negative = {0.5f, -0.1f, 0.3f, 0.3f};
  CHECK_THROWS_AS(attention_focus_score(negative, mask), std::invalid_argument);
  CHECK_THROWS_AS(attention_focus_score(std::vector<float>(3, 0.1f), mask), std::invalid_argument);
}

TEST_CASE("cls attention map averages heads over patch keys") {
  // Two heads, three tokens: cls plus two patches.
  Tensor<float> probs(Shape{2, 3, 3});
  const float h0[3] = {0.2f, 0.5f, 0.3f}, h1[3] = {0.4f, 0.1f, 0.5f};
  for (std::size_t j = 0; j < 3; ++j) {
    probs[j] = h0[j];
    probs[9 + j] = h1[j];
  }
  probs[3] = 1.0f;  // rows other than cls are ignored
  auto map = cls_attention_map(probs, 1);
  REQUIRE(map.size() == 2);
  CHECK(map[0] == doctest::Approx(0.3));
  CHECK(map[1] == doctest::Approx(0.4));
  CHECK_THROWS_AS(cls_attention_map(Tensor<float>(Shape{3, 3}), 1), ShapeError);
  CHECK_THROWS_AS(cls_attention_map(probs, 3), ShapeError);
}
