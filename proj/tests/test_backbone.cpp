// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "helpers.hpp"
#include "toast/gradcheck.hpp"

using namespace toast;
using namespace toast::testing;

namespace {

BackboneParams<double> tiny_backbone(std::uint64_t seed, BackboneConfig c = tiny_config()) {
  Rng rng(seed);
  return init_backbone(c, rng).cast<double>();
}

}  // namespace

TEST_CASE("config validation") {
  BackboneConfig c = tiny_config();
  CHECK(c.n_tokens() == 5);
  c.use_cls_token = false;
  CHECK(c.n_tokens() == 4);
  c.patch_side = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("patch embedding shapes") {
  BackboneConfig c = tiny_config();
  c.dim = 3;
  c.heads = 1;
  for (bool cls : {false, true}) {
    c.use_cls_token = cls;
    auto p = tiny_backbone(1, c);
    Tape<double> tape;
    auto tokens = patch_embed(tape, random_image(c, 2), p);
    CHECK(tokens.shape() == Shape{cls ? 5u : 4u, 3u});
  }
  auto p = tiny_backbone(1, c);
  Tape<double> tape;
  CHECK_THROWS_AS(patch_embed(tape, Tensor<double>(Shape{1, 6, 6}), p), ShapeError);
}

TEST_CASE("zero image with zero positional embedding gives zero patch tokens") {
  BackboneConfig c = tiny_config();
  auto p = tiny_backbone(3, c);
  p.pos_embed = Tensor<double>(p.pos_embed.shape());
  p.patch_embed.bias = Tensor<double>(p.patch_embed.bias.shape());
  Tape<double> tape;
  auto tokens = patch_embed(tape, Tensor<double>(Shape{1, 4, 4}), p).value();
  for (std::size_t r = 1; r < 5; ++r)
    for (std::size_t col = 0; col < c.dim; ++col) CHECK(tokens.at(r, col) == 0.0);
}

TEST_CASE("swapping two patches swaps their token rows before positions are added") {
  BackboneConfig c = tiny_config();
  c.use_cls_token = false;
  auto p = tiny_backbone(4, c);
  p.pos_embed = Tensor<double>(p.pos_embed.shape());
  Tensor<double> img = random_image(c, 5);
  Tensor<double> swapped = img;
  // Patch 0 is the top-left 2x2 block, patch 3 the bottom-right one.
  for (std::size_t y = 0; y < 2; ++y)
    for (std::size_t x = 0; x < 2; ++x) std::swap(swapped[y * 4 + x], swapped[(y + 2) * 4 + x + 2]);
  Tape<double> tape;
  auto a = patch_embed(tape, img, p).value(), b = patch_embed(tape, swapped, p).value();
  for (std::size_t col = 0; col < c.dim; ++col) {
    CHECK(a.at(0, col) == b.at(3, col));
    CHECK(a.at(3, col) == b.at(0, col));
    CHECK(a.at(1, col) == b.at(1, col));
  }
}

TEST_CASE("attention with a zero top-down input equals no top-down input") {
  auto p = tiny_backbone(6);
  Tape<double> tape;
  auto x = tape.constant(random_tensor({5, 8}, 7));
  auto plain = self_attention(x, p.blocks[0].attention, 2);
  auto zero = self_attention(x, p.blocks[0].attention, 2, tape.constant(Tensor<double>(Shape{5, 8})));
  CHECK(plain.out.value().same_bytes(zero.out.value()));
  CHECK(plain.probs.same_bytes(zero.probs));
}

TEST_CASE("top-down input leaves query and key untouched") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = tiny_backbone(seed);
    Tape<double> tape;
    auto x = tape.constant(random_tensor({5, 8}, seed + 20));
    auto plain = self_attention(x, p.blocks[1].attention, 2);
    auto steered = self_attention(x, p.blocks[1].attention, 2, tape.constant(random_tensor({5, 8}, seed + 40, -3, 3)));
    CHECK(plain.probs.same_bytes(steered.probs));
    CHECK_FALSE(plain.out.value().same_bytes(steered.out.value()));
  }
}

TEST_CASE("top-down input must match the token shape") {
  auto p = tiny_backbone(1);
  Tape<double> tape;
  auto x = tape.constant(random_tensor({5, 8}, 1));
  CHECK_THROWS_AS(self_attention(x, p.blocks[0].attention, 2, tape.constant(Tensor<double>(Shape{4, 8}))), ShapeError);
}

TEST_CASE("single token attends to itself") {
  auto p = tiny_backbone(2);
  Tape<double> tape;
  auto att = self_attention(tape.constant(random_tensor({1, 8}, 3)), p.blocks[0].attention, 2);
  for (double v : att.probs.data()) CHECK(v == 1.0);
}

TEST_CASE("feedforward trace and top-down list contract") {
  auto p = tiny_backbone(8);
  Tape<double> tape;
  auto tokens = patch_embed(tape, random_image(tiny_config(), 9), p);
  auto plain = forward_feedforward(tokens, p);
  CHECK(plain.logits.shape() == Shape{3});
  CHECK(plain.blocks.inputs.size() == 2);
  CHECK(plain.blocks.attention.size() == 2);
  for (const auto& a : plain.blocks.attention) CHECK(a.shape() == Shape{2, 5, 5});

  TopDownSignals<double> zeros(2);
  for (auto& s : zeros) s = tape.constant(Tensor<double>(Shape{5, 8}));
  auto with_zeros = forward_feedforward(tokens, p, &zeros);
  CHECK(plain.logits.value().same_bytes(with_zeros.logits.value()));

  TopDownSignals<double> wrong(1);
  CHECK_THROWS_AS(forward_feedforward(tokens, p, &wrong), std::invalid_argument);
}

TEST_CASE("zero layers reduce to head of normalised pooled token") {
  BackboneConfig c = tiny_config();
  c.layers = 0;
  auto p = tiny_backbone(10, c);
  Tape<double> tape;
  auto tokens = patch_embed(tape, random_image(c, 11), p);
  auto r = forward_feedforward(tokens, p);
  auto expect = apply_linear(apply_layernorm(rows(tokens, 0, 1), p.final_norm), p.head);
  CHECK(r.logits.value().data().size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.logits.value()[i] == expect.value()[i]);
}

TEST_CASE("zeroed block weights make every block the identity") {
  auto p = tiny_backbone(12);
  for (auto& b : p.blocks) {
    for (auto* l : {&b.attention.query, &b.attention.key, &b.attention.value, &b.attention.output, &b.fc1, &b.fc2}) {
      l->weight = Tensor<double>(l->weight.shape());
      l->bias = Tensor<double>(l->bias.shape());
    }
  }
  Tape<double> tape;
  auto tokens = patch_embed(tape, random_image(tiny_config(), 13), p);
  auto r = forward_feedforward(tokens, p);
  CHECK(r.blocks.tokens.value().same_bytes(tokens.value()));
}

TEST_CASE("attention maps are row-stochastic and logits have class width") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = tiny_backbone(seed);
    Tape<double> tape;
    auto r = forward_feedforward(patch_embed(tape, random_image(tiny_config(), seed + 1), p), p);
    CHECK(r.logits.shape() == Shape{3});
    for (const auto& a : r.blocks.attention) {
      for (std::size_t row = 0; row < 10; ++row) {
        double total = 0;
        for (std::size_t j = 0; j < 5; ++j) total += a[row * 5 + j];
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("mean pooling without a cls token") {
  BackboneConfig c = tiny_config();
  c.use_cls_token = false;
  auto p = tiny_backbone(14, c);
  Tape<double> tape;
  auto r = forward_feedforward(patch_embed(tape, random_image(c, 15), p), p);
  auto expect = apply_linear(mean_rows(r.normed), p.head);
  for (std::size_t i = 0; i < 3; ++i) CHECK(r.logits.value()[i] == doctest::Approx(expect.value()[i]));
}

TEST_CASE("full feedforward gradient matches finite differences") {
  auto p = tiny_backbone(16);
  Tensor<double> img = random_image(tiny_config(), 17);
  std::vector<Tensor<double>*> params = {&p.patch_embed.weight, &p.pos_embed, &p.cls_token,
                                         &p.blocks[0].attention.query.weight, &p.blocks[1].attention.value.bias,
                                         &p.blocks[1].norm1.gain, &p.blocks[0].fc1.weight, &p.final_norm.bias,
                                         &p.head.weight};
  auto r = finite_diff_check(
      [&](Tape<double>& t) { return cross_entropy(forward_feedforward(patch_embed(t, img, p), p).logits, 1); }, params);
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("adapters: zero-initialised low-rank deltas and prompt insertion") {
  BackboneConfig c = tiny_config();
  Rng rng(18);
  auto p = init_backbone(c, rng);
  BackboneAdapters<float> a;
  for (std::size_t l = 0; l < c.layers; ++l) {
    a.query_delta.push_back(make_low_rank(c.dim, c.dim, 2, rng));
    a.value_delta.push_back(make_low_rank(c.dim, c.dim, 2, rng));
  }
  Tensor<float> img = random_image<float>(c, 19);
  Tape<float> tape;
  auto tokens = patch_embed(tape, img, p);
  auto plain = forward_feedforward(tokens, p);
  auto lora = forward_feedforward(tokens, p, nullptr, &a);
  CHECK(plain.logits.value().same_bytes(lora.logits.value()));

  BackboneAdapters<float> prompts;
  for (std::size_t l = 0; l < c.layers; ++l) prompts.prompts.push_back(normal_tensor({3, c.dim}, 0.1, rng));
  auto vpt = forward_feedforward(tokens, p, nullptr, &prompts);
  CHECK(vpt.blocks.inputs[0].shape() == Shape{8, 8});
  CHECK(vpt.blocks.attention[1].shape() == Shape{2, 8, 8});
  // Layer 1 replaces the prompts inserted at layer 0.
  for (std::size_t col = 0; col < c.dim; ++col) CHECK(vpt.blocks.inputs[1].value().at(1, col) == prompts.prompts[1].at(0, col));
  CHECK(first_patch_row(c, prompts.prompt_count()) == 4);
}
