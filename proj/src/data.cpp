// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#include "toast/data.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>
#include <random>

namespace toast {

namespace {

constexpr char kMagic[4] = {'T', 'D', 'D', 'S'};
constexpr std::uint16_t kVersion = 1;

using Texture = std::vector<float>;  // channels × patch_side², centred at 0

Texture random_texture(std::size_t n, double contrast, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  Texture t(n);
  for (float& v : t) v = static_cast<float>(coin(rng) ? contrast : -contrast);
  return t;
}

}  // namespace

void SyntheticCfg::validate() const {
  if (grid == 0 || patch_side == 0 || channels == 0 || n_classes == 0) {
    throw std::invalid_argument("synthetic config: extents must be positive");
  }
  if (signal_patch_count + distractor_count > grid * grid) {
    throw std::invalid_argument("synthetic config: " + std::to_string(signal_patch_count) + " signal + " +
                                std::to_string(distractor_count) + " distractor patches exceed a " +
                                std::to_string(grid) + "x" + std::to_string(grid) + " grid");
  }
  if (distractor_count > 0 && distractor_pool == 0) {
    throw std::invalid_argument("synthetic config: distractors need a non-empty pool");
  }
  if (!(contrast > 0)) throw std::invalid_argument("synthetic config: contrast must be positive");
  // Each texture is a sign pattern over the patch's texels.
  const std::size_t texels = channels * patch_side * patch_side;
  if (texels < 63 && n_classes + distractor_pool > (std::size_t{1} << texels)) {
    throw std::invalid_argument("synthetic config: patches too small for " + std::to_string(n_classes + distractor_pool) +
                                " distinct textures");
  }
}

Dataset gen_cluttered(const SyntheticCfg& cfg) {
  cfg.validate();
  const std::size_t ps = cfg.patch_side, side = cfg.side(), cells = cfg.grid * cfg.grid;
  const std::size_t texels = cfg.channels * ps * ps;

  // Redraw on collision: two classes, or a class and a distractor, sharing a
  // texture would make the labels ambiguous.
  std::vector<Texture> classes, pool;
  auto taken = [&](const Texture& t) {
    return std::find(classes.begin(), classes.end(), t) != classes.end() ||
           std::find(pool.begin(), pool.end(), t) != pool.end();
  };
  auto draw = [&](std::vector<Texture>& into, std::size_t count, std::mt19937_64& rng) {
    while (into.size() < count) {
      Texture t = random_texture(texels, cfg.contrast, rng);
      if (!taken(t)) into.push_back(std::move(t));
    }
  };
  std::mt19937_64 texture_rng(cfg.texture_seed);
  draw(classes, cfg.n_classes, texture_rng);
  std::mt19937_64 distractor_rng(cfg.distractor_seed);
  draw(pool, cfg.distractor_pool, distractor_rng);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, cfg.noise_level);
  std::uniform_int_distribution<std::size_t> pick_pool(0, cfg.distractor_pool == 0 ? 0 : cfg.distractor_pool - 1);

  Dataset data;
  data.channels = cfg.channels;
  data.side = side;
  data.grid = cfg.grid;
  data.n_classes = cfg.n_classes;
  std::vector<std::size_t> order(cells);
  for (std::size_t i = 0; i < cfg.n_images; ++i) {
    LabeledImage img;
    img.label = static_cast<std::uint32_t>(i % cfg.n_classes);
    img.pixels = Tensor<float>(Shape{cfg.channels, side, side}, 0.5f);
    img.relevance_mask.assign(cells, 0);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    auto paint = [&](std::size_t cell, const Texture& tex) {
      const std::size_t gy = cell / cfg.grid, gx = cell % cfg.grid;
      std::size_t k = 0;
      for (std::size_t c = 0; c < cfg.channels; ++c)
        for (std::size_t y = 0; y < ps; ++y)
          for (std::size_t x = 0; x < ps; ++x) img.pixels[(c * side + gy * ps + y) * side + gx * ps + x] += tex[k++];
    };
    for (std::size_t s = 0; s < cfg.signal_patch_count; ++s) {
      paint(order[s], classes[img.label]);
      img.relevance_mask[order[s]] = 1;
    }
    for (std::size_t s = 0; s < cfg.distractor_count; ++s) {
      paint(order[cfg.signal_patch_count + s], pool[pick_pool(rng)]);
    }
    if (cfg.noise_level > 0) {
      for (float& v : img.pixels.data()) v += static_cast<float>(noise(rng));
    }
    for (float& v : img.pixels.data()) v = std::clamp(v, 0.0f, 1.0f);
    data.images.push_back(std::move(img));
  }
  return data;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, std::size_t count) {
  count = std::min(count, data.size());
  Dataset a = data, b = data;
  a.images.assign(data.images.begin(), data.images.begin() + static_cast<std::ptrdiff_t>(count));
  b.images.assign(data.images.begin() + static_cast<std::ptrdiff_t>(count), data.images.end());
  return {std::move(a), std::move(b)};
}

std::vector<std::uint8_t> encode_dataset(const Dataset& data) {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
  w.u16(kVersion);
  w.u32(static_cast<std::uint32_t>(data.size()));
  w.u32(static_cast<std::uint32_t>(data.channels));
  w.u32(static_cast<std::uint32_t>(data.side));
  w.u32(static_cast<std::uint32_t>(data.grid));
  w.u32(static_cast<std::uint32_t>(data.n_classes));
  const std::size_t cells = data.grid * data.grid;
  const std::size_t mask_bytes = (cells + 7) / 8;
  const std::size_t pixels = data.channels * data.side * data.side;
  for (const auto& img : data.images) {
    if (img.pixels.size() != pixels) throw std::invalid_argument("dataset image has the wrong pixel count");
    w.u32(img.label);
    const bool has_mask = !img.relevance_mask.empty();
    if (has_mask && img.relevance_mask.size() != cells) {
      throw std::invalid_argument("relevance mask does not match the patch grid");
    }
    w.u8(has_mask ? 1 : 0);
    std::vector<std::uint8_t> bits(mask_bytes, 0);
    if (has_mask) {
      for (std::size_t c = 0; c < cells; ++c)
        if (img.relevance_mask[c]) bits[c / 8] |= static_cast<std::uint8_t>(1u << (c % 8));
    }
    w.raw(bits);
    for (float v : img.pixels.data()) w.f32(v);
  }
  return w.take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.raw(4);
  if (!std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t*>(kMagic))) {
    throw FormatError("bad dataset magic", 0);
  }
  const std::size_t version_at = r.offset();
  const std::uint16_t version = r.u16();
  if (version != kVersion) throw FormatError("unsupported dataset version " + std::to_string(version), version_at);
  Dataset data;
  const std::uint32_t n = r.u32();
  data.channels = r.u32();
  data.side = r.u32();
  data.grid = r.u32();
  data.n_classes = r.u32();
  const std::size_t cells = data.grid * data.grid;
  const std::size_t mask_bytes = (cells + 7) / 8;
  const std::size_t pixels = data.channels * data.side * data.side;
  if (n > 0 && (pixels == 0 || cells == 0)) r.fail("dataset header has zero image extents");
  // Reject impossible counts before allocating.
  if (n > 0 && r.remaining() / (4 + 1 + mask_bytes + 4 * pixels) < n) r.fail("truncated dataset payload");
  data.images.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    LabeledImage img;
    img.label = r.u32();
    if (data.n_classes > 0 && img.label >= data.n_classes) r.fail("label out of range");
    const std::uint8_t has_mask = r.u8();
    if (has_mask > 1) r.fail("bad mask flag");
    auto bits = r.raw(mask_bytes);
    if (has_mask) {
      img.relevance_mask.resize(cells);
      for (std::size_t c = 0; c < cells; ++c) img.relevance_mask[c] = (bits[c / 8] >> (c % 8)) & 1u;
    }
    img.pixels = Tensor<float>(Shape{data.channels, data.side, data.side});
    for (float& v : img.pixels.data()) v = r.f32();
    data.images.push_back(std::move(img));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after dataset payload");
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  write_file_atomic(path, encode_dataset(data));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }

double attention_focus_score(std::span<const float> map, std::span<const std::uint8_t> mask) {
  if (map.size() != mask.size()) throw std::invalid_argument("focus score: map and mask sizes differ");
  double total = 0, inside = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (map[i] < 0) throw std::invalid_argument("focus score: map must be nonnegative");
    total += map[i];
    if (mask[i]) inside += map[i];
  }
  if (total <= 0) {
    std::cerr << "warning: focus score of a map with zero total mass is reported as 0\n";
    return 0.0;
  }
  return inside / total;
}

Tensor<float> cls_attention_map(const Tensor<float>& probs, std::size_t first_patch) {
  if (probs.rank() != 3 || probs.dim(1) != probs.dim(2) || first_patch >= probs.dim(2)) {
    throw ShapeError("cls_attention_map: expected [H x N x N] probabilities");
  }
  const std::size_t heads = probs.dim(0), n = probs.dim(1), patches = n - first_patch;
  Tensor<float> map(Shape{patches});
  for (std::size_t h = 0; h < heads; ++h) {
    const float* row = probs.raw() + h * n * n;  // query row 0 is the cls token
    for (std::size_t j = 0; j < patches; ++j) map[j] += row[first_patch + j];
  }
  for (float& v : map.data()) v /= static_cast<float>(heads);
  return map;
}

}  // namespace toast
