// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

#include "toast/checkpoint.hpp"

#include <set>
#include <stdexcept>

namespace toast {

namespace {

constexpr char kMagic[4] = {'T', 'O', 'A', 'S'};
constexpr std::uint8_t kDtypeF32 = 1;

std::uint32_t narrow32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) throw std::length_error(std::string(what) + " does not fit in 32 bits");
  return static_cast<std::uint32_t>(v);
}

std::size_t parse_size(const std::map<std::string, std::string>& meta, const std::string& key, std::size_t fallback) {
  auto it = meta.find(key);
  if (it == meta.end()) return fallback;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("checkpoint metadata '" + key + "' is not an unsigned integer: " + it->second);
  }
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
  w.u16(kCheckpointVersion);
  const BackboneConfig& c = ckpt.config;
  for (std::size_t v : {c.image_side, c.patch_side, c.channels, c.dim, c.layers, c.heads, c.n_classes, c.mlp_ratio})
    w.u32(narrow32(v, "config field"));
  w.u8(c.use_cls_token ? 1 : 0);

  std::set<std::string> seen;
  w.u32(narrow32(ckpt.tensors.size(), "tensor count"));
  for (const auto& t : ckpt.tensors) {
    if (!seen.insert(t.name).second) throw std::invalid_argument("duplicate tensor name '" + t.name + "'");
    if (t.value.rank() > 255) throw std::length_error("tensor rank too large");
    w.short_string(t.name);
    w.u8(kDtypeF32);
    w.u8(static_cast<std::uint8_t>(t.value.rank()));
    for (std::size_t e : t.value.shape()) w.u32(narrow32(e, "tensor extent"));
    for (float v : t.value.data()) w.f32(v);
  }
  w.u32(narrow32(ckpt.metadata.size(), "metadata count"));
  for (const auto& [k, v] : ckpt.metadata) {
    w.short_string(k);
    w.short_string(v);
  }
  w.u64(fnv1a64(w.bytes()));
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader header(bytes);
  auto magic = header.raw(4);
  if (!std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t*>(kMagic)))
    throw FormatError("not a checkpoint: bad magic", 0);
  if (bytes.size() < 4 + 2 + 8) throw FormatError("truncated checkpoint", bytes.size());
  const std::size_t body = bytes.size() - 8;
  ByteReader tail(bytes.subspan(body));
  if (tail.u64() != fnv1a64(bytes.first(body))) throw CorruptionError("checkpoint checksum mismatch", body);
  const std::uint16_t version = header.u16();
  if (version > kCheckpointVersion)
    throw VersionError("checkpoint version " + std::to_string(version) + " is newer than supported version " +
                           std::to_string(kCheckpointVersion),
                       4);
  if (version == 0) throw FormatError("invalid checkpoint version 0", 4);

  ByteReader r(bytes.first(body));
  r.raw(6);
  Checkpoint ckpt;
  BackboneConfig& c = ckpt.config;
  for (std::size_t* f : {&c.image_side, &c.patch_side, &c.channels, &c.dim, &c.layers, &c.heads, &c.n_classes,
                         &c.mlp_ratio})
    *f = r.u32();
  const std::uint8_t cls = r.u8();
  if (cls > 1) r.fail("bad use_cls_token flag");
  c.use_cls_token = cls == 1;

  const std::uint32_t count = r.u32();
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.short_string();
    if (!seen.insert(t.name).second) r.fail("duplicate tensor name '" + t.name + "'");
    if (r.u8() != kDtypeF32) r.fail("unsupported dtype for tensor '" + t.name + "'");
    const std::uint8_t rank = r.u8();
    if (rank == 0) r.fail("tensor '" + t.name + "' has rank 0");
    Shape shape;
    std::size_t n = 1;
    for (std::uint8_t a = 0; a < rank; ++a) {
      const std::uint32_t e = r.u32();
      if (e == 0) r.fail("tensor '" + t.name + "' has a zero extent");
      shape.push_back(e);
      n *= e;
      if (n > r.remaining()) r.fail("tensor '" + t.name + "' payload exceeds file size");
    }
    if (r.remaining() / 4 < n) r.fail("truncated payload for tensor '" + t.name + "'");
    std::vector<float> data(n);
    for (float& v : data) v = r.f32();
    t.value = Tensor<float>(std::move(shape), std::move(data));
    ckpt.tensors.push_back(std::move(t));
  }
  const std::uint32_t meta = r.u32();
  for (std::uint32_t i = 0; i < meta; ++i) {
    std::string k = r.short_string();
    std::string v = r.short_string();
    if (!ckpt.metadata.emplace(std::move(k), std::move(v)).second) r.fail("duplicate metadata key");
  }
  if (r.remaining() != 0) r.fail("trailing bytes before checksum");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

Checkpoint checkpoint_from_model(const Model<float>& model, const std::map<std::string, std::string>& extra) {
  Checkpoint ckpt;
  ckpt.config = model.backbone.config;
  visit_params(model, [&ckpt](const std::string& name, const char*, const Tensor<float>& t) {
    Tensor<float> copy = t.reshaped(t.shape());
    ckpt.tensors.push_back({name, std::move(copy)});
  });
  ckpt.metadata = extra;
  const MethodSpec& m = model.method;
  ckpt.metadata["method"] = to_string(m.kind);
  ckpt.metadata["variant"] = to_string(m.feedback);
  ckpt.metadata["lora_rank"] = std::to_string(m.lora_rank);
  ckpt.metadata["prompt_count"] = std::to_string(m.prompt_count);
  ckpt.metadata["lite_rank"] = std::to_string(m.lite_rank);
  return ckpt;
}

MethodSpec method_from_metadata(const std::map<std::string, std::string>& metadata) {
  MethodSpec m;
  auto it = metadata.find("method");
  if (it == metadata.end()) throw std::invalid_argument("checkpoint metadata has no method entry");
  m.kind = parse_method_kind(it->second);
  if (auto v = metadata.find("variant"); v != metadata.end()) m.feedback = parse_feedback_kind(v->second);
  m.lora_rank = parse_size(metadata, "lora_rank", m.lora_rank);
  m.prompt_count = parse_size(metadata, "prompt_count", m.prompt_count);
  m.lite_rank = parse_size(metadata, "lite_rank", m.lite_rank);
  return m;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  ckpt.config.validate();
  const MethodSpec method = method_from_metadata(ckpt.metadata);
  // Allocate a model with the right layout, then overwrite every tensor.
  Rng rng(0);
  Model<float> model = build_model(init_backbone(ckpt.config, rng), method, rng);
  std::size_t used = 0;
  visit_params(model, [&](const std::string& name, const char*, Tensor<float>& t) {
    const Tensor<float>* src = ckpt.find(name);
    if (src == nullptr) throw std::invalid_argument("checkpoint is missing tensor '" + name + "'");
    if (src->shape() != t.shape())
      throw std::invalid_argument("tensor '" + name + "' has shape " + shape_string(src->shape()) + ", expected " +
                                  shape_string(t.shape()));
    std::copy(src->data().begin(), src->data().end(), t.data().begin());
    ++used;
  });
  if (used != ckpt.tensors.size())
    throw std::invalid_argument("checkpoint holds " + std::to_string(ckpt.tensors.size() - used) +
                                " tensors the " + to_string(method.kind) + " method does not use");
  return model;
}

}  // namespace toast
