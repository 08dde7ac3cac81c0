// Copyright 2026 The TOAST Authors.
// SPDX-License-Identifier: Apache-2.0

// Checkpoint file layout (all integers little-endian):
//
//   "TOAS"  u16 version
//   config: u32 image_side patch_side channels dim layers heads n_classes
//           mlp_ratio, u8 use_cls_token
//   u32 tensor count, then per tensor:
//           u16 name length, name bytes, u8 dtype (1 = f32), u8 rank,
//           u32 extent per axis, f32 payload
//   u32 metadata count, then per entry: u16-prefixed key, u16-prefixed value
//   u64 FNV-1a of every preceding byte
//
// Tensors are written in model visiting order, metadata in key order, so a
// model always encodes to the same bytes.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "toast/training.hpp"

namespace toast {

inline constexpr std::uint16_t kCheckpointVersion = 1;

class CorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  BackboneConfig config;
  std::vector<NamedTensor> tensors;
  std::map<std::string, std::string> metadata;

  const Tensor<float>* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on malformed input, CorruptionError on a checksum
/// mismatch and VersionError when the file is newer than this reader.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Method settings are stored as metadata under "method", "variant",
/// "lora_rank", "prompt_count" and "lite_rank"; `extra` adds more entries.
Checkpoint checkpoint_from_model(const Model<float>& model, const std::map<std::string, std::string>& extra = {});
MethodSpec method_from_metadata(const std::map<std::string, std::string>& metadata);

/// Rebuilds a model from its tensors. Every tensor the method needs must be
/// present with the right shape and no tensor may be left over.
Model<float> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace toast
