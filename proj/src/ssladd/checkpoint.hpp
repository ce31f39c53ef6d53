// Copyright 2026 The ssladd Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint, little-endian:
//   magic "SSLADDCK", u32 version
//   u32 n, n x (str key, str value)          metadata, sorted by key
//   u32 n, n x entry                          parameter table
//     str name, u8 kind (0 param, 1 buffer), u8 group, u8 frozen,
//     u8 dtype (1 = f64), u32 rank, rank x u64 extent, u64 nbytes, data
//   u32 CRC-32 of everything before it
// where str = u32 length + bytes. The resolved run configuration is stored
// in the metadata, so a checkpoint is self-describing.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ssladd/config.hpp"
#include "ssladd/model.hpp"

namespace ssladd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  Model model;
  std::string stage;  // "init", "pretrain" or "finetune"
  std::uint64_t epoch = 0;
  double best_metric = 0.0;
  std::map<std::string, std::string> extra;  // free-form metadata

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> SerializeCheckpoint(const Checkpoint& ckpt);
// `origin` names the source in error messages.
Checkpoint DeserializeCheckpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin);

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

}  // namespace ssladd
