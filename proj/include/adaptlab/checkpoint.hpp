// Copyright 2026 The adaptlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "adaptlab/adam.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace adaptlab {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Versioned binary tensor archive shared by model, adapter and retrieval
/// index files.
///
/// Layout (all integers little-endian):
///   magic "ADLBCKPT" (8 bytes), u32 format version,
///   u32 n_meta, then n_meta x (u32 len, key bytes, u32 len, value bytes),
///   u32 n_tensors, then per tensor: u32 len, name bytes, u32 rank,
///   rank x u64 dims, numel x f64 (IEEE-754 little-endian).
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  KeyValues meta;
  ad::NamedTensors tensors;

  const std::string& meta_value(const std::string& key) const;
  bool has_meta(const std::string& key) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the raw bytes of every tensor value (names included), in order.
std::uint64_t hash_tensors(const ad::NamedTensors& tensors);

}  // namespace adaptlab
