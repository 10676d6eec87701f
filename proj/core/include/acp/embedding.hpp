// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "acp/common.hpp"

namespace acp::data {

enum class Role : std::uint8_t { kTrain = 0, kQuery = 1, kGallery = 2 };

const char* role_name(Role role);

/// One image: identity/camera labels plus its pooled per-block features.
struct EmbeddingRecord {
  std::uint64_t item_id = 0;
  std::uint32_t identity = 0;
  std::uint32_t camera = 0;
  std::vector<std::vector<float>> blocks;

  friend bool operator==(const EmbeddingRecord&,
                         const EmbeddingRecord&) = default;
};

struct EmbeddingSet {
  Role role = Role::kTrain;
  std::vector<std::uint32_t> block_dims;
  std::vector<EmbeddingRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  std::size_t block_count() const noexcept { return block_dims.size(); }
  std::size_t total_dim() const noexcept;

  /// Throws ConfigError on duplicate ids, missing/odd-sized blocks or
  /// non-finite values.
  void validate() const;

  std::vector<std::uint32_t> identities() const;
  std::vector<std::uint32_t> cameras() const;

  /// [size x dim_b] matrix of block b.
  Matrix block_matrix(std::size_t b) const;

  /// Baseline representation: every block L2-normalized, concatenated, and
  /// scaled by 1/sqrt(B) so rows have unit norm.
  Matrix concat_normalized() const;

  friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;
};

/// Little-endian binary layout:
///   "ACPE" | u32 version=1 | u32 records | u32 blocks | u32 dims[blocks] |
///   u8 role | records x (u64 item_id, u32 identity, u32 camera,
///   f32 values[sum(dims)])
void save_set(const EmbeddingSet& set, const std::filesystem::path& path);

/// Throws FormatError (with byte offset) on bad magic, version, dimensions,
/// role, truncation, trailing bytes, non-finite values or duplicate ids.
EmbeddingSet load_set(const std::filesystem::path& path);

/// Parses an in-memory image of the file format.
EmbeddingSet parse_set(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_set(const EmbeddingSet& set);

/// JSON-lines sidecar: one {"item_id", "identity", "camera"} object per line.
void write_manifest(const EmbeddingSet& set, const std::filesystem::path& path);

struct ManifestEntry {
  std::uint64_t item_id = 0;
  std::uint32_t identity = 0;
  std::uint32_t camera = 0;
};
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace acp::data
