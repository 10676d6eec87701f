// Copyright 2026 The ACP Rerank Authors
// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_set>

#include <json.hpp>

#include "acp/embedding.hpp"
#include "binary_io.hpp"

namespace acp::data {
namespace {

using detail::Reader;
using detail::Writer;

static_assert(std::endian::native == std::endian::little,
              "embedding files are little-endian; big-endian hosts need "
              "byte swapping");

constexpr char kMagic[4] = {'A', 'C', 'P', 'E'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxBlocks = 64;
constexpr std::uint32_t kMaxBlockDim = 1u << 20;

}  // namespace

const char* role_name(Role role) {
  switch (role) {
    case Role::kTrain:
      return "train";
    case Role::kQuery:
      return "query";
    case Role::kGallery:
      return "gallery";
  }
  return "unknown";
}

std::size_t EmbeddingSet::total_dim() const noexcept {
  std::size_t d = 0;
  for (auto b : block_dims) d += b;
  return d;
}

void EmbeddingSet::validate() const {
  if (block_dims.empty()) throw ConfigError("embedding set has no blocks");
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(records.size());
  for (const auto& r : records) {
    if (!seen.insert(r.item_id).second) {
      throw ConfigError("duplicate item_id " + std::to_string(r.item_id));
    }
    if (r.blocks.size() != block_dims.size()) {
      throw ConfigError("record " + std::to_string(r.item_id) + " has " +
                        std::to_string(r.blocks.size()) + " blocks, expected " +
                        std::to_string(block_dims.size()));
    }
    for (std::size_t b = 0; b < block_dims.size(); ++b) {
      if (r.blocks[b].size() != block_dims[b]) {
        throw ConfigError("record " + std::to_string(r.item_id) + " block " +
                          std::to_string(b) + " has dimension " +
                          std::to_string(r.blocks[b].size()));
      }
      for (float v : r.blocks[b]) {
        if (!std::isfinite(v)) {
          throw ConfigError("record " + std::to_string(r.item_id) +
                            " holds a non-finite value");
        }
      }
    }
  }
}

std::vector<std::uint32_t> EmbeddingSet::identities() const {
  std::vector<std::uint32_t> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.identity);
  return out;
}

std::vector<std::uint32_t> EmbeddingSet::cameras() const {
  std::vector<std::uint32_t> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.camera);
  return out;
}

Matrix EmbeddingSet::block_matrix(std::size_t b) const {
  const std::size_t d = block_dims.at(b);
  Matrix m(records.size(), d);
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::copy(records[i].blocks[b].begin(), records[i].blocks[b].end(),
              m.row_span(i).begin());
  }
  return m;
}

Matrix EmbeddingSet::concat_normalized() const {
  const std::size_t total = total_dim();
  const double block_scale = 1.0 / std::sqrt(static_cast<double>(block_count()));
  Matrix m(records.size(), total);
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto row = m.row_span(i);
    std::size_t off = 0;
    for (const auto& blk : records[i].blocks) {
      double ss = 0;
      for (float v : blk) ss += static_cast<double>(v) * v;
      const double nrm = std::sqrt(ss);
      const double f = nrm < 1e-12 ? 0.0 : block_scale / nrm;
      for (std::size_t c = 0; c < blk.size(); ++c)
        row[off + c] = static_cast<float>(blk[c] * f);
      off += blk.size();
    }
  }
  return m;
}

std::vector<std::uint8_t> serialize_set(const EmbeddingSet& set) {
  set.validate();
  Writer w;
  w.put_bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.records.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(set.block_dims.size()));
  for (auto d : set.block_dims) w.put<std::uint32_t>(d);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(set.role));
  for (const auto& r : set.records) {
    w.put<std::uint64_t>(r.item_id);
    w.put<std::uint32_t>(r.identity);
    w.put<std::uint32_t>(r.camera);
    for (const auto& blk : r.blocks)
      w.put_bytes(blk.data(), blk.size() * sizeof(float));
  }
  return w.take();
}

EmbeddingSet parse_set(const std::vector<std::uint8_t>& bytes) {
  Reader rd(bytes);
  rd.need(4, "magic");
  if (std::memcmp(rd.cursor(), kMagic, 4) != 0) {
    throw FormatError("bad magic, expected \"ACPE\"", 0);
  }
  rd.skip(4);
  const std::uint64_t version_at = rd.pos();
  const auto version = rd.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw FormatError("unsupported version " + std::to_string(version),
                      version_at);
  }
  const auto count = rd.get<std::uint32_t>("record count");
  const std::uint64_t blocks_at = rd.pos();
  const auto nblocks = rd.get<std::uint32_t>("block count");
  if (nblocks == 0 || nblocks > kMaxBlocks) {
    throw FormatError("block count " + std::to_string(nblocks) +
                          " outside [1, " + std::to_string(kMaxBlocks) + "]",
                      blocks_at);
  }
  EmbeddingSet set;
  std::uint64_t floats_per_record = 0;
  for (std::uint32_t b = 0; b < nblocks; ++b) {
    const std::uint64_t at = rd.pos();
    const auto d = rd.get<std::uint32_t>("block dimension");
    if (d == 0 || d > kMaxBlockDim) {
      throw FormatError("block " + std::to_string(b) + " dimension " +
                            std::to_string(d) + " outside [1, " +
                            std::to_string(kMaxBlockDim) + "]",
                        at);
    }
    set.block_dims.push_back(d);
    floats_per_record += d;
  }
  const std::uint64_t role_at = rd.pos();
  const auto role = rd.get<std::uint8_t>("role");
  if (role > 2) {
    throw FormatError("unknown role byte " + std::to_string(role), role_at);
  }
  set.role = static_cast<Role>(role);

  const std::uint64_t record_bytes = 16 + 4 * floats_per_record;
  if (rd.remaining() < record_bytes * count) {
    const std::uint64_t complete = rd.remaining() / record_bytes;
    throw FormatError("truncated record matrix: header declares " +
                          std::to_string(count) + " records, file holds " +
                          std::to_string(complete),
                      rd.pos() + complete * record_bytes);
  }
  if (rd.remaining() > record_bytes * count) {
    throw FormatError("unexpected trailing bytes after last record",
                      rd.pos() + record_bytes * count);
  }
  set.records.resize(count);
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& r = set.records[i];
    const std::uint64_t at = rd.pos();
    r.item_id = rd.get<std::uint64_t>("item_id");
    if (!seen.insert(r.item_id).second) {
      throw FormatError("duplicate item_id " + std::to_string(r.item_id), at);
    }
    r.identity = rd.get<std::uint32_t>("identity");
    r.camera = rd.get<std::uint32_t>("camera");
    r.blocks.resize(nblocks);
    for (std::uint32_t b = 0; b < nblocks; ++b) {
      auto& blk = r.blocks[b];
      blk.resize(set.block_dims[b]);
      const std::uint64_t values_at = rd.pos();
      rd.need(blk.size() * sizeof(float), "block values");
      std::memcpy(blk.data(), rd.cursor(), blk.size() * sizeof(float));
      rd.skip(blk.size() * sizeof(float));
      for (std::size_t c = 0; c < blk.size(); ++c) {
        if (!std::isfinite(blk[c])) {
          throw FormatError("non-finite value in record " + std::to_string(i),
                            values_at + c * sizeof(float));
        }
      }
    }
  }
  return set;
}

void save_set(const EmbeddingSet& set, const std::filesystem::path& path) {
  detail::write_file(path, serialize_set(set));
}

EmbeddingSet load_set(const std::filesystem::path& path) {
  return parse_set(detail::read_file(path));
}

void write_manifest(const EmbeddingSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& r : set.records) {
    nlohmann::json j{{"item_id", r.item_id},
                     {"identity", r.identity},
                     {"camera", r.camera}};
    out << j.dump() << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    const std::uint64_t line_at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("item_id").get<std::uint64_t>(),
                     j.at("identity").get<std::uint32_t>(),
                     j.at("camera").get<std::uint32_t>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("bad manifest line: ") + e.what(), line_at);
    }
  }
  return out;
}

}  // namespace acp::data
