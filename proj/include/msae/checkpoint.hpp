#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "msae/error.hpp"
#include "msae/io.hpp"

namespace msae {

// File layout:
//   "MSAECKPT" | u32 LE header length | UTF-8 JSON manifest
//   | little-endian f32 blob | u32 LE CRC32 of the blob

inline constexpr char kCheckpointMagic[8] = {'M', 'S', 'A', 'E', 'C', 'K', 'P', 'T'};
inline constexpr int kCheckpointFormatVersion = 1;

struct TensorEntry {
  std::string name;
  std::vector<std::int64_t> shape;
  std::string dtype = "f32";
  std::uint64_t offset_bytes = 0;

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (auto s : shape) n *= static_cast<std::uint64_t>(s);
    return n;
  }
  bool operator==(const TensorEntry&) const = default;
};

struct CheckpointManifest {
  int format_version = kCheckpointFormatVersion;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  std::vector<TensorEntry> tensors;
  std::uint32_t crc32 = 0;

  std::uint64_t total_bytes() const {
    std::uint64_t n = 0;
    for (const auto& t : tensors) n += t.numel() * 4;
    return n;
  }

  /// Assigns contiguous ascending offsets in tensor order.
  void layout() {
    std::uint64_t off = 0;
    for (auto& t : tensors) {
      t.offset_bytes = off;
      off += t.numel() * 4;
    }
  }

  void check_layout() const {
    std::uint64_t off = 0;
    for (const auto& t : tensors) {
      if (t.dtype != "f32") throw Error(ErrorCode::ParseError, "tensor " + t.name + " has unsupported dtype " + t.dtype);
      if (t.offset_bytes != off) throw Error(ErrorCode::ParseError, "tensor " + t.name + " offset is not contiguous");
      off += t.numel() * 4;
    }
  }
};

inline nlohmann::json to_json(const CheckpointManifest& m) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : m.tensors) {
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", t.dtype}, {"offset_bytes", t.offset_bytes}});
  }
  return {{"format_version", m.format_version},
          {"config", m.config},
          {"seed", m.seed},
          {"step", m.step},
          {"tensors", std::move(tensors)},
          {"crc32", m.crc32}};
}

inline CheckpointManifest manifest_from_json(const nlohmann::json& j) {
  CheckpointManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kCheckpointFormatVersion) {
      throw Error(ErrorCode::VersionMismatch, "checkpoint format " + std::to_string(m.format_version) +
                                                  ", expected " + std::to_string(kCheckpointFormatVersion));
    }
    m.config = j.at("config");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.step = j.at("step").get<std::int64_t>();
    m.crc32 = j.at("crc32").get<std::uint32_t>();
    for (const auto& t : j.at("tensors")) {
      m.tensors.push_back({t.at("name").get<std::string>(), t.at("shape").get<std::vector<std::int64_t>>(),
                           t.at("dtype").get<std::string>(), t.at("offset_bytes").get<std::uint64_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("checkpoint manifest: ") + e.what());
  }
  m.check_layout();
  return m;
}

inline std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

inline void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::vector<unsigned char> floats_to_le(std::span<const float> values) {
  std::vector<unsigned char> out;
  out.reserve(values.size() * 4);
  for (float f : values) put_u32_le(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

}  // namespace detail

/// Writes the checkpoint; `manifest.crc32` is recomputed from `values`.
inline void save_checkpoint(const std::string& path, CheckpointManifest manifest, std::span<const float> values) {
  manifest.check_layout();
  if (manifest.total_bytes() != values.size() * 4) {
    throw Error(ErrorCode::ShapeError, "tensor blob has " + std::to_string(values.size()) +
                                           " floats, manifest describes " +
                                           std::to_string(manifest.total_bytes() / 4));
  }
  const auto blob = detail::floats_to_le(values);
  manifest.crc32 = crc32_of(blob);
  const std::string header = to_json(manifest).dump();

  std::vector<unsigned char> bytes(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_u32_le(bytes, static_cast<std::uint32_t>(header.size()));
  bytes.insert(bytes.end(), header.begin(), header.end());
  bytes.insert(bytes.end(), blob.begin(), blob.end());
  detail::put_u32_le(bytes, manifest.crc32);

  auto out = detail::open_for_write(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, detail::io_message(path));
}

struct LoadedCheckpoint {
  CheckpointManifest manifest;
  std::vector<float> values;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  errno = 0;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, detail::io_message(path));
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw Error(ErrorCode::ParseError, path + ": not a checkpoint file");
  }
  const std::uint32_t header_len = detail::get_u32_le(bytes.data() + 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(header_len)) {
    throw Error(ErrorCode::ParseError, path + ": truncated manifest");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
  LoadedCheckpoint ck{manifest_from_json(header), {}};

  const std::size_t blob_start = 12 + header_len;
  const std::size_t blob_len = ck.manifest.total_bytes();
  if (bytes.size() != blob_start + blob_len + 4) {
    throw Error(ErrorCode::ChecksumMismatch, path + ": file size does not match manifest (truncated or padded)");
  }
  const std::span<const unsigned char> blob(bytes.data() + blob_start, blob_len);
  const std::uint32_t crc = crc32_of(blob);
  const std::uint32_t trailer = detail::get_u32_le(bytes.data() + blob_start + blob_len);
  if (crc != ck.manifest.crc32 || crc != trailer) {
    throw Error(ErrorCode::ChecksumMismatch, path + ": tensor blob CRC32 mismatch");
  }
  ck.values.resize(blob_len / 4);
  for (std::size_t i = 0; i < ck.values.size(); ++i) {
    ck.values[i] = std::bit_cast<float>(detail::get_u32_le(blob.data() + 4 * i));
  }
  return ck;
}

}  // namespace msae
