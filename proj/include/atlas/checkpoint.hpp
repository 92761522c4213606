#pragma once

// PVC1 checkpoint files.
//
//   bytes 0..3    "PVC1"
//   u32 LE        format version (1)
//   u32 LE        header length in bytes
//   header        UTF-8 JSON {"tensors":[{"name","shape"}...], "meta":{...}, "model":{...}}
//   payload       f64 LE values in manifest order, row-major
//   u32 LE        CRC32 of the payload

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "atlas/error.hpp"
#include "atlas/param_space.hpp"

namespace atlas {

struct CheckpointMeta {
  std::string run_id;
  std::uint64_t body_seed = 0;
  std::uint64_t head_seed = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t step = 0;
  std::string task_id;
  std::string optimizer_digest;

  bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
  ParamVector params;
  CheckpointMeta meta;
  nlohmann::json model = nlohmann::json::object();

  bool operator==(const Checkpoint& o) const {
    return params == o.params && meta == o.meta && model == o.model;
  }
};

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, version_mismatch, truncated, checksum, bad_header };

  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr char kCheckpointMagic[4] = {'P', 'V', 'C', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline nlohmann::json to_json(const CheckpointMeta& m) {
  return {{"run_id", m.run_id},       {"body_seed", m.body_seed}, {"head_seed", m.head_seed},
          {"data_seed", m.data_seed}, {"step", m.step},           {"task_id", m.task_id},
          {"optimizer_digest", m.optimizer_digest}};
}

inline CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta m;
  m.run_id = j.at("run_id").get<std::string>();
  m.body_seed = j.at("body_seed").get<std::uint64_t>();
  m.head_seed = j.at("head_seed").get<std::uint64_t>();
  m.data_seed = j.at("data_seed").get<std::uint64_t>();
  m.step = j.at("step").get<std::uint64_t>();
  m.task_id = j.at("task_id").get<std::string>();
  m.optimizer_digest = j.at("optimizer_digest").get<std::string>();
  return m;
}

inline std::string encode_checkpoint(const Checkpoint& c) {
  require(!c.meta.run_id.empty(), "checkpoint: run_id must be nonempty");
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : c.params.manifest().tensors()) tensors.push_back({{"name", t.name}, {"shape", t.shape}});
  const nlohmann::json header = {{"tensors", tensors}, {"meta", to_json(c.meta)}, {"model", c.model}};
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  const std::size_t payload_begin = out.size();
  out.reserve(out.size() + 8 * c.params.size() + 4);
  for (double v : c.params.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  const auto* payload = reinterpret_cast<const unsigned char*>(out.data()) + payload_begin;
  detail::put_u32(out, detail::crc32_of(payload, out.size() - payload_begin));
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  using Kind = CheckpointError::Kind;
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || std::memcmp(p, kCheckpointMagic, 4) != 0)
    throw CheckpointError(Kind::bad_magic, "checkpoint: bad magic bytes");
  if (bytes.size() < 12) throw CheckpointError(Kind::truncated, "checkpoint: truncated preamble");
  const auto version = detail::get_u32(p + 4);
  if (version != kCheckpointVersion)
    throw CheckpointError(Kind::version_mismatch, "checkpoint: unsupported version " + std::to_string(version));
  const std::size_t header_len = detail::get_u32(p + 8);
  if (bytes.size() < 12 + header_len) throw CheckpointError(Kind::truncated, "checkpoint: truncated header");

  nlohmann::json header;
  std::vector<TensorSpec> specs;
  Checkpoint c;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
    for (const auto& t : header.at("tensors"))
      specs.push_back({t.at("name").get<std::string>(), t.at("shape").get<std::vector<std::size_t>>()});
    c.meta = meta_from_json(header.at("meta"));
    if (header.contains("model")) c.model = header.at("model");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::bad_header, std::string("checkpoint: malformed header: ") + e.what());
  }
  ManifestPtr manifest;
  try {
    manifest = std::make_shared<const ShapeManifest>(std::move(specs));
  } catch (const ValidationError& e) {
    throw CheckpointError(Kind::bad_header, std::string("checkpoint: ") + e.what());
  }

  const std::size_t payload_begin = 12 + header_len;
  const std::size_t payload_len = 8 * manifest->total_len();
  if (bytes.size() < payload_begin + payload_len + 4)
    throw CheckpointError(Kind::truncated, "checkpoint: truncated payload");
  if (bytes.size() != payload_begin + payload_len + 4)
    throw CheckpointError(Kind::bad_header, "checkpoint: trailing bytes after checksum");
  const auto stored_crc = detail::get_u32(p + payload_begin + payload_len);
  if (detail::crc32_of(p + payload_begin, payload_len) != stored_crc)
    throw CheckpointError(Kind::checksum, "checkpoint: payload checksum mismatch");

  std::vector<double> values(manifest->total_len());
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = std::bit_cast<double>(detail::get_u64(p + payload_begin + 8 * i));
  c.params = ParamVector(std::move(manifest), std::move(values));
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "checkpoint: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError(CheckpointError::Kind::io, "checkpoint: write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "checkpoint: cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace atlas
