#pragma once

// Checkpoint container: magic "ADMK", version u32, then a named-tensor table
// (name, rank, dims, little-endian f32 payload per entry).

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "adamatch/tensor.hpp"

namespace adamatch {

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw CheckpointError("checkpoint: truncated header");
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

}  // namespace detail

constexpr uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("checkpoint: cannot write " + path);
  os.write("ADMK", 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) detail::put_u32(os, static_cast<uint32_t>(d));
    for (long i = 0; i < t.numel(); ++i) {
      uint32_t bits;
      std::memcpy(&bits, &t.data[static_cast<size_t>(i)], 4);
      detail::put_u32(os, bits);
    }
  }
  if (!os) throw CheckpointError("checkpoint: write failed for " + path);
}

inline NamedTensors read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "ADMK", 4) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path);
  const uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  const uint32_t count = detail::get_u32(is);
  NamedTensors out;
  out.reserve(count);
  for (uint32_t e = 0; e < count; ++e) {
    const uint32_t name_len = detail::get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = detail::get_u32(is);
    std::vector<int> shape(rank);
    for (uint32_t r = 0; r < rank; ++r) shape[r] = static_cast<int>(detail::get_u32(is));
    Tensor<float> t(shape);
    for (long i = 0; i < t.numel(); ++i) {
      uint32_t bits = detail::get_u32(is);
      std::memcpy(&t.data[static_cast<size_t>(i)], &bits, 4);
    }
    if (!is) throw CheckpointError("checkpoint: truncated payload in " + path);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace adamatch
