#pragma once

// Binary checkpoint format (all integers and floats little-endian):
//
//   magic   "MVPCKPT\0"                 8 bytes
//   version u32                          currently 1
//   count   u64
//   count × { name_len u32, name bytes,
//             rank u32, extents u64[rank],
//             payload f64[product(extents)] }
//
// Names follow "module.layer{idx}.{param}". Values round-trip bit-exactly.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mvp/tensor/tensor.hpp"

namespace mvp {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(std::span<const NamedTensor> params);
std::vector<NamedTensor> decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> params);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Copies values by name into existing tensors. Every destination must be
/// present in `src` with an identical shape.
void assign_parameters(std::span<const NamedTensor> dst, std::span<const NamedTensor> src);

/// FNV-1a over names, shapes and raw payload bits. Cheap equality witness.
std::uint64_t parameter_checksum(std::span<const NamedTensor> params);

}  // namespace mvp
