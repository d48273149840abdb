#pragma once

#include <filesystem>

#include "ds2net/model.hpp"

namespace ds2net {

// Binary layout, all integers little-endian:
//   "DS2NCKPT" | u32 version (1)
//   config: u64 in_channels, u64 x4 stage_channels, u64 input_size, u64 x3 dem_kernel_sizes,
//           u64 ca_kernel, u8 mask_source_swap, u8 variant, u64 seed
//   u64 parameter count, then per parameter in ParameterSet order:
//     u32 name length, name bytes, u32 rank, u64 x rank dims, numel x f64 (IEEE-754 little-endian)
inline constexpr char kCheckpointMagic[8] = {'D', 'S', '2', 'N', 'C', 'K', 'P', 'T'};
inline constexpr unsigned kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

} // namespace ds2net
