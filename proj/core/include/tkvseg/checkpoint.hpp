#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tkvseg/nn.hpp"

namespace tkvseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, all integers little-endian u32:
//   "TKVSEGCK" | version | depth | base_channels | max_channels
//   | n_levels, channels... | n_tasks, { name, n_classes, class names... }...
//   | n_records, { name, rank, extents..., float32 values... }...
// Strings are u32 byte length followed by UTF-8 bytes. Records hold every trainable
// parameter in id order, then the running mean and variance of each batch norm.
std::vector<std::uint8_t> encode_checkpoint(const MultiTaskNet<float>& net);
MultiTaskNet<float> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const MultiTaskNet<float>& net, const std::filesystem::path& path);
MultiTaskNet<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace tkvseg
