// Copyright 2026 The petal-tta Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "petal/tensor.hpp"

namespace petal {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Binary layout, all integers little-endian:
//   "PTTA" | version u32 | entry count u32 |
//   per entry: name length u16, UTF-8 name, rank u8, extents u32 x rank,
//              payload f64 x numel.
inline constexpr char kCheckpointMagic[4] = {'P', 'T', 'T', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const NamedTensors& entries);
NamedTensors decode_checkpoint(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors read_checkpoint(const std::filesystem::path& path);

/// Looks up `name`; throws std::runtime_error when absent.
const Tensor& find_entry(const NamedTensors& entries, const std::string& name);

}  // namespace petal
