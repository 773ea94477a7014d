// Copyright 2026 The pfrpn Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Binary parameter files: "PFRP", u32 version, u32 array count, then per
// array u32 name length, name bytes, u32 rank, u64 dims, little-endian f64.
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pfrpn/pipeline.hpp"

namespace pfrpn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using NamedArrays = std::vector<std::pair<std::string, Tensor>>;

void write_arrays(const NamedArrays& arrays, const std::filesystem::path& path);
NamedArrays read_arrays(const std::filesystem::path& path);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
/// Loads into the structure implied by `config`; names and shapes must match.
ModelParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

}  // namespace pfrpn
