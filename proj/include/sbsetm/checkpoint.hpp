// Copyright 2026 The sbsetm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Checkpoint container: the 8-byte magic "SBSETMCK", a little-endian uint64
// manifest length, a JSON manifest (format version, model config,
// vocabulary, tensor names, shapes and byte offsets) and the tensors as
// little-endian float32 blobs in row-major order.

#ifndef SBSETM_CHECKPOINT_HPP_
#define SBSETM_CHECKPOINT_HPP_

#include <filesystem>
#include <string>

#include "json.hpp"
#include "sbsetm/sbetm.hpp"

namespace sbsetm {

inline constexpr int kCheckpointVersion = 1;

std::string serialize_checkpoint(const ModelParams& params, const ModelConfig& config,
                                 const nlohmann::json& extra = nlohmann::json::object());

struct LoadedCheckpoint {
  ModelParams params;
  ModelConfig config;
  nlohmann::json extra;
};

LoadedCheckpoint deserialize_checkpoint(const std::string& bytes);

// Writes through a temporary file and a rename, so a crash never leaves a
// truncated checkpoint behind.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const ModelConfig& config,
                     const nlohmann::json& extra = nlohmann::json::object());

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Rounds every tensor to float32, exactly as a save/load cycle would.
ModelParams round_to_float32(const ModelParams& params);

std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace sbsetm

#endif  // SBSETM_CHECKPOINT_HPP_
