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


#include "sbsetm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace sbsetm {

namespace {

constexpr char kMagic[8] = {'S', 'B', 'S', 'E', 'T', 'M', 'C', 'K'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

const char* role_name(Role r) {
  switch (r) {
    case Role::kFixed:
      return "fixed";
    case Role::kTrainable:
      return "trainable";
    case Role::kBuffer:
      return "buffer";
  }
  return "?";
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& params, const ModelConfig& config,
                                 const nlohmann::json& extra) {
  check_shapes(params, config);
  nlohmann::json manifest;
  manifest["format"] = "SBSETMCK";
  manifest["version"] = kCheckpointVersion;
  manifest["config"] = to_json(config);
  manifest["vocab"] = params.vocab;
  manifest["extra"] = extra;
  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : params.tensors()) {
    tensors.push_back({{"name", t.name},
                       {"shape", {t.rows, t.cols}},
                       {"offset", blob.size()},
                       {"role", role_name(t.role)}});
    for (Index i = 0; i < t.rows; ++i) {
      for (Index j = 0; j < t.cols; ++j) {
        const float f = static_cast<float>(t.data[i + j * t.rows]);
        char bytes[4];
        std::memcpy(bytes, &f, 4);
        blob.append(bytes, 4);
      }
    }
  }
  manifest["tensors"] = tensors;
  const std::string text = manifest.dump();
  std::string out(kMagic, 8);
  const std::uint64_t len = text.size();
  char len_bytes[8];
  std::memcpy(len_bytes, &len, 8);
  out.append(len_bytes, 8);
  out += text;
  out += blob;
  return out;
}

LoadedCheckpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw InputError("not a checkpoint file (bad magic)");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  if (len > bytes.size() - 16) throw InputError("checkpoint manifest is truncated");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("checkpoint manifest: ") + e.what());
  }
  if (manifest.value("version", 0) != kCheckpointVersion) {
    throw InputError("unsupported checkpoint version");
  }
  const std::size_t base = 16 + len;
  LoadedCheckpoint out;
  out.config = model_config_from_json(manifest.at("config"));
  out.params = zero_params(out.config);
  out.params.vocab = manifest.at("vocab").get<std::vector<std::string>>();
  out.extra = manifest.value("extra", nlohmann::json::object());

  std::map<std::string, nlohmann::json> entries;
  for (const auto& t : manifest.at("tensors")) entries[t.at("name").get<std::string>()] = t;
  for (auto& t : out.params.tensors()) {
    auto it = entries.find(t.name);
    if (it == entries.end()) throw InputError("checkpoint lacks tensor " + t.name);
    const auto shape = it->second.at("shape").get<std::vector<Index>>();
    if (shape.size() != 2 || shape[0] != t.rows || shape[1] != t.cols) {
      throw InputError("checkpoint tensor " + t.name + " has an unexpected shape");
    }
    const std::size_t offset = base + it->second.at("offset").get<std::size_t>();
    if (offset + 4 * static_cast<std::size_t>(t.size()) > bytes.size()) {
      throw InputError("checkpoint tensor " + t.name + " is truncated");
    }
    const char* p = bytes.data() + offset;
    for (Index i = 0; i < t.rows; ++i) {
      for (Index j = 0; j < t.cols; ++j) {
        float f;
        std::memcpy(&f, p, 4);
        p += 4;
        t.data[i + j * t.rows] = f;
      }
    }
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const ModelConfig& config, const nlohmann::json& extra) {
  write_file_atomic(path, serialize_checkpoint(params, config, extra));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

ModelParams round_to_float32(const ModelParams& params) {
  ModelParams out = params;
  for (auto& t : out.tensors()) {
    for (Index i = 0; i < t.size(); ++i) t.data[i] = static_cast<float>(t.data[i]);
  }
  return out;
}

}  // namespace sbsetm
