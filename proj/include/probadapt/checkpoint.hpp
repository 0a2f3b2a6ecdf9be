// Copyright 2026 The probadapt Authors. All Rights Reserved.
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

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "probadapt/errors.hpp"
#include "probadapt/model.hpp"
#include "probadapt/pgm.hpp"
#include "probadapt/version.hpp"

// Checkpoint layout: "PADCKPT1", u64 little-endian metadata length, JSON
// metadata, then every tensor as little-endian float32 in metadata order.

namespace probadapt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'D', 'C', 'K', 'P', 'T', '1'};

struct CheckpointMeta {
  std::int64_t iteration = 0;
  std::string config_hash;
  std::string version = kVersion;
};

inline nlohmann::json to_json(const PUNetConfig& c) {
  return {{"ladder", c.ladder}, {"in_channels", c.in_channels}, {"latent_dim", c.latent_dim},
          {"classes", c.classes}, {"comb_layers", c.comb_layers}};
}

inline PUNetConfig model_config_from_json(const nlohmann::json& j) {
  PUNetConfig c;
  c.ladder = j.at("ladder").get<std::vector<int>>();
  c.in_channels = j.at("in_channels").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.classes = j.at("classes").get<int>();
  c.comb_layers = j.at("comb_layers").get<int>();
  return c;
}

template <typename T>
std::string encode_checkpoint(const PUNetWeights<T>& w, const CheckpointMeta& meta) {
  nlohmann::json j;
  j["architecture"] = to_json(w.config());
  j["iteration"] = meta.iteration;
  j["config_hash"] = meta.config_hash;
  j["version"] = meta.version;
  j["tensors"] = nlohmann::json::array();
  for (std::size_t i = 0; i < w.size(); ++i) j["tensors"].push_back({{"name", w.name(i)}, {"shape", w.tensor(i).shape()}});
  const std::string header = j.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint64_t len = header.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += header;
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (T v : w.tensor(i).data()) {
      const float f = static_cast<float>(v);
      out.append(reinterpret_cast<const char*>(&f), sizeof f);
    }
  }
  return out;
}

template <typename T>
struct LoadedCheckpoint {
  PUNetWeights<T> weights;
  CheckpointMeta meta;
};

// Fails with ArchitectureMismatch when `expected` is given and differs from
// the stored architecture, IoError on any malformed content.
template <typename T>
LoadedCheckpoint<T> decode_checkpoint(const std::string& bytes, const std::optional<PUNetConfig>& expected,
                                      const std::string& origin = "<checkpoint>") {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw IoError(origin + ": not a probadapt checkpoint");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof len);
  if (len > bytes.size() - 16) throw IoError(origin + ": truncated checkpoint header");
  nlohmann::json j;
  PUNetConfig arch;
  try {
    j = nlohmann::json::parse(bytes.substr(16, len));
    arch = model_config_from_json(j.at("architecture"));
    arch.validate();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(origin + ": bad checkpoint metadata: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(origin + ": bad checkpoint architecture: " + e.what());
  }
  if (expected && !(*expected == arch)) {
    throw ArchitectureMismatch(origin + ": checkpoint architecture " + to_json(arch).dump() +
                               " does not match configured " + to_json(*expected).dump());
  }
  LoadedCheckpoint<T> out{PUNetWeights<T>::zeros(arch), {}};
  try {
    out.meta.iteration = j.at("iteration").get<std::int64_t>();
    out.meta.config_hash = j.at("config_hash").get<std::string>();
    out.meta.version = j.at("version").get<std::string>();
    const auto& tensors = j.at("tensors");
    if (tensors.size() != out.weights.size()) throw ArchitectureMismatch(origin + ": tensor count mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].at("name").get<std::string>() != out.weights.name(i) ||
          tensors[i].at("shape").get<std::vector<int>>() != out.weights.tensor(i).shape()) {
        throw ArchitectureMismatch(origin + ": tensor " + std::to_string(i) + " does not match the architecture");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(origin + ": bad checkpoint metadata: " + e.what());
  }
  std::size_t pos = 16 + len;
  const std::size_t need = out.weights.parameter_count() * sizeof(float);
  if (bytes.size() - pos != need) throw IoError(origin + ": checkpoint payload has wrong size");
  for (std::size_t i = 0; i < out.weights.size(); ++i) {
    for (T& v : out.weights.tensor(i).data()) {
      float f;
      std::memcpy(&f, bytes.data() + pos, sizeof f);
      pos += sizeof f;
      v = static_cast<T>(f);
    }
  }
  return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const PUNetWeights<T>& w, const CheckpointMeta& meta) {
  pgm::write_file(path, encode_checkpoint(w, meta));
}

template <typename T = float>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path,
                                    const std::optional<PUNetConfig>& expected = std::nullopt) {
  return decode_checkpoint<T>(pgm::read_file(path), expected, path.string());
}

}  // namespace probadapt
