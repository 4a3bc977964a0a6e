// Copyright 2026 trajcast contributors
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

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "trajcast/tape.hpp"

namespace trajcast {

inline constexpr char kCheckpointMagic[8] = {'T', 'J', 'C', 'K', 'P', 'T', '0', '1'};

/// Flat binary checkpoint: header (magic, config hash, training step, count),
/// then per parameter name, shape, and raw float32 little-endian values.
template <class S>
void save_checkpoint(const ParamStore<S>& store, const std::string& config_hash_hex,
                     std::uint64_t step, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, 8);
  if (config_hash_hex.size() != 16) throw ConfigError("config hash must be 16 hex chars");
  out.write(config_hash_hex.data(), 16);
  auto write_u64 = [&out](std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
  };
  auto write_u32 = [&out](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  };
  write_u64(step);
  write_u64(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store.at(i);
    write_u32(static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(static_cast<std::uint32_t>(p.rows));
    write_u32(static_cast<std::uint32_t>(p.cols));
    std::vector<float> vals(p.value.size());
    for (std::size_t j = 0; j < vals.size(); ++j) vals[j] = static_cast<float>(p.value[j]);
    out.write(reinterpret_cast<const char*>(vals.data()),
              static_cast<std::streamsize>(vals.size() * sizeof(float)));
  }
  if (!out) throw ParseError("checkpoint write failed: " + path);
}

/// Loads parameter values; rejects config-hash mismatch and any layout drift.
/// Returns the stored training step.
template <class S>
std::uint64_t load_checkpoint(ParamStore<S>& store, const std::string& config_hash_hex,
                              const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ParseError("not a checkpoint file: " + path);
  char hash[17] = {0};
  in.read(hash, 16);
  if (std::string(hash, 16) != config_hash_hex)
    throw ConfigError("checkpoint config hash mismatch: file " + std::string(hash, 16) +
                      " vs model " + config_hash_hex);
  auto read_u64 = [&in]() {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  auto read_u32 = [&in]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  const std::uint64_t step = read_u64();
  const std::uint64_t count = read_u64();
  if (count != store.size()) throw ConfigError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32();
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t rows = read_u32();
    const std::uint32_t cols = read_u32();
    auto& p = store.at(i);
    if (p.name != name || p.rows != static_cast<int>(rows) ||
        p.cols != static_cast<int>(cols))
      throw ConfigError("checkpoint layout mismatch at parameter " + name);
    std::vector<float> vals(p.value.size());
    in.read(reinterpret_cast<char*>(vals.data()),
            static_cast<std::streamsize>(vals.size() * sizeof(float)));
    if (!in) throw ParseError("checkpoint truncated at parameter " + name);
    for (std::size_t j = 0; j < vals.size(); ++j) p.value[j] = static_cast<S>(vals[j]);
  }
  return step;
}

}  // namespace trajcast
