// Copyright 2026 The UniME Authors. All Rights Reserved.
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
//
// Byte-level file helpers. All multi-byte payloads on disk are little-endian
// regardless of the host, so archives are portable across machines.

#ifndef UNIME_FILEIO_HPP_
#define UNIME_FILEIO_HPP_

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "unime/errors.hpp"

namespace unime {
namespace fileio {

inline void append_f32le(std::vector<char>& buf, const float* p, int64_t n) {
  const size_t base = buf.size();
  buf.resize(base + (size_t)n * 4);
  for (int64_t i = 0; i < n; ++i) {
    const uint32_t u = std::bit_cast<uint32_t>(p[i]);
    buf[base + i * 4 + 0] = (char)(u & 0xff);
    buf[base + i * 4 + 1] = (char)((u >> 8) & 0xff);
    buf[base + i * 4 + 2] = (char)((u >> 16) & 0xff);
    buf[base + i * 4 + 3] = (char)((u >> 24) & 0xff);
  }
}

inline void read_f32le(const char* buf, float* p, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    const uint32_t u = (uint32_t)(uint8_t)buf[i * 4 + 0] |
                       ((uint32_t)(uint8_t)buf[i * 4 + 1] << 8) |
                       ((uint32_t)(uint8_t)buf[i * 4 + 2] << 16) |
                       ((uint32_t)(uint8_t)buf[i * 4 + 3] << 24);
    p[i] = std::bit_cast<float>(u);
  }
}

template <typename ErrorT = DataError>
void write_file(const std::filesystem::path& path, const char* data,
                size_t n) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ErrorT("cannot open for writing: " + path.string());
  f.write(data, (std::streamsize)n);
  f.flush();
  if (!f) throw ErrorT("write failed: " + path.string());
}

template <typename ErrorT = FormatError>
std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw ErrorT("cannot open: " + path.string());
  const auto size = f.tellg();
  f.seekg(0);
  std::vector<char> buf((size_t)size);
  f.read(buf.data(), size);
  if (!f) throw ErrorT("read failed: " + path.string());
  return buf;
}

}  // namespace fileio
}  // namespace unime

#endif  // UNIME_FILEIO_HPP_
