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
// Checkpoint archive: a directory holding manifest.json plus weights.bin.
// The manifest maps each tensor name to shape, dtype, and byte offset into
// weights.bin (float32, little-endian, ParamStore insertion order) and echoes
// the resolved config together with a stage tag. Writes go through a temp
// directory and a final rename so a crash never leaves a half-written
// checkpoint behind.

#ifndef UNIME_CHECKPOINT_HPP_
#define UNIME_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "unime/tape.hpp"
#include "unime/tensor.hpp"

namespace unime {
namespace checkpoint {

inline constexpr int kFormatVersion = 1;

struct TensorEntry {
  std::string name;
  Shape shape;
  std::string dtype;  // always "f32" in format version 1
  uint64_t offset = 0;
  uint64_t nbytes = 0;
  std::string init;  // "scratch" or "pretrained"
};

struct Manifest {
  int format_version = kFormatVersion;
  std::string stage;  // "stage1" or "stage2"
  int64_t step = 0;
  std::string config_toml;  // resolved config echo
  std::vector<TensorEntry> tensors;
};

// Serializes every parameter in `ps` (insertion order). Tensor `init`
// provenance is taken from Parameter::init_src.
void save(const std::filesystem::path& dir, const ParamStore<float>& ps,
          const std::string& stage, int64_t step,
          const std::string& config_toml);

struct Loaded {
  Manifest manifest;
  std::map<std::string, Tensor<float>> tensors;
};

// Throws FormatError on a malformed archive.
Loaded load(const std::filesystem::path& dir);

// Strict whole-store restore: the checkpoint must hold exactly the store's
// tensor set with matching shapes (a mismatch means the run configuration
// differs from the one that produced the checkpoint). Copies values and
// init provenance.
void assign_into(ParamStore<float>& ps, const Loaded& ckpt,
                 const std::string& where);

}  // namespace checkpoint
}  // namespace unime

#endif  // UNIME_CHECKPOINT_HPP_
