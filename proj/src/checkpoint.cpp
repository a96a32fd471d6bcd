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

#include "unime/checkpoint.hpp"

#include <json.hpp>

#include "unime/errors.hpp"
#include "unime/fileio.hpp"

namespace unime {
namespace checkpoint {
namespace {

using nlohmann::json;

json manifest_to_json(const Manifest& m) {
  json tensors = json::array();
  for (const auto& t : m.tensors) {
    tensors.push_back({{"name", t.name},
                       {"shape", t.shape},
                       {"dtype", t.dtype},
                       {"offset", t.offset},
                       {"nbytes", t.nbytes},
                       {"init", t.init}});
  }
  return json{{"format_version", m.format_version},
              {"stage", m.stage},
              {"step", m.step},
              {"config", m.config_toml},
              {"tensors", tensors}};
}

Manifest manifest_from_json(const json& j, const std::string& where) {
  for (const char* key :
       {"format_version", "stage", "step", "config", "tensors"}) {
    if (!j.contains(key)) {
      throw FormatError(where + ": manifest missing key '" + key + "'");
    }
  }
  Manifest m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != kFormatVersion) {
    throw FormatError(where + ": unsupported checkpoint format_version " +
                      std::to_string(m.format_version));
  }
  m.stage = j.at("stage").get<std::string>();
  if (m.stage != "stage1" && m.stage != "stage2") {
    throw FormatError(where + ": unknown stage tag '" + m.stage + "'");
  }
  m.step = j.at("step").get<int64_t>();
  m.config_toml = j.at("config").get<std::string>();
  if (!j.at("tensors").is_array()) {
    throw FormatError(where + ": 'tensors' must be an array");
  }
  for (const auto& tj : j.at("tensors")) {
    for (const char* key : {"name", "shape", "dtype", "offset", "nbytes",
                            "init"}) {
      if (!tj.contains(key)) {
        throw FormatError(where + ": tensor entry missing key '" +
                          std::string(key) + "'");
      }
    }
    TensorEntry t;
    t.name = tj.at("name").get<std::string>();
    t.shape = tj.at("shape").get<Shape>();
    t.dtype = tj.at("dtype").get<std::string>();
    t.offset = tj.at("offset").get<uint64_t>();
    t.nbytes = tj.at("nbytes").get<uint64_t>();
    t.init = tj.at("init").get<std::string>();
    if (t.dtype != "f32") {
      throw FormatError(where + ": tensor '" + t.name +
                        "' has unsupported dtype '" + t.dtype + "'");
    }
    for (int64_t d : t.shape) {
      if (d <= 0) {
        throw FormatError(where + ": tensor '" + t.name +
                          "' has a non-positive shape entry");
      }
    }
    m.tensors.push_back(std::move(t));
  }
  return m;
}

}  // namespace

void save(const std::filesystem::path& dir, const ParamStore<float>& ps,
          const std::string& stage, int64_t step,
          const std::string& config_toml) {
  if (stage != "stage1" && stage != "stage2") {
    throw ContractError("checkpoint stage must be stage1 or stage2");
  }
  Manifest m;
  m.stage = stage;
  m.step = step;
  m.config_toml = config_toml;

  std::vector<char> weights;
  for (const auto& p : ps.all()) {
    TensorEntry t;
    t.name = p->name;
    t.shape = p->value.shape;
    t.dtype = "f32";
    t.offset = weights.size();
    t.nbytes = (uint64_t)p->value.numel() * 4;
    t.init = p->init_src.empty() ? "scratch" : p->init_src;
    fileio::append_f32le(weights, p->value.data.data(), p->value.numel());
    m.tensors.push_back(std::move(t));
  }

  namespace fs = std::filesystem;
  const fs::path tmp = dir.string() + ".tmp";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp);
  const std::string manifest_text = manifest_to_json(m).dump(2) + "\n";
  fileio::write_file<DataError>(tmp / "manifest.json", manifest_text.data(),
                                manifest_text.size());
  fileio::write_file<DataError>(tmp / "weights.bin", weights.data(),
                                weights.size());
  fs::remove_all(dir, ec);
  fs::rename(tmp, dir, ec);
  if (ec) {
    throw DataError("cannot finalize checkpoint at " + dir.string() + ": " +
                    ec.message());
  }
}

Loaded load(const std::filesystem::path& dir) {
  const std::string where = dir.string();
  if (!std::filesystem::exists(dir / "manifest.json")) {
    throw FormatError(where + ": not a checkpoint (manifest.json missing)");
  }
  const auto manifest_bytes = fileio::read_file(dir / "manifest.json");
  json j;
  try {
    j = json::parse(manifest_bytes.begin(), manifest_bytes.end());
  } catch (const json::exception& e) {
    throw FormatError(where + ": manifest.json is not valid JSON: " +
                      e.what());
  }
  Loaded out;
  out.manifest = manifest_from_json(j, where);

  const auto weights = fileio::read_file(dir / "weights.bin");
  for (const auto& t : out.manifest.tensors) {
    int64_t numel = 1;
    for (int64_t d : t.shape) numel *= d;
    if (t.nbytes != (uint64_t)numel * 4) {
      throw FormatError(where + ": tensor '" + t.name +
                        "' nbytes inconsistent with shape");
    }
    if (t.offset + t.nbytes > weights.size()) {
      throw FormatError(where + ": tensor '" + t.name +
                        "' extends past end of weights.bin");
    }
    if (out.tensors.count(t.name)) {
      throw FormatError(where + ": duplicate tensor '" + t.name + "'");
    }
    Tensor<float> v(t.shape);
    fileio::read_f32le(weights.data() + t.offset, v.data.data(), numel);
    out.tensors.emplace(t.name, std::move(v));
  }
  return out;
}

void assign_into(ParamStore<float>& ps, const Loaded& ckpt,
                 const std::string& where) {
  auto params = ps.all();
  if (ckpt.tensors.size() != params.size()) {
    throw ConfigError(where + ": checkpoint holds " +
                      std::to_string(ckpt.tensors.size()) +
                      " tensors, the configured model has " +
                      std::to_string(params.size()));
  }
  std::map<std::string, std::string> init_src;
  for (const auto& e : ckpt.manifest.tensors) init_src[e.name] = e.init;
  for (Parameter<float>* p : params) {
    auto it = ckpt.tensors.find(p->name);
    if (it == ckpt.tensors.end()) {
      throw ConfigError(where + ": checkpoint is missing tensor '" + p->name +
                        "'; the run configuration does not match");
    }
    if (it->second.shape != p->value.shape) {
      throw ConfigError(where + ": tensor '" + p->name +
                        "' shape differs from the configured model");
    }
    p->value = it->second;
    p->init_src = init_src[p->name];
  }
}

}  // namespace checkpoint
}  // namespace unime
