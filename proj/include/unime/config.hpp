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
// Experiment configuration: schema, presets, TOML loading with unknown-key
// rejection, and the resolved-config echo.

#ifndef UNIME_CONFIG_HPP_
#define UNIME_CONFIG_HPP_

#include <array>
#include <cstdint>
#include <string>

#include "unime/data_synth.hpp"
#include "unime/optimization.hpp"
#include "unime/toml.hpp"
#include "unime/uni_encoder.hpp"

namespace unime {
namespace config {

inline constexpr int kSchemaVersion = 1;

struct RunConfig {
  uint64_t seed = 1234;
  std::string out;
  bool deterministic = true;
  std::string preset;  // "", "desk", or "paper"
  std::string device = "cpu";
};

struct DataConfig {
  std::string dir;
  int64_t n_cases = 8;
  std::array<int, 3> dims{16, 16, 16};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  data_synth::PhantomParams phantom;
};

struct MaskConfig {
  std::array<double, 4> p{0.5, 0.5, 0.5, 0.5};
  std::array<double, 4> q{0.75, 0.75, 0.75, 0.75};
  std::string stage2_subset_distribution = "uniform";
};

struct StageConfig {
  int64_t steps = 500;
  int64_t batch_size = 1;
  int64_t eval_every = 100;
  int64_t checkpoint_every = 100;
};

struct PretrainConfig : StageConfig {
  double mask_reg_weight = 0.005;
};

struct FinetuneConfig : StageConfig {
  FinetuneConfig() : StageConfig{2000, 1, 200, 200} {}
  std::string arch = "full";  // full | multi-only | uni-only
  bool from_scratch = false;
  std::string init_from;  // stage-1 checkpoint directory
};

struct EvalConfig {
  std::string checkpoint;
  double hd_percentile = 0.95;
  bool write_jsonl = false;
};

struct ExperimentConfig {
  RunConfig run;
  DataConfig data;
  data_synth::AugmentConfig augment{.crop = {16, 16, 16}};
  MaskConfig mask;
  std::string encoder_scale = "custom";
  uni_encoder::UniEncoderConfig encoder{.d_embed = 96, .layers = 4,
                                        .heads = 6};
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  optimization::ScheduleConfig optim;  // total_steps/llrd_depth set per stage
  optimization::LossConfig loss;
  EvalConfig eval;

  void validate() const;
};

// Built-in defaults (= the desk toy scale). "paper" documents the full-scale
// run configuration without claiming to reproduce it.
ExperimentConfig defaults();
void apply_preset(ExperimentConfig& cfg, const std::string& name);

// Applies a parsed TOML table; every key must be in the schema and well
// typed, otherwise a configuration error names the offending key.
void apply_table(ExperimentConfig& cfg, const toml::Table& table);

// Full load path: defaults -> preset (CLI wins over the file's run.preset)
// -> config file values. Does not validate; CLI overrides come after.
ExperimentConfig load(const std::string& config_path,
                      const std::string& cli_preset);

// Reconstructs a config from a resolved echo (e.g. a checkpoint's config
// record). The echo lists every schema key, so no preset pass is needed.
ExperimentConfig from_resolved(const std::string& toml_text);

// Complete key-for-key echo of the resolved configuration.
std::string resolved_toml(const ExperimentConfig& cfg);
void write_resolved(const ExperimentConfig& cfg,
                    const std::filesystem::path& out_dir);

}  // namespace config
}  // namespace unime

#endif  // UNIME_CONFIG_HPP_
