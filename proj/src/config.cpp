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

#include "unime/config.hpp"

#include <fstream>
#include <functional>

#include "unime/errors.hpp"

namespace unime {
namespace config {

namespace {

using toml::Value;

// One schema row per config key: how to read it from a table and how to echo
// it back. The schema is the single source of truth for known keys.
struct KeySpec {
  std::string key;
  std::function<void(ExperimentConfig&, const Value&)> set;
  std::function<Value(const ExperimentConfig&)> get;
};

Value int3(const std::array<int, 3>& a) {
  return Value::of_array(
      {Value::of_int(a[0]), Value::of_int(a[1]), Value::of_int(a[2])});
}
Value float_arr(const double* a, size_t n) {
  std::vector<Value> items;
  for (size_t i = 0; i < n; ++i) items.push_back(Value::of_float(a[i]));
  return Value::of_array(std::move(items));
}

std::array<int, 3> to_int3(const Value& v, const std::string& key) {
  const auto a = v.as_int_array(key, 3);
  return {(int)a[0], (int)a[1], (int)a[2]};
}

const std::vector<KeySpec>& schema() {
  using C = ExperimentConfig;
  static const std::vector<KeySpec> kSchema = {
      {"schema_version",
       [](C&, const Value& v) {
         check_config(v.as_int("schema_version") == kSchemaVersion,
                      "unsupported schema_version (expected " +
                          std::to_string(kSchemaVersion) + ")");
       },
       [](const C&) { return Value::of_int(kSchemaVersion); }},

      {"run.seed",
       [](C& c, const Value& v) { c.run.seed = (uint64_t)v.as_int("run.seed"); },
       [](const C& c) { return Value::of_int((int64_t)c.run.seed); }},
      {"run.out",
       [](C& c, const Value& v) { c.run.out = v.as_string("run.out"); },
       [](const C& c) { return Value::of_string(c.run.out); }},
      {"run.deterministic",
       [](C& c, const Value& v) {
         c.run.deterministic = v.as_bool("run.deterministic");
       },
       [](const C& c) { return Value::of_bool(c.run.deterministic); }},
      {"run.preset",
       [](C& c, const Value& v) { c.run.preset = v.as_string("run.preset"); },
       [](const C& c) { return Value::of_string(c.run.preset); }},
      {"run.device",
       [](C& c, const Value& v) { c.run.device = v.as_string("run.device"); },
       [](const C& c) { return Value::of_string(c.run.device); }},

      {"data.dir",
       [](C& c, const Value& v) { c.data.dir = v.as_string("data.dir"); },
       [](const C& c) { return Value::of_string(c.data.dir); }},
      {"data.n_cases",
       [](C& c, const Value& v) { c.data.n_cases = v.as_int("data.n_cases"); },
       [](const C& c) { return Value::of_int(c.data.n_cases); }},
      {"data.dims",
       [](C& c, const Value& v) { c.data.dims = to_int3(v, "data.dims"); },
       [](const C& c) { return int3(c.data.dims); }},
      {"data.spacing",
       [](C& c, const Value& v) {
         const auto a = v.as_float_array("data.spacing", 3);
         c.data.spacing = {a[0], a[1], a[2]};
       },
       [](const C& c) { return float_arr(c.data.spacing.data(), 3); }},
      {"data.min_lesions",
       [](C& c, const Value& v) {
         c.data.phantom.min_lesions = (int)v.as_int("data.min_lesions");
       },
       [](const C& c) { return Value::of_int(c.data.phantom.min_lesions); }},
      {"data.max_lesions",
       [](C& c, const Value& v) {
         c.data.phantom.max_lesions = (int)v.as_int("data.max_lesions");
       },
       [](const C& c) { return Value::of_int(c.data.phantom.max_lesions); }},
      {"data.noise_sigma",
       [](C& c, const Value& v) {
         c.data.phantom.noise_sigma = v.as_float("data.noise_sigma");
       },
       [](const C& c) { return Value::of_float(c.data.phantom.noise_sigma); }},

      {"augment.crop",
       [](C& c, const Value& v) { c.augment.crop = to_int3(v, "augment.crop"); },
       [](const C& c) { return int3(c.augment.crop); }},
      {"augment.flip_p",
       [](C& c, const Value& v) {
         c.augment.flip_p = v.as_float("augment.flip_p");
       },
       [](const C& c) { return Value::of_float(c.augment.flip_p); }},
      {"augment.rot90",
       [](C& c, const Value& v) { c.augment.rot90 = v.as_bool("augment.rot90"); },
       [](const C& c) { return Value::of_bool(c.augment.rot90); }},
      {"augment.intensity_scale",
       [](C& c, const Value& v) {
         c.augment.intensity_scale = v.as_float("augment.intensity_scale");
       },
       [](const C& c) { return Value::of_float(c.augment.intensity_scale); }},
      {"augment.intensity_shift",
       [](C& c, const Value& v) {
         c.augment.intensity_shift = v.as_float("augment.intensity_shift");
       },
       [](const C& c) { return Value::of_float(c.augment.intensity_shift); }},

      {"mask.p",
       [](C& c, const Value& v) {
         const auto a = v.as_float_array("mask.p", 4);
         std::copy(a.begin(), a.end(), c.mask.p.begin());
       },
       [](const C& c) { return float_arr(c.mask.p.data(), 4); }},
      {"mask.q",
       [](C& c, const Value& v) {
         const auto a = v.as_float_array("mask.q", 4);
         std::copy(a.begin(), a.end(), c.mask.q.begin());
       },
       [](const C& c) { return float_arr(c.mask.q.data(), 4); }},
      {"mask.stage2_subset_distribution",
       [](C& c, const Value& v) {
         c.mask.stage2_subset_distribution =
             v.as_string("mask.stage2_subset_distribution");
       },
       [](const C& c) {
         return Value::of_string(c.mask.stage2_subset_distribution);
       }},

      {"encoder.scale",
       [](C& c, const Value& v) {
         c.encoder_scale = v.as_string("encoder.scale");
       },
       [](const C& c) { return Value::of_string(c.encoder_scale); }},
      {"encoder.patch",
       [](C& c, const Value& v) {
         c.encoder.patch = (int)v.as_int("encoder.patch");
       },
       [](const C& c) { return Value::of_int(c.encoder.patch); }},
      {"encoder.d_embed",
       [](C& c, const Value& v) {
         c.encoder.d_embed = (int)v.as_int("encoder.d_embed");
       },
       [](const C& c) { return Value::of_int(c.encoder.d_embed); }},
      {"encoder.layers",
       [](C& c, const Value& v) {
         c.encoder.layers = (int)v.as_int("encoder.layers");
       },
       [](const C& c) { return Value::of_int(c.encoder.layers); }},
      {"encoder.heads",
       [](C& c, const Value& v) {
         c.encoder.heads = (int)v.as_int("encoder.heads");
       },
       [](const C& c) { return Value::of_int(c.encoder.heads); }},
      {"encoder.n_reg",
       [](C& c, const Value& v) {
         c.encoder.n_reg = (int)v.as_int("encoder.n_reg");
       },
       [](const C& c) { return Value::of_int(c.encoder.n_reg); }},
      {"encoder.rope_base",
       [](C& c, const Value& v) {
         c.encoder.rope_base = v.as_float("encoder.rope_base");
       },
       [](const C& c) { return Value::of_float(c.encoder.rope_base); }},

      {"pretrain.steps",
       [](C& c, const Value& v) { c.pretrain.steps = v.as_int("pretrain.steps"); },
       [](const C& c) { return Value::of_int(c.pretrain.steps); }},
      {"pretrain.batch_size",
       [](C& c, const Value& v) {
         c.pretrain.batch_size = v.as_int("pretrain.batch_size");
       },
       [](const C& c) { return Value::of_int(c.pretrain.batch_size); }},
      {"pretrain.eval_every",
       [](C& c, const Value& v) {
         c.pretrain.eval_every = v.as_int("pretrain.eval_every");
       },
       [](const C& c) { return Value::of_int(c.pretrain.eval_every); }},
      {"pretrain.checkpoint_every",
       [](C& c, const Value& v) {
         c.pretrain.checkpoint_every = v.as_int("pretrain.checkpoint_every");
       },
       [](const C& c) { return Value::of_int(c.pretrain.checkpoint_every); }},
      {"pretrain.mask_reg_weight",
       [](C& c, const Value& v) {
         c.pretrain.mask_reg_weight = v.as_float("pretrain.mask_reg_weight");
       },
       [](const C& c) { return Value::of_float(c.pretrain.mask_reg_weight); }},

      {"finetune.steps",
       [](C& c, const Value& v) { c.finetune.steps = v.as_int("finetune.steps"); },
       [](const C& c) { return Value::of_int(c.finetune.steps); }},
      {"finetune.batch_size",
       [](C& c, const Value& v) {
         c.finetune.batch_size = v.as_int("finetune.batch_size");
       },
       [](const C& c) { return Value::of_int(c.finetune.batch_size); }},
      {"finetune.eval_every",
       [](C& c, const Value& v) {
         c.finetune.eval_every = v.as_int("finetune.eval_every");
       },
       [](const C& c) { return Value::of_int(c.finetune.eval_every); }},
      {"finetune.checkpoint_every",
       [](C& c, const Value& v) {
         c.finetune.checkpoint_every = v.as_int("finetune.checkpoint_every");
       },
       [](const C& c) { return Value::of_int(c.finetune.checkpoint_every); }},
      {"finetune.arch",
       [](C& c, const Value& v) { c.finetune.arch = v.as_string("finetune.arch"); },
       [](const C& c) { return Value::of_string(c.finetune.arch); }},
      {"finetune.from_scratch",
       [](C& c, const Value& v) {
         c.finetune.from_scratch = v.as_bool("finetune.from_scratch");
       },
       [](const C& c) { return Value::of_bool(c.finetune.from_scratch); }},
      {"finetune.init_from",
       [](C& c, const Value& v) {
         c.finetune.init_from = v.as_string("finetune.init_from");
       },
       [](const C& c) { return Value::of_string(c.finetune.init_from); }},

      {"optim.base_lr",
       [](C& c, const Value& v) { c.optim.base_lr = v.as_float("optim.base_lr"); },
       [](const C& c) { return Value::of_float(c.optim.base_lr); }},
      {"optim.start_lr",
       [](C& c, const Value& v) { c.optim.start_lr = v.as_float("optim.start_lr"); },
       [](const C& c) { return Value::of_float(c.optim.start_lr); }},
      {"optim.end_lr",
       [](C& c, const Value& v) { c.optim.end_lr = v.as_float("optim.end_lr"); },
       [](const C& c) { return Value::of_float(c.optim.end_lr); }},
      {"optim.warmup_fraction",
       [](C& c, const Value& v) {
         c.optim.warmup_fraction = v.as_float("optim.warmup_fraction");
       },
       [](const C& c) { return Value::of_float(c.optim.warmup_fraction); }},
      {"optim.weight_decay",
       [](C& c, const Value& v) {
         c.optim.weight_decay = v.as_float("optim.weight_decay");
       },
       [](const C& c) { return Value::of_float(c.optim.weight_decay); }},
      {"optim.llrd_omega",
       [](C& c, const Value& v) {
         c.optim.llrd_omega = v.as_float("optim.llrd_omega");
       },
       [](const C& c) { return Value::of_float(c.optim.llrd_omega); }},
      {"optim.freeze_uni_encoder",
       [](C& c, const Value& v) {
         c.optim.freeze_uni = v.as_bool("optim.freeze_uni_encoder");
       },
       [](const C& c) { return Value::of_bool(c.optim.freeze_uni); }},
      {"optim.grad_clip",
       [](C& c, const Value& v) { c.optim.grad_clip = v.as_float("optim.grad_clip"); },
       [](const C& c) { return Value::of_float(c.optim.grad_clip); }},
      {"optim.class_weights",
       [](C& c, const Value& v) {
         const auto a = v.as_float_array("optim.class_weights", 4);
         std::copy(a.begin(), a.end(), c.loss.class_weights.begin());
       },
       [](const C& c) { return float_arr(c.loss.class_weights.data(), 4); }},
      {"optim.dice_smooth",
       [](C& c, const Value& v) {
         c.loss.dice_smooth = v.as_float("optim.dice_smooth");
       },
       [](const C& c) { return Value::of_float(c.loss.dice_smooth); }},

      {"eval.checkpoint",
       [](C& c, const Value& v) {
         c.eval.checkpoint = v.as_string("eval.checkpoint");
       },
       [](const C& c) { return Value::of_string(c.eval.checkpoint); }},
      {"eval.hd_percentile",
       [](C& c, const Value& v) {
         c.eval.hd_percentile = v.as_float("eval.hd_percentile");
       },
       [](const C& c) { return Value::of_float(c.eval.hd_percentile); }},
      {"eval.write_jsonl",
       [](C& c, const Value& v) {
         c.eval.write_jsonl = v.as_bool("eval.write_jsonl");
       },
       [](const C& c) { return Value::of_bool(c.eval.write_jsonl); }},
  };
  return kSchema;
}

const KeySpec* find_spec(const std::string& key) {
  for (const KeySpec& spec : schema())
    if (spec.key == key) return &spec;
  return nullptr;
}

}  // namespace

ExperimentConfig defaults() { return ExperimentConfig{}; }

void apply_preset(ExperimentConfig& cfg, const std::string& name) {
  if (name.empty()) return;
  if (name == "desk") {
    cfg.run.preset = "desk";
    cfg.data.n_cases = 8;
    cfg.data.dims = {16, 16, 16};
    cfg.augment.crop = {16, 16, 16};
    cfg.encoder_scale = "custom";
    cfg.encoder.patch = 8;
    cfg.encoder.d_embed = 96;
    cfg.encoder.layers = 4;
    cfg.encoder.heads = 6;
    cfg.encoder.n_reg = 4;
    cfg.pretrain.steps = 500;
    cfg.pretrain.batch_size = 1;
    cfg.pretrain.eval_every = 100;
    cfg.pretrain.checkpoint_every = 100;
    cfg.finetune.steps = 2000;
    cfg.finetune.batch_size = 1;
    cfg.finetune.eval_every = 200;
    cfg.finetune.checkpoint_every = 200;
  } else if (name == "paper") {
    // Documents the full-scale configuration; not runnable at desk scale.
    cfg.run.preset = "paper";
    cfg.data.n_cases = 1251;
    cfg.data.dims = {96, 96, 96};
    cfg.augment.crop = {96, 96, 96};
    cfg.encoder_scale = "base";
    cfg.encoder = uni_encoder::scale_preset("base");
    cfg.pretrain.steps = 150000;  // 600 epochs x 250 iterations
    cfg.pretrain.batch_size = 4;
    cfg.pretrain.eval_every = 2500;
    cfg.pretrain.checkpoint_every = 2500;
    cfg.finetune.steps = 150000;
    cfg.finetune.batch_size = 4;
    cfg.finetune.eval_every = 2500;
    cfg.finetune.checkpoint_every = 2500;
  } else {
    throw ConfigError("unknown preset: " + name + " (expected desk or paper)");
  }
}

void apply_table(ExperimentConfig& cfg, const toml::Table& table) {
  for (const auto& [key, value] : table) {
    (void)value;
    if (!find_spec(key)) throw ConfigError("unknown config key: " + key);
  }
  // The scale preset applies before explicit encoder dims so that explicit
  // keys win regardless of their order in the file.
  if (auto it = table.find("encoder.scale"); it != table.end()) {
    const std::string scale = it->second.as_string("encoder.scale");
    check_config(scale == "custom" || scale == "small" || scale == "base" ||
                     scale == "large",
                 "encoder.scale must be custom/small/base/large");
    cfg.encoder_scale = scale;
    if (scale != "custom") {
      const int patch = cfg.encoder.patch;
      const int n_reg = cfg.encoder.n_reg;
      const double rope_base = cfg.encoder.rope_base;
      cfg.encoder = uni_encoder::scale_preset(scale);
      cfg.encoder.patch = patch;
      cfg.encoder.n_reg = n_reg;
      cfg.encoder.rope_base = rope_base;
    }
  }
  for (const auto& [key, value] : table) {
    if (key == "encoder.scale") continue;
    find_spec(key)->set(cfg, value);
  }
}

ExperimentConfig load(const std::string& config_path,
                      const std::string& cli_preset) {
  toml::Table table;
  if (!config_path.empty()) table = toml::parse_file(config_path);
  std::string preset = cli_preset;
  if (preset.empty())
    if (auto it = table.find("run.preset"); it != table.end())
      preset = it->second.as_string("run.preset");
  ExperimentConfig cfg = defaults();
  apply_preset(cfg, preset);
  apply_table(cfg, table);
  cfg.run.preset = preset;
  return cfg;
}

ExperimentConfig from_resolved(const std::string& toml_text) {
  ExperimentConfig cfg = defaults();
  apply_table(cfg, toml::parse(toml_text));
  return cfg;
}

void ExperimentConfig::validate() const {
  check_config(!run.out.empty(), "run.out (or --out) must be set");
  check_config(data.n_cases >= 1, "data.n_cases must be >= 1");
  for (int a = 0; a < 3; ++a) {
    check_config(data.dims[a] >= 1 && data.dims[a] % encoder.patch == 0,
                 "data.dims must be positive and divisible by encoder.patch");
    check_config(augment.crop[a] >= 1 &&
                     augment.crop[a] % encoder.patch == 0,
                 "augment.crop must be positive and divisible by "
                 "encoder.patch");
    check_config(data.spacing[a] > 0.0, "data.spacing must be positive");
  }
  for (double v : mask.p)
    check_config(v >= 0.0 && v <= 1.0, "mask.p entries must lie in [0, 1]");
  for (double v : mask.q)
    check_config(v >= 0.0 && v <= 1.0, "mask.q entries must lie in [0, 1]");
  check_config(mask.stage2_subset_distribution == "uniform",
               "mask.stage2_subset_distribution: only 'uniform' is supported");
  encoder.validate();
  check_config(encoder_scale == "custom" || encoder_scale == "small" ||
                   encoder_scale == "base" || encoder_scale == "large",
               "encoder.scale must be custom/small/base/large");
  for (const StageConfig* stage :
       {(const StageConfig*)&pretrain, (const StageConfig*)&finetune}) {
    check_config(stage->steps >= 1, "training steps must be >= 1");
    check_config(stage->batch_size >= 1, "batch_size must be >= 1");
    check_config(stage->eval_every >= 1 && stage->checkpoint_every >= 1,
                 "eval_every/checkpoint_every must be >= 1");
  }
  check_config(pretrain.mask_reg_weight >= 0.0,
               "pretrain.mask_reg_weight must be >= 0");
  check_config(finetune.arch == "full" || finetune.arch == "multi-only" ||
                   finetune.arch == "uni-only",
               "finetune.arch must be full, multi-only, or uni-only");
  loss.validate();
  optimization::ScheduleConfig sched = optim;
  sched.total_steps = 1;  // filled per stage; validate the rest here
  sched.llrd_depth = encoder.layers;
  sched.validate();
  check_config(eval.hd_percentile > 0.0 && eval.hd_percentile <= 1.0,
               "eval.hd_percentile must lie in (0, 1]");
}

std::string resolved_toml(const ExperimentConfig& cfg) {
  toml::Table table;
  for (const KeySpec& spec : schema()) table[spec.key] = spec.get(cfg);
  return toml::serialize(table);
}

void write_resolved(const ExperimentConfig& cfg,
                    const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto path = out_dir / "config.resolved.toml";
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << resolved_toml(cfg);
}

}  // namespace config
}  // namespace unime
