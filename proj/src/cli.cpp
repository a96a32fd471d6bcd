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

#include "unime/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>

#include "unime/data_synth.hpp"
#include "unime/masking.hpp"
#include "unime/metrics.hpp"
#include "unime/optimization.hpp"
#include "unime/parallel.hpp"
#include "unime/pretrain.hpp"

namespace unime {
namespace cli {
namespace fs = std::filesystem;

namespace {

// Independent named rng streams (distinct mix64 tags, see pretrain.cpp).
constexpr uint64_t kCaseStream = 0x6E0D;
constexpr uint64_t kInitStream = 0x2417;
constexpr uint64_t kPickStream = 0x5801;
constexpr uint64_t kAugStream = 0x5802;
constexpr uint64_t kDeltaStream = 0x5803;

std::array<int, 3> token_grid(const config::ExperimentConfig& cfg) {
  return {cfg.augment.crop[0] / cfg.encoder.patch,
          cfg.augment.crop[1] / cfg.encoder.patch,
          cfg.augment.crop[2] / cfg.encoder.patch};
}

// Mean over the three region averages, in percent.
double mean_dsc(const evaluation::ProtocolReport& rep) {
  return (rep.avg_dsc[0] + rep.avg_dsc[1] + rep.avg_dsc[2]) / 3.0;
}

}  // namespace

void gen_dataset(const config::ExperimentConfig& cfg, bool force) {
  cfg.validate();
  const fs::path out = cfg.run.out;
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!force) {
      throw DataError("output directory '" + out.string() +
                      "' is not empty (pass --force to overwrite)");
    }
    fs::remove_all(out);
  }
  fs::create_directories(out);

  const int64_t n = cfg.data.n_cases;
  const auto counts = data_synth::split_counts(n);
  data_synth::DatasetManifest m;
  m.root = out;
  for (int64_t i = 0; i < n; ++i) {
    auto c = data_synth::generate_case(
        mix64(cfg.run.seed, kCaseStream, (uint64_t)i), cfg.data.dims,
        cfg.data.phantom, cfg.encoder.patch);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "case_%04lld", (long long)i);
    c.case_id = buf;
    c.spacing = cfg.data.spacing;
    data_synth::write_case(c, out / c.case_id);
    if (i < counts.train) {
      m.train.push_back(c.case_id);
    } else if (i < counts.train + counts.val) {
      m.val.push_back(c.case_id);
    } else {
      m.test.push_back(c.case_id);
    }
  }
  data_synth::write_manifest(m, cfg.run.seed);

  // The echoed config points data.dir at the dataset it describes.
  config::ExperimentConfig echo = cfg;
  echo.data.dir = out.string();
  config::write_resolved(echo, out);
}

void transfer_stage1(ParamStore<float>& ps, const checkpoint::Loaded& stage1,
                     const uni_encoder::UniEncoderConfig& enc_cfg) {
  if (stage1.manifest.stage != "stage1") {
    throw ConfigError("weight transfer requires a stage-1 checkpoint (found "
                      "stage '" +
                      stage1.manifest.stage + "')");
  }
  const auto src = config::from_resolved(stage1.manifest.config_toml);

  std::string report;
  auto check_key = [&report](const char* key, auto got, auto want) {
    if (got != want) {
      report += "\n  encoder." + std::string(key) + ": checkpoint has " +
                std::to_string(got) + ", configured " + std::to_string(want);
    }
  };
  check_key("patch", src.encoder.patch, enc_cfg.patch);
  check_key("d_embed", src.encoder.d_embed, enc_cfg.d_embed);
  check_key("layers", src.encoder.layers, enc_cfg.layers);
  check_key("heads", src.encoder.heads, enc_cfg.heads);
  check_key("n_reg", src.encoder.n_reg, enc_cfg.n_reg);
  check_key("rope_base", src.encoder.rope_base, enc_cfg.rope_base);
  if (!report.empty()) {
    throw ConfigError(
        "stage-1 checkpoint is incompatible with the configured encoder:" +
        report);
  }

  for (const auto& entry : stage1.manifest.tensors) {
    if (entry.name.rfind("aux_decoder.", 0) == 0) continue;  // stage-1 only
    const bool expected = entry.name.rfind("uni_encoder.", 0) == 0 ||
                          entry.name == "mask_tokens";
    if (!expected) {
      throw ConfigError("unexpected tensor '" + entry.name +
                        "' in stage-1 checkpoint");
    }
    Parameter<float>* p = ps.find(entry.name);
    if (!p) {
      throw ConfigError("stage-2 store has no tensor '" + entry.name +
                        "' to receive the transferred weights");
    }
    const Tensor<float>& value = stage1.tensors.at(entry.name);
    if (p->value.shape != value.shape) {
      if (entry.name == "uni_encoder.lpe") {
        throw ConfigError(
            "stage-1 checkpoint was trained at a different crop: positional "
            "table has " +
            std::to_string(value.shape[0]) + " rows, this run needs " +
            std::to_string(p->value.shape[0]));
      }
      throw ConfigError("shape mismatch for transferred tensor '" +
                        entry.name + "'");
    }
    p->value = value;
    p->init_src = "pretrained";
  }
}

std::vector<data_synth::MultimodalCase> crop_cases(
    std::vector<data_synth::MultimodalCase> cases, std::array<int, 3> crop) {
  for (auto& c : cases) {
    if (c.volumes.shape[1] != crop[0] || c.volumes.shape[2] != crop[1] ||
        c.volumes.shape[3] != crop[2]) {
      c = data_synth::center_crop(c, crop);
    }
  }
  return cases;
}

evaluation::SegmentFn make_segment_fn(ParamStore<float>& ps,
                                      const config::ExperimentConfig& cfg,
                                      seg_network::Arch arch) {
  const uni_encoder::UniEncoderConfig enc = cfg.encoder;
  const std::array<int, 3> crop = cfg.augment.crop;
  return [&ps, enc, crop, arch](const data_synth::MultimodalCase& c,
                                const masking::Delta& delta) {
    check_contract(c.volumes.shape[1] == crop[0] &&
                       c.volumes.shape[2] == crop[1] &&
                       c.volumes.shape[3] == crop[2],
                   "inference input dims must equal the training crop");
    Tape<float> t(/*grad_enabled=*/false);
    Val x = t.constant(c.volumes);
    const auto out =
        seg_network::segment(t, ps, enc, arch, x, delta, /*train_mode=*/false);
    return evaluation::argmax_labels(t.val(out.main_logits));
  };
}

FinetuneResult run_finetune(const config::ExperimentConfig& cfg) {
  cfg.validate();
  check_config(!cfg.data.dir.empty(), "data.dir must be set for fine-tuning");
  const auto arch = seg_network::parse_arch(cfg.finetune.arch);

  const auto manifest = data_synth::read_manifest(cfg.data.dir);
  const auto train = data_synth::load_split(manifest, "train");
  if (train.empty())
    throw DataError("fine-tuning requires a non-empty train split");
  const auto val =
      crop_cases(data_synth::load_split(manifest, "val"), cfg.augment.crop);

  optimization::ScheduleConfig sched = cfg.optim;
  sched.total_steps = cfg.finetune.steps;
  sched.llrd_depth = cfg.encoder.layers;
  sched.validate();

  ParamStore<float> ps;
  Rng init_rng(mix64(cfg.run.seed, kInitStream));
  seg_network::init_stage2_params(ps, arch, cfg.encoder, token_grid(cfg),
                                  init_rng);
  for (Parameter<float>* p : ps.all()) p->init_src = "scratch";

  const bool wants_transfer =
      arch != seg_network::Arch::kMultiOnly && !cfg.finetune.from_scratch;
  if (wants_transfer) {
    check_config(!cfg.finetune.init_from.empty(),
                 "finetune.init_from must name a stage-1 checkpoint "
                 "(or pass --from-scratch)");
    transfer_stage1(ps, checkpoint::load(cfg.finetune.init_from), cfg.encoder);
  }

  const fs::path out = cfg.run.out;
  const fs::path ckpt_root = out / "checkpoints";
  fs::create_directories(ckpt_root);

  optimization::AdamW<float> opt;
  int64_t start_step = 0;
  if (fs::exists(ckpt_root / "last" / "manifest.json")) {
    const auto loaded = checkpoint::load(ckpt_root / "last");
    if (loaded.manifest.stage != "stage2") {
      throw ConfigError("cannot resume fine-tuning from a " +
                        loaded.manifest.stage + " checkpoint");
    }
    checkpoint::assign_into(ps, loaded, (ckpt_root / "last").string());
    start_step = loaded.manifest.step;
    opt.set_steps_taken(start_step);
  }

  FinetuneResult res;
  res.last_checkpoint = ckpt_root / "last";
  res.best_checkpoint = ckpt_root / "best";
  if (start_step >= cfg.finetune.steps) {
    res.steps_run = start_step;
    if (!fs::exists(res.best_checkpoint / "manifest.json"))
      res.best_checkpoint = res.last_checkpoint;
    return res;
  }

  const std::string echo = config::resolved_toml(cfg);
  MetricsWriter metrics(out / "metrics.csv");

  const int64_t batch = cfg.finetune.batch_size;
  double best_dsc = -std::numeric_limits<double>::infinity();
  bool saved_best = false;

  for (int64_t step = start_step; step < cfg.finetune.steps; ++step) {
    ps.zero_grad();
    double loss_sum = 0.0;
    for (int64_t b = 0; b < batch; ++b) {
      const uint64_t sample = (uint64_t)(step * batch + b);
      Rng pick(mix64(cfg.run.seed, kPickStream, sample));
      const auto& base = train[pick.uniform_int(0, (int64_t)train.size() - 1)];
      const auto aug = data_synth::augment(
          base, mix64(cfg.run.seed, kAugStream, sample), cfg.augment);
      Rng delta_rng(mix64(cfg.run.seed, kDeltaStream, sample));
      const auto delta = masking::sample_stage2_delta(delta_rng);

      Tape<float> tape;
      Val x = tape.constant(aug.volumes);
      auto seg = seg_network::segment(tape, ps, cfg.encoder, arch, x, delta,
                                      /*train_mode=*/true);
      auto labels = std::make_shared<const Tensor<uint8_t>>(aug.labels);
      std::vector<Val> aux;
      aux.reserve(seg.aux_logits.size());
      for (const auto& [mod, v] : seg.aux_logits) aux.push_back(v);
      Val loss = optimization::total_loss(tape, seg.main_logits,
                                          seg.deep_logits, aux, labels,
                                          cfg.loss);
      const double lv = (double)tape.val(loss).data[0];
      if (!std::isfinite(lv)) {
        throw NumericalError("fine-tuning diverged: non-finite loss at step " +
                             std::to_string(step));
      }
      loss_sum += lv;
      tape.backward(loss);
    }
    if (batch > 1) {
      const float inv = 1.0f / (float)batch;
      for (Parameter<float>* p : ps.all())
        for (auto& gv : p->grad.data) gv *= inv;
    }
    const double loss = loss_sum / (double)batch;
    const double lr = optimization::lr_at_step(step, sched);
    opt.step(ps, sched, lr);
    metrics.append(step, loss, lr);

    if (step == 0) res.step0_loss = loss;
    res.final_loss = loss;
    res.steps_run = step + 1;

    const bool at_end = step + 1 == cfg.finetune.steps;
    if ((step + 1) % cfg.finetune.checkpoint_every == 0 || at_end)
      checkpoint::save(ckpt_root / "last", ps, "stage2", step + 1, echo);
    if (!val.empty() &&
        ((step + 1) % cfg.finetune.eval_every == 0 || at_end)) {
      const auto fn = make_segment_fn(ps, cfg, arch);
      const auto rep =
          evaluation::evaluate_protocol(val, fn, cfg.eval.hd_percentile);
      const double dsc = mean_dsc(rep);
      if (dsc > best_dsc) {
        best_dsc = dsc;
        checkpoint::save(ckpt_root / "best", ps, "stage2", step + 1, echo);
        saved_best = true;
      }
      res.has_val = true;
      res.best_val_dsc = best_dsc;
    }
  }
  if (!saved_best) res.best_checkpoint = res.last_checkpoint;
  return res;
}

evaluation::ProtocolReport run_eval(const config::ExperimentConfig& cfg) {
  cfg.validate();
  check_config(!cfg.data.dir.empty(), "data.dir must be set for evaluation");
  check_config(!cfg.eval.checkpoint.empty(),
               "eval.checkpoint must name a stage-2 checkpoint");

  const auto loaded = checkpoint::load(cfg.eval.checkpoint);
  if (loaded.manifest.stage != "stage2") {
    throw ConfigError("evaluation requires a stage-2 checkpoint (found "
                      "stage '" +
                      loaded.manifest.stage + "')");
  }
  // The checkpoint's config record pins the architecture, encoder shape,
  // and crop; the live config supplies data + report settings.
  const auto ckpt_cfg = config::from_resolved(loaded.manifest.config_toml);
  const auto arch = seg_network::parse_arch(ckpt_cfg.finetune.arch);

  ParamStore<float> ps;
  Rng init_rng(0);  // overwritten below
  seg_network::init_stage2_params(ps, arch, ckpt_cfg.encoder,
                                  token_grid(ckpt_cfg), init_rng);
  checkpoint::assign_into(ps, loaded, cfg.eval.checkpoint);

  const auto manifest = data_synth::read_manifest(cfg.data.dir);
  auto cases =
      crop_cases(data_synth::load_split(manifest, "test"), ckpt_cfg.augment.crop);

  const auto fn = make_segment_fn(ps, ckpt_cfg, arch);
  const auto report =
      evaluation::evaluate_protocol(cases, fn, cfg.eval.hd_percentile);

  const fs::path out = cfg.run.out;
  fs::create_directories(out);
  evaluation::write_csv(report, out / "report.csv");
  evaluation::write_markdown(report, out / "report.md");
  if (cfg.eval.write_jsonl)
    evaluation::write_jsonl(report, out / "report.jsonl");
  return report;
}

namespace {

// --force on a training command discards previous progress so the run
// starts from step 0 instead of resuming.
void wipe_training_outputs(const fs::path& out) {
  fs::remove_all(out / "checkpoints");
  fs::remove(out / "metrics.csv");
}

}  // namespace

int run_main(int argc, const char* const* argv) {
  try {
    CLI::App app{"Two-stage multimodal segmentation pipeline on synthetic "
                 "phantoms (CPU)"};
    app.require_subcommand(1);

    struct Opts {
      std::string config, out, preset, arch;
      uint64_t seed = 0;
      bool deterministic = false;
      bool freeze_uni = false;
      bool from_scratch = false;
      bool force = false;
    } o;

    auto add_common = [&o](CLI::App* c) {
      c->add_option("--config", o.config, "TOML experiment config");
      c->add_option("--seed", o.seed, "override run.seed");
      c->add_option("--out", o.out, "override run.out (output directory)");
      c->add_flag("--deterministic", o.deterministic,
                  "bit-reproducible mode (execution is deterministic either "
                  "way; accepted for compatibility)");
      c->add_option("--preset", o.preset, "config preset: desk or paper");
    };

    CLI::App* gen =
        app.add_subcommand("gen-data", "synthesize a phantom dataset");
    add_common(gen);
    gen->add_flag("--force", o.force, "overwrite a non-empty directory");

    CLI::App* pre =
        app.add_subcommand("pretrain", "stage-1 masked pretraining");
    add_common(pre);
    pre->add_flag("--force", o.force, "discard previous run state");

    CLI::App* fin = app.add_subcommand(
        "finetune", "stage-2 fine-tuning from a stage-1 checkpoint");
    add_common(fin);
    fin->add_flag("--force", o.force, "discard previous run state");
    fin->add_option("--arch", o.arch,
                    "network variant: full | multi-only | uni-only");
    fin->add_flag("--freeze-uni", o.freeze_uni,
                  "freeze the transferred encoder (lr group 0)");
    fin->add_flag("--from-scratch", o.from_scratch,
                  "skip stage-1 weight transfer");

    CLI::App* ev =
        app.add_subcommand("eval", "15-subset missing-modality protocol");
    add_common(ev);

    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : 2;
    }

    CLI::App* cmd = app.get_subcommands().at(0);
    const std::string name = cmd->get_name();

    auto passed = [cmd](const char* flag) {
      const CLI::Option* opt = cmd->get_option_no_throw(flag);
      return opt != nullptr && opt->count() > 0;
    };
    config::ExperimentConfig cfg = config::load(o.config, o.preset);
    if (passed("--seed")) cfg.run.seed = o.seed;
    if (passed("--out")) cfg.run.out = o.out;
    if (passed("--deterministic")) cfg.run.deterministic = true;
    if (passed("--arch")) cfg.finetune.arch = o.arch;
    if (passed("--freeze-uni")) cfg.optim.freeze_uni = true;
    if (passed("--from-scratch")) cfg.finetune.from_scratch = true;

    par::init_from_env();
    cfg.validate();
    const fs::path out = cfg.run.out;

    if (name == "gen-data") {
      gen_dataset(cfg, o.force);
      const auto m = data_synth::read_manifest(out);
      std::printf("gen-data: %lld cases (train/val/test = %zu/%zu/%zu) in %s\n",
                  (long long)cfg.data.n_cases, m.train.size(), m.val.size(),
                  m.test.size(), out.string().c_str());
    } else if (name == "pretrain") {
      if (o.force) wipe_training_outputs(out);
      fs::create_directories(out);
      config::write_resolved(cfg, out);
      const auto r = pretrain::run_pretraining(cfg);
      std::printf("pretrain: %lld steps, loss %.6g -> %.6g, last checkpoint %s\n",
                  (long long)r.steps_run, r.step0_loss, r.final_loss,
                  r.last_checkpoint.string().c_str());
    } else if (name == "finetune") {
      if (o.force) wipe_training_outputs(out);
      fs::create_directories(out);
      config::write_resolved(cfg, out);
      const auto r = run_finetune(cfg);
      if (r.has_val) {
        std::printf(
            "finetune: %lld steps, loss %.6g -> %.6g, best val DSC %.2f%%\n",
            (long long)r.steps_run, r.step0_loss, r.final_loss,
            r.best_val_dsc);
      } else {
        std::printf("finetune: %lld steps, loss %.6g -> %.6g (no val split)\n",
                    (long long)r.steps_run, r.step0_loss, r.final_loss);
      }
    } else {  // eval
      fs::create_directories(out);
      config::write_resolved(cfg, out);
      const auto rep = run_eval(cfg);
      std::printf(
          "eval: avg DSC WT/TC/ET = %.2f/%.2f/%.2f, avg HD95 = "
          "%.2f/%.2f/%.2f, reports in %s\n",
          rep.avg_dsc[0], rep.avg_dsc[1], rep.avg_dsc[2], rep.avg_hd95[0],
          rep.avg_hd95[1], rep.avg_hd95[2], out.string().c_str());
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace cli
}  // namespace unime
