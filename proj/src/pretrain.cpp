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

#include "unime/pretrain.hpp"

#include <cmath>
#include <limits>

#include "unime/checkpoint.hpp"
#include "unime/metrics.hpp"
#include "unime/optimization.hpp"

namespace unime {
namespace pretrain {
namespace {

// Independent named rng streams; each is a distinct mix64 tag so adding a
// draw to one stream never shifts another.
constexpr uint64_t kInitStream = 0x1417;
constexpr uint64_t kPickStream = 0x5701;
constexpr uint64_t kAugStream = 0x5702;
constexpr uint64_t kMaskStream = 0x5703;
constexpr uint64_t kValMaskStream = 0x5704;

}  // namespace

double validation_loss(ParamStore<float>& ps,
                       const config::ExperimentConfig& cfg,
                       const std::vector<data_synth::MultimodalCase>& cases) {
  check_contract(!cases.empty(), "validation_loss: empty case list");
  const int64_t n_patches = cfg.encoder.token_count(
      {cfg.augment.crop[0] / cfg.encoder.patch,
       cfg.augment.crop[1] / cfg.encoder.patch,
       cfg.augment.crop[2] / cfg.encoder.patch});
  double sum = 0.0;
  for (size_t j = 0; j < cases.size(); ++j) {
    const auto c = data_synth::center_crop(cases[j], cfg.augment.crop);
    Rng mask_rng(mix64(cfg.run.seed, kValMaskStream, (uint64_t)j));
    const auto spec =
        masking::sample_mask_spec(cfg.mask.p, cfg.mask.q, n_patches, mask_rng);
    Tape<float> tape(/*grad_enabled=*/false);
    const auto g = build_stage1_graph(tape, ps, cfg.encoder, c.volumes, spec,
                                      (float)cfg.pretrain.mask_reg_weight);
    sum += (double)tape.val(g.loss).data[0];
  }
  return sum / (double)cases.size();
}

PretrainResult run_pretraining(const config::ExperimentConfig& cfg) {
  cfg.validate();
  check_config(!cfg.data.dir.empty(), "data.dir must be set for pretraining");

  const auto manifest = data_synth::read_manifest(cfg.data.dir);
  const auto train = data_synth::load_split(manifest, "train");
  if (train.empty())
    throw DataError("pretraining requires a non-empty train split");
  const auto val = data_synth::load_split(manifest, "val");

  optimization::ScheduleConfig sched = cfg.optim;
  sched.total_steps = cfg.pretrain.steps;
  sched.llrd_depth = cfg.encoder.layers;
  // Layer-wise decay and encoder freezing are fine-tuning mechanisms; the
  // stage-1 loop always trains every parameter under one lr group.
  sched.llrd_omega = 1.0;
  sched.freeze_uni = false;
  sched.validate();

  const std::array<int, 3> grid = {cfg.augment.crop[0] / cfg.encoder.patch,
                                   cfg.augment.crop[1] / cfg.encoder.patch,
                                   cfg.augment.crop[2] / cfg.encoder.patch};
  ParamStore<float> ps;
  Rng init_rng(mix64(cfg.run.seed, kInitStream));
  uni_encoder::init_params(ps, cfg.encoder, grid, init_rng);
  masking::init_mask_tokens(ps, cfg.encoder.patch, init_rng);
  init_aux_params(ps, cfg.encoder, init_rng);
  for (Parameter<float>* p : ps.all()) p->init_src = "scratch";

  namespace fs = std::filesystem;
  const fs::path out = cfg.run.out;
  const fs::path ckpt_root = out / "checkpoints";
  fs::create_directories(ckpt_root);

  optimization::AdamW<float> opt;
  int64_t start_step = 0;
  if (fs::exists(ckpt_root / "last" / "manifest.json")) {
    const auto loaded = checkpoint::load(ckpt_root / "last");
    if (loaded.manifest.stage != "stage1") {
      throw ConfigError("cannot resume pretraining from a " +
                        loaded.manifest.stage + " checkpoint");
    }
    checkpoint::assign_into(ps, loaded, (ckpt_root / "last").string());
    start_step = loaded.manifest.step;
    opt.set_steps_taken(start_step);
  }

  PretrainResult res;
  res.last_checkpoint = ckpt_root / "last";
  res.best_checkpoint = ckpt_root / "best";
  if (start_step >= cfg.pretrain.steps) {
    res.steps_run = start_step;
    res.has_val = false;
    if (!fs::exists(res.best_checkpoint / "manifest.json"))
      res.best_checkpoint = res.last_checkpoint;
    return res;
  }

  const std::string echo = config::resolved_toml(cfg);
  MetricsWriter metrics(out / "metrics.csv");

  const int64_t n_patches = cfg.encoder.token_count(grid);
  const int64_t batch = cfg.pretrain.batch_size;
  double best_val = std::numeric_limits<double>::infinity();
  bool saved_best = false;

  for (int64_t step = start_step; step < cfg.pretrain.steps; ++step) {
    ps.zero_grad();
    double loss_sum = 0.0;
    for (int64_t b = 0; b < batch; ++b) {
      const uint64_t sample = (uint64_t)(step * batch + b);
      Rng pick(mix64(cfg.run.seed, kPickStream, sample));
      const auto& base = train[pick.uniform_int(0, (int64_t)train.size() - 1)];
      const auto aug = data_synth::augment(
          base, mix64(cfg.run.seed, kAugStream, sample), cfg.augment);
      Rng mask_rng(mix64(cfg.run.seed, kMaskStream, sample));
      const auto spec = masking::sample_mask_spec(cfg.mask.p, cfg.mask.q,
                                                  n_patches, mask_rng);
      Tape<float> tape;
      const auto g = build_stage1_graph(tape, ps, cfg.encoder, aug.volumes,
                                        spec,
                                        (float)cfg.pretrain.mask_reg_weight);
      const double loss = (double)tape.val(g.loss).data[0];
      if (!std::isfinite(loss)) {
        throw NumericalError("pretraining diverged: non-finite loss at step " +
                             std::to_string(step));
      }
      loss_sum += loss;
      tape.backward(g.loss);
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

    const bool at_end = step + 1 == cfg.pretrain.steps;
    if ((step + 1) % cfg.pretrain.checkpoint_every == 0 || at_end)
      checkpoint::save(ckpt_root / "last", ps, "stage1", step + 1, echo);
    if (!val.empty() &&
        ((step + 1) % cfg.pretrain.eval_every == 0 || at_end)) {
      const double v = validation_loss(ps, cfg, val);
      if (v < best_val) {
        best_val = v;
        checkpoint::save(ckpt_root / "best", ps, "stage1", step + 1, echo);
        saved_best = true;
      }
      res.has_val = true;
      res.best_val_loss = best_val;
    }
  }
  if (!saved_best) res.best_checkpoint = res.last_checkpoint;
  return res;
}

}  // namespace pretrain
}  // namespace unime
