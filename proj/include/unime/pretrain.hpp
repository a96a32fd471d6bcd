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
// Stage-1 masked self-supervised pretraining: the lightweight auxiliary
// reconstruction decoder, the reconstruction loss, and the training loop.
// The auxiliary decoder exists only during stage 1; the stage-1 -> stage-2
// transfer drops every aux_decoder.* tensor.

#ifndef UNIME_PRETRAIN_HPP_
#define UNIME_PRETRAIN_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "unime/config.hpp"
#include "unime/data_synth.hpp"
#include "unime/masking.hpp"
#include "unime/ops.hpp"
#include "unime/rng.hpp"
#include "unime/tape.hpp"
#include "unime/uni_encoder.hpp"

namespace unime {
namespace pretrain {

// Three upsampling blocks (transposed conv stride 2 -> channel layer norm
// -> GELU) halve the width each time (d/2, d/4, d/8) and jointly invert the
// patch tokenizer's x8 downsampling, then a 1x1x1 projection restores the
// K input channels. Norm gains start at 1, projections at trunc normal 0.02.
template <typename T>
void init_aux_params(ParamStore<T>& ps, const uni_encoder::UniEncoderConfig& cfg,
                     Rng& rng) {
  check_config(cfg.patch == 8,
               "the auxiliary decoder upsamples by exactly 2^3 = 8; it "
               "requires patch size 8");
  check_config(cfg.d_embed % 8 == 0,
               "d_embed must be divisible by 8 for the auxiliary decoder "
               "widths d/2, d/4, d/8");
  auto fill = [&rng](Parameter<T>& p) {
    for (auto& v : p.value.data) v = (T)rng.trunc_normal(0.02);
  };
  int64_t ci = cfg.d_embed;
  for (int b = 1; b <= 3; ++b) {
    const int64_t co = cfg.d_embed >> b;
    const std::string base = "aux_decoder.block" + std::to_string(b) + ".";
    fill(ps.create(base + "convt.weight", {ci, co, 2, 2, 2}));
    ps.create(base + "ln.gain", {co}, true).value.fill(T(1));
    ps.create(base + "ln.bias", {co}, true);
    ci = co;
  }
  fill(ps.create("aux_decoder.head.weight",
                 {data_synth::kNumModalities, cfg.d_embed / 8, 1, 1, 1}));
  ps.create("aux_decoder.head.bias", {data_synth::kNumModalities}, true);
}

// Token rows -> d_embed x grid volume -> x8 upsampling -> K x D x H x W.
template <typename T>
Val aux_decode(Tape<T>& t, ParamStore<T>& ps,
               const uni_encoder::UniEncoderConfig& cfg, Val tokens,
               std::array<int, 3> grid) {
  check_contract(cfg.patch == 8, "aux_decode: x8 head assumes patch 8");
  const Tensor<T>& tv = t.val(tokens);
  check_contract(tv.ndim() == 2 &&
                     tv.shape[0] == (int64_t)grid[0] * grid[1] * grid[2],
                 "aux_decode: token count differs from the grid");
  Val x = ops::tokens_to_grid(t, tokens, grid[0], grid[1], grid[2]);
  int d = grid[0], h = grid[1], w = grid[2];
  for (int b = 1; b <= 3; ++b) {
    const std::string base = "aux_decoder.block" + std::to_string(b) + ".";
    x = ops::conv_transpose3d(t, x, t.param(ps.at(base + "convt.weight")),
                              kNoVal, 2);
    d *= 2, h *= 2, w *= 2;
    Val tok = ops::grid_to_tokens(t, x);
    tok = ops::layer_norm(t, tok, t.param(ps.at(base + "ln.gain")),
                          t.param(ps.at(base + "ln.bias")),
                          (T)uni_encoder::kLnEps);
    x = ops::gelu(t, ops::tokens_to_grid(t, tok, d, h, w));
  }
  return ops::conv3d(t, x, t.param(ps.at("aux_decoder.head.weight")),
                     t.param(ps.at("aux_decoder.head.bias")), 1, 0);
}

// Mean squared error over every voxel of every modality (the target is the
// unmasked original) plus reg_weight times the Euclidean norm of the mask
// token parameters.
template <typename T>
Val reconstruction_loss(Tape<T>& t, Val pred,
                        std::shared_ptr<const Tensor<T>> target,
                        Val mask_tokens, T reg_weight) {
  Val loss = ops::mse_mean(t, pred, std::move(target));
  if (reg_weight != T(0)) {
    loss = ops::add(
        t, loss, ops::scale(t, ops::l2_norm(t, mask_tokens), reg_weight));
  }
  return loss;
}

template <typename T>
struct Stage1Graph {
  Val masked;  // mask-token-substituted input
  Val tokens;  // encoder output, N x d_embed
  Val pred;    // reconstruction, K x D x H x W
  Val loss;
};

// One full stage-1 step graph: mask -> encode -> decode -> loss.
template <typename T>
Stage1Graph<T> build_stage1_graph(Tape<T>& t, ParamStore<T>& ps,
                                  const uni_encoder::UniEncoderConfig& cfg,
                                  const Tensor<T>& volumes,
                                  const masking::MaskSpec& spec,
                                  T reg_weight) {
  check_contract(volumes.ndim() == 4 &&
                     volumes.shape[0] == data_synth::kNumModalities,
                 "stage-1 input must be [K, D, H, W]");
  const std::array<int, 3> grid = {(int)(volumes.shape[1] / cfg.patch),
                                   (int)(volumes.shape[2] / cfg.patch),
                                   (int)(volumes.shape[3] / cfg.patch)};
  Stage1Graph<T> g;
  Val x = t.constant(volumes);
  Val mtok = t.param(ps.at("mask_tokens"));
  auto keep =
      std::make_shared<const std::vector<uint8_t>>(spec.joint_keep());
  g.masked = ops::apply_patch_mask(t, x, mtok, std::move(keep), cfg.patch);
  g.tokens = uni_encoder::encoder_forward(t, ps, cfg, g.masked, grid);
  g.pred = aux_decode(t, ps, cfg, g.tokens, grid);
  auto target = std::make_shared<const Tensor<T>>(volumes);
  g.loss = reconstruction_loss(t, g.pred, std::move(target), mtok, reg_weight);
  return g;
}

struct PretrainResult {
  int64_t steps_run = 0;
  double step0_loss = 0.0;  // training loss at the first executed step
  double final_loss = 0.0;
  double best_val_loss = 0.0;  // meaningful only when has_val
  bool has_val = false;
  std::filesystem::path best_checkpoint;  // == last when the val split is empty
  std::filesystem::path last_checkpoint;
};

// Mean reconstruction loss over a case list with per-case deterministic
// masks (center-cropped, no augmentation).
double validation_loss(ParamStore<float>& ps,
                       const config::ExperimentConfig& cfg,
                       const std::vector<data_synth::MultimodalCase>& cases);

// The stage-1 loop. Resumes from <out>/checkpoints/last when present
// (weights + step counter; fresh optimizer moments). Appends metrics.csv
// rows (step, loss, lr) and keeps <out>/checkpoints/{last,best} updated,
// best by validation reconstruction loss (last when the val split is empty).
PretrainResult run_pretraining(const config::ExperimentConfig& cfg);

}  // namespace pretrain
}  // namespace unime

#endif  // UNIME_PRETRAIN_HPP_
