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
// The shared volumetric transformer encoder: patch tokenizer, learnable
// positional embeddings, register tokens, 3D rotary attention, and the
// SwiGLU feed-forward with pre- and post-normalization.

#ifndef UNIME_UNI_ENCODER_HPP_
#define UNIME_UNI_ENCODER_HPP_

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "unime/errors.hpp"
#include "unime/ops.hpp"
#include "unime/rng.hpp"
#include "unime/tape.hpp"

namespace unime {
namespace uni_encoder {

inline constexpr int kNumModalities = 4;
inline constexpr double kLnEps = 1e-5;

struct UniEncoderConfig {
  int patch = 8;
  int d_embed = 864;
  int layers = 16;
  int heads = 12;
  int n_reg = 4;
  double rope_base = 10000.0;

  int d_head() const { return d_embed / heads; }
  int64_t token_count(std::array<int, 3> grid) const {
    return (int64_t)grid[0] * grid[1] * grid[2];
  }
  void validate() const;
};

// Scale presets (heads, layers, width): small = (12, 12, 864),
// base = (12, 16, 864), large = (16, 24, 1056).
UniEncoderConfig scale_preset(const std::string& name);

// SwiGLU hidden width: (8/3) * d_embed rounded to a multiple of 64.
int swiglu_hidden(int d_embed);

// Integer grid coordinates per token: patches in depth-major raster order,
// then (0,0,0) for each register so registers see the identity rotation.
std::shared_ptr<std::vector<std::array<int, 3>>> token_positions(
    std::array<int, 3> grid, int n_reg);

// ---------------------------------------------------------------------------
// Parameters. Names are the checkpoint contract; insertion order is the
// serialization order. Layer indices are 1-based to match the layer-wise
// lr-decay convention (layer L is the last layer).

template <typename T>
void init_params(ParamStore<T>& ps, const UniEncoderConfig& cfg,
                 std::array<int, 3> grid, Rng& rng) {
  cfg.validate();
  const int d = cfg.d_embed, p = cfg.patch;
  const int64_t n = cfg.token_count(grid);
  const int hidden = swiglu_hidden(d);

  auto trunc_fill = [&rng](Parameter<T>& prm) {
    for (auto& v : prm.value.data) v = (T)rng.trunc_normal(0.02);
  };
  auto ones_fill = [](Parameter<T>& prm) { prm.value.fill(T(1)); };

  trunc_fill(ps.create("uni_encoder.tokenizer.weight",
                       {d, kNumModalities, p, p, p}, false, 0));
  ps.create("uni_encoder.tokenizer.bias", {d}, true, 0);
  trunc_fill(ps.create("uni_encoder.lpe", {n, d}, true, 0));
  if (cfg.n_reg > 0)
    trunc_fill(ps.create("uni_encoder.registers", {cfg.n_reg, d}, true, 0));

  for (int l = 1; l <= cfg.layers; ++l) {
    const std::string base = "uni_encoder.layer" + std::to_string(l) + ".";
    ones_fill(ps.create(base + "ln1.gain", {d}, true, l));
    ps.create(base + "ln1.bias", {d}, true, l);
    for (const char* proj : {"wq", "wk", "wv", "wo"}) {
      trunc_fill(ps.create(base + "attn." + proj + ".weight", {d, d}, false, l));
      ps.create(base + "attn." + std::string(proj) + ".bias", {d}, true, l);
    }
    ones_fill(ps.create(base + "ln2.gain", {d}, true, l));
    ps.create(base + "ln2.bias", {d}, true, l);
    trunc_fill(ps.create(base + "ffn.w_gate.weight", {d, hidden}, false, l));
    trunc_fill(ps.create(base + "ffn.w_up.weight", {d, hidden}, false, l));
    trunc_fill(ps.create(base + "ffn.w_down.weight", {hidden, d}, false, l));
    ones_fill(ps.create(base + "ln3.gain", {d}, true, l));
    ps.create(base + "ln3.bias", {d}, true, l);
  }
}

// ---------------------------------------------------------------------------
// Graph builders.

// [K, D, H, W] -> [N, d_embed] patch tokens (no positional info yet).
template <typename T>
Val tokenize(Tape<T>& t, ParamStore<T>& ps, const UniEncoderConfig& cfg,
             Val x) {
  const Tensor<T>& xv = t.val(x);
  check_contract(xv.ndim() == 4 && xv.shape[0] == kNumModalities,
                 "tokenize: input must be [K, D, H, W]");
  for (int a = 1; a < 4; ++a)
    check_contract(xv.shape[a] % cfg.patch == 0,
                   "tokenize: dims must be divisible by the patch size");
  Val grid = ops::conv3d(t, x, t.param(ps.at("uni_encoder.tokenizer.weight")),
                         t.param(ps.at("uni_encoder.tokenizer.bias")),
                         /*stride=*/cfg.patch, /*pad=*/0);
  return ops::grid_to_tokens(t, grid);
}

// One pre-norm attention + post-normalized SwiGLU block:
//   S_hat = S + MHSA_RoPE(LN(S)); S_out = S_hat + LN(SwiGLU(LN(S_hat))).
template <typename T>
Val transformer_layer(
    Tape<T>& t, ParamStore<T>& ps, const UniEncoderConfig& cfg, Val s,
    int layer,
    const std::shared_ptr<const std::vector<std::array<int, 3>>>& pos) {
  const std::string base = "uni_encoder.layer" + std::to_string(layer) + ".";
  auto prm = [&](const std::string& suffix) {
    return t.param(ps.at(base + suffix));
  };

  Val h = ops::layer_norm(t, s, prm("ln1.gain"), prm("ln1.bias"), (T)kLnEps);
  Val q = ops::split_heads(
      t, ops::linear(t, h, prm("attn.wq.weight"), prm("attn.wq.bias")),
      cfg.heads);
  Val k = ops::split_heads(
      t, ops::linear(t, h, prm("attn.wk.weight"), prm("attn.wk.bias")),
      cfg.heads);
  Val v = ops::split_heads(
      t, ops::linear(t, h, prm("attn.wv.weight"), prm("attn.wv.bias")),
      cfg.heads);
  q = ops::rope3d(t, q, pos, (T)cfg.rope_base);
  k = ops::rope3d(t, k, pos, (T)cfg.rope_base);
  Val scores = ops::matmul_batched_nt(t, q, k);
  scores = ops::scale(t, scores, (T)(1.0 / std::sqrt((double)cfg.d_head())));
  Val ctx = ops::matmul_batched_nn(t, ops::softmax_last(t, scores), v);
  Val attn_out = ops::linear(t, ops::merge_heads(t, ctx),
                             prm("attn.wo.weight"), prm("attn.wo.bias"));
  Val s_hat = ops::add(t, s, attn_out);

  Val h2 = ops::layer_norm(t, s_hat, prm("ln2.gain"), prm("ln2.bias"),
                           (T)kLnEps);
  Val gate = ops::silu(t, ops::linear(t, h2, prm("ffn.w_gate.weight")));
  Val up = ops::linear(t, h2, prm("ffn.w_up.weight"));
  Val ff = ops::linear(t, ops::mul(t, gate, up), prm("ffn.w_down.weight"));
  Val s_bar = ops::layer_norm(t, ff, prm("ln3.gain"), prm("ln3.bias"),
                              (T)kLnEps);
  return ops::add(t, s_hat, s_bar);
}

// Full encoder: tokenize -> +LPe -> append registers -> L layers -> drop
// registers. Returns the N x d_embed patch representation.
template <typename T>
Val encoder_forward(Tape<T>& t, ParamStore<T>& ps,
                    const UniEncoderConfig& cfg, Val masked_x,
                    std::array<int, 3> grid) {
  const int64_t n = cfg.token_count(grid);
  Val s = tokenize(t, ps, cfg, masked_x);
  const Parameter<T>& lpe = ps.at("uni_encoder.lpe");
  check_contract(lpe.value.shape[0] == n,
                 "encoder_forward: token count differs from the positional "
                 "embedding grid; volume size must match pretraining");
  s = ops::add(t, s, t.param(ps.at("uni_encoder.lpe")));
  if (cfg.n_reg > 0)
    s = ops::concat_rows(t, s, t.param(ps.at("uni_encoder.registers")));
  const auto pos = token_positions(grid, cfg.n_reg);
  for (int l = 1; l <= cfg.layers; ++l) {
    s = transformer_layer(t, ps, cfg, s, l, pos);
    for (const T v : t.val(s).data)
      if (!std::isfinite((double)v))
        throw NumericalError("non-finite activation in encoder layer " +
                             std::to_string(l));
  }
  if (cfg.n_reg > 0) s = ops::slice_rows(t, s, 0, n);
  return s;
}

}  // namespace uni_encoder
}  // namespace unime

#endif  // UNIME_UNI_ENCODER_HPP_
