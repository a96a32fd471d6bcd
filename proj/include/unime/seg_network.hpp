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
// Stage-2 heterogeneous segmentation network. Four modality-specific CNN
// encoders feed ECA fusion blocks at the top three scales; the Uni-Encoder
// branch supplies the deepest decoder input (1/8 resolution); a U-Net-style
// main decoder with skips and two deep-supervision heads emits the class
// logits; a shared-weight per-modality decoder provides auxiliary training
// targets. Architecture variants:
//   full:       Uni branch + modality encoders (default)
//   multi-only: no Uni branch; the deepest decoder input comes from fusing
//               the masked deepest CNN features (seg.fuse3)
//   uni-only:   no modality encoders; the decoder runs without skips
// The deepest CNN features never reach the main path in the full variant;
// they are consumed only by the shared decoder (and by fuse3 in multi-only).

#ifndef UNIME_SEG_NETWORK_HPP_
#define UNIME_SEG_NETWORK_HPP_

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "unime/masking.hpp"
#include "unime/ops.hpp"
#include "unime/rng.hpp"
#include "unime/tape.hpp"
#include "unime/uni_encoder.hpp"

namespace unime {
namespace seg_network {

inline constexpr int kNumClasses = 4;
inline constexpr double kInEps = 1e-5;  // instance-norm epsilon
inline constexpr std::array<int, 4> kStageWidths{16, 32, 64, 128};
inline constexpr std::array<int, 4> kStageStrides{1, 2, 2, 2};

enum class Arch { kFull, kMultiOnly, kUniOnly };

Arch parse_arch(const std::string& name);  // config error on unknown names
std::string arch_name(Arch arch);

// Nearest odd integer to log2(C)/2 + 1/2, ties rounding up; gives kernel
// sizes {3,3,3,5} for the widths {16,32,64,128}.
int eca_kernel(int channels);

namespace detail {

template <typename T>
void trunc_fill(Parameter<T>& p, Rng& rng) {
  for (auto& v : p.value.data) v = (T)rng.trunc_normal(0.02);
}

// conv3d (k3, pad 1, no bias) -> instance norm -> GELU parameter triple.
template <typename T>
void create_conv_block(ParamStore<T>& ps, const std::string& base, int64_t ci,
                       int64_t co, Rng& rng) {
  trunc_fill(ps.create(base + "conv.weight", {co, ci, 3, 3, 3}), rng);
  ps.create(base + "in.gain", {co}, true).value.fill(T(1));
  ps.create(base + "in.bias", {co}, true);
}

// Two conv blocks followed by an ECA gate on `co` channels.
template <typename T>
void create_fuse_block(ParamStore<T>& ps, const std::string& base, int64_t ci,
                       int64_t co, Rng& rng) {
  create_conv_block(ps, base + "block1.", ci, co, rng);
  create_conv_block(ps, base + "block2.", co, co, rng);
  trunc_fill(ps.create(base + "eca.weight", {eca_kernel((int)co)}), rng);
}

// Three upsample stages 128 -> 64 -> 32 -> 16 plus a 1x1x1 head; decoder
// conv block1 consumes the skip concatenation unless skipless.
template <typename T>
void create_decoder(ParamStore<T>& ps, const std::string& base, bool skips,
                    bool deep_heads, Rng& rng) {
  int64_t ci = 128;
  for (int s = 1; s <= 3; ++s) {
    const int64_t co = ci / 2;
    const std::string stage = base + "stage" + std::to_string(s) + ".";
    trunc_fill(ps.create(stage + "up.weight", {ci, co, 2, 2, 2}), rng);
    create_conv_block(ps, stage + "block1.", skips ? co * 2 : co, co, rng);
    create_conv_block(ps, stage + "block2.", co, co, rng);
    ci = co;
  }
  trunc_fill(ps.create(base + "head.weight", {kNumClasses, 16, 1, 1, 1}), rng);
  ps.create(base + "head.bias", {kNumClasses}, true);
  if (deep_heads) {
    trunc_fill(ps.create(base + "deep1.weight", {kNumClasses, 64, 1, 1, 1}),
               rng);
    ps.create(base + "deep1.bias", {kNumClasses}, true);
    trunc_fill(ps.create(base + "deep2.weight", {kNumClasses, 32, 1, 1, 1}),
               rng);
    ps.create(base + "deep2.bias", {kNumClasses}, true);
  }
}

}  // namespace detail

// All seg.* parameters for one architecture variant. The Uni branch
// parameters (uni_encoder.*, mask_tokens) are owned by their own modules;
// see init_stage2_params for the full stage-2 set.
template <typename T>
void init_seg_params(ParamStore<T>& ps, Arch arch, int d_embed, Rng& rng) {
  using detail::create_conv_block;
  using detail::create_fuse_block;
  const bool cnn = arch != Arch::kUniOnly;
  const bool uni = arch != Arch::kMultiOnly;
  if (cnn) {
    for (int m = 0; m < masking::kNumModalities; ++m) {
      int64_t ci = 1;
      for (int s = 1; s <= 4; ++s) {
        const int64_t co = kStageWidths[s - 1];
        const std::string stage = "seg.modality_enc" + std::to_string(m) +
                                  ".stage" + std::to_string(s) + ".";
        create_conv_block(ps, stage + "block1.", ci, co, rng);
        create_conv_block(ps, stage + "block2.", co, co, rng);
        create_conv_block(ps, stage + "block3.", co, co, rng);
        ci = co;
      }
    }
    for (int s = 0; s <= 2; ++s) {
      const int64_t w = kStageWidths[s];
      create_fuse_block(ps, "seg.fuse" + std::to_string(s) + ".", 4 * w, w,
                        rng);
    }
  }
  if (arch == Arch::kMultiOnly)
    create_fuse_block(ps, "seg.fuse3.", 4 * kStageWidths[3], kStageWidths[3],
                      rng);
  if (uni) create_fuse_block(ps, "seg.uni_fuse.", d_embed, 128, rng);
  detail::create_decoder(ps, "seg.decoder.", /*skips=*/cnn,
                         /*deep_heads=*/true, rng);
  if (cnn)
    detail::create_decoder(ps, "seg.shared_decoder.", /*skips=*/true,
                           /*deep_heads=*/false, rng);
}

// Full stage-2 parameter set in serialization order: Uni branch first (when
// present), then the seg.* tensors. `grid` is the token grid of the
// training crop (crop / patch per axis); it sizes the positional table.
template <typename T>
void init_stage2_params(ParamStore<T>& ps, Arch arch,
                        const uni_encoder::UniEncoderConfig& enc_cfg,
                        std::array<int, 3> grid, Rng& rng) {
  if (arch != Arch::kMultiOnly) {
    uni_encoder::init_params(ps, enc_cfg, grid, rng);
    masking::init_mask_tokens(ps, enc_cfg.patch, rng);
  }
  init_seg_params(ps, arch, enc_cfg.d_embed, rng);
}

namespace detail {

template <typename T>
Val conv_in_gelu(Tape<T>& t, ParamStore<T>& ps, const std::string& base,
                 Val x, int stride) {
  Val y = ops::conv3d(t, x, t.param(ps.at(base + "conv.weight")), kNoVal,
                      stride, 1);
  y = ops::instance_norm(t, y, t.param(ps.at(base + "in.gain")),
                         t.param(ps.at(base + "in.bias")), (T)kInEps);
  return ops::gelu(t, y);
}

template <typename T>
Val eca_gate(Tape<T>& t, ParamStore<T>& ps, const std::string& name, Val x) {
  Val pooled = ops::global_avg_pool(t, x);
  Val gate =
      ops::sigmoid(t, ops::conv1d_channels(t, pooled, t.param(ps.at(name))));
  return ops::scale_channels(t, x, gate);
}

template <typename T>
Val fuse_block(Tape<T>& t, ParamStore<T>& ps, const std::string& base,
               Val x) {
  Val y = conv_in_gelu(t, ps, base + "block1.", x, 1);
  y = conv_in_gelu(t, ps, base + "block2.", y, 1);
  return eca_gate(t, ps, base + "eca.weight", y);
}

}  // namespace detail

// One modality encoder: 4 stages x 3 blocks, stride at each stage's first
// block, residual add first-block output -> third-block output. Returns
// features at full, 1/2, 1/4, 1/8 resolution.
template <typename T>
std::array<Val, 4> modality_encode(Tape<T>& t, ParamStore<T>& ps, int m,
                                   Val x) {
  const Tensor<T>& xv = t.val(x);
  check_contract(xv.ndim() == 4 && xv.shape[0] == 1,
                 "modality_encode: input must be [1, D, H, W]");
  for (int a = 1; a <= 3; ++a)
    check_contract(xv.shape[a] % 8 == 0,
                   "modality_encode: dims must be divisible by 8");
  std::array<Val, 4> feats;
  Val cur = x;
  for (int s = 1; s <= 4; ++s) {
    const std::string stage = "seg.modality_enc" + std::to_string(m) +
                              ".stage" + std::to_string(s) + ".";
    Val b1 = detail::conv_in_gelu(t, ps, stage + "block1.", cur,
                                  kStageStrides[s - 1]);
    Val b2 = detail::conv_in_gelu(t, ps, stage + "block2.", b1, 1);
    Val b3 = detail::conv_in_gelu(t, ps, stage + "block3.", b2, 1);
    cur = ops::add(t, b3, b1);
    feats[s - 1] = cur;
  }
  return feats;
}

// Decoder core shared by the main and the shared-weight auxiliary decoder.
// skips[i] are consumed at 1/4, 1/2, full resolution in that order; pass
// invalid Vals for the skipless variant. Deep heads only exist on the main
// decoder.
template <typename T>
struct DecodeOut {
  Val logits;
  std::vector<Val> deep;  // 1/4-res then 1/2-res head when requested
};

template <typename T>
DecodeOut<T> decode(Tape<T>& t, ParamStore<T>& ps, const std::string& base,
                    Val bottom, const std::array<Val, 3>& skips,
                    bool deep_heads) {
  DecodeOut<T> out;
  Val cur = bottom;
  for (int s = 1; s <= 3; ++s) {
    const std::string stage = base + "stage" + std::to_string(s) + ".";
    cur = ops::conv_transpose3d(t, cur, t.param(ps.at(stage + "up.weight")),
                                kNoVal, 2);
    if (skips[s - 1].valid()) {
      check_contract(t.val(skips[s - 1]).shape[1] == t.val(cur).shape[1],
                     "decode: skip resolution mismatch");
      cur = ops::concat_channels(t, cur, skips[s - 1]);
    }
    cur = detail::conv_in_gelu(t, ps, stage + "block1.", cur, 1);
    cur = detail::conv_in_gelu(t, ps, stage + "block2.", cur, 1);
    if (deep_heads && s <= 2) {
      const std::string head = base + "deep" + std::to_string(s);
      out.deep.push_back(ops::conv3d(t, cur,
                                     t.param(ps.at(head + ".weight")),
                                     t.param(ps.at(head + ".bias")), 1, 0));
    }
  }
  out.logits = ops::conv3d(t, cur, t.param(ps.at(base + "head.weight")),
                           t.param(ps.at(base + "head.bias")), 1, 0);
  return out;
}

template <typename T>
struct SegOutputs {
  Val main_logits;                            // C x D x H x W
  std::vector<Val> deep_logits;               // 1/4 then 1/2 resolution
  std::vector<std::pair<int, Val>> aux_logits;  // (modality, logits)
};

// End-to-end stage-2 forward pass. x is a tape node [K, D, H, W]; delta
// marks available modalities (eta == 1 in stage 2); the shared-weight
// decoder runs only in train mode and only over available modalities, on
// the pre-masking per-modality features including the deepest level.
template <typename T>
SegOutputs<T> segment(Tape<T>& t, ParamStore<T>& ps,
                      const uni_encoder::UniEncoderConfig& enc_cfg, Arch arch,
                      Val x, const masking::Delta& delta, bool train_mode) {
  // Copied, not referenced: node creation below reallocates the tape.
  const Shape in_shape = t.val(x).shape;
  check_contract(in_shape.size() == 4 &&
                     in_shape[0] == masking::kNumModalities,
                 "segment: input must be [K, D, H, W]");
  check_contract(delta[0] + delta[1] + delta[2] + delta[3] >= 1,
                 "segment: at least one modality must be available");

  const bool cnn = arch != Arch::kUniOnly;
  const bool uni = arch != Arch::kMultiOnly;

  std::array<std::array<Val, 4>, 4> feats{};  // [modality][scale]
  std::array<Val, 3> fused{};                 // F^(0..2)
  Val bottom;
  if (cnn) {
    std::array<std::array<Val, 4>, 4> masked{};
    for (int m = 0; m < masking::kNumModalities; ++m) {
      feats[m] = modality_encode(t, ps, m, ops::slice_channel(t, x, m));
      for (int s = 0; s < 4; ++s)
        masked[m][s] = ops::scale(t, feats[m][s], (T)delta[m]);
    }
    for (int s = 0; s <= 2; ++s) {
      Val cat = masked[0][s];
      for (int m = 1; m < masking::kNumModalities; ++m)
        cat = ops::concat_channels(t, cat, masked[m][s]);
      fused[s] = detail::fuse_block(t, ps, "seg.fuse" + std::to_string(s) +
                                    ".", cat);
    }
    if (arch == Arch::kMultiOnly) {
      Val cat = masked[0][3];
      for (int m = 1; m < masking::kNumModalities; ++m)
        cat = ops::concat_channels(t, cat, masked[m][3]);
      bottom = detail::fuse_block(t, ps, "seg.fuse3.", cat);
    }
  }
  if (uni) {
    const std::array<int, 3> grid = {(int)(in_shape[1] / enc_cfg.patch),
                                     (int)(in_shape[2] / enc_cfg.patch),
                                     (int)(in_shape[3] / enc_cfg.patch)};
    const int64_t n = enc_cfg.token_count(grid);
    auto keep = std::make_shared<const std::vector<uint8_t>>(
        masking::delta_keep(delta, n));
    Val masked_x = ops::apply_patch_mask(
        t, x, t.param(ps.at("mask_tokens")), std::move(keep), enc_cfg.patch);
    Val tokens = uni_encoder::encoder_forward(t, ps, enc_cfg, masked_x, grid);
    Val tok_grid = ops::tokens_to_grid(t, tokens, grid[0], grid[1], grid[2]);
    bottom = detail::fuse_block(t, ps, "seg.uni_fuse.", tok_grid);
  }

  SegOutputs<T> out;
  std::array<Val, 3> main_skips = cnn
      ? std::array<Val, 3>{fused[2], fused[1], fused[0]}
      : std::array<Val, 3>{kNoVal, kNoVal, kNoVal};
  auto main = decode(t, ps, "seg.decoder.", bottom, main_skips,
                     /*deep_heads=*/true);
  out.main_logits = main.logits;
  out.deep_logits = std::move(main.deep);

  if (train_mode && cnn) {
    for (int m = 0; m < masking::kNumModalities; ++m) {
      if (!delta[m]) continue;
      const std::array<Val, 3> skips{feats[m][2], feats[m][1], feats[m][0]};
      auto aux = decode(t, ps, "seg.shared_decoder.", feats[m][3], skips,
                        /*deep_heads=*/false);
      out.aux_logits.emplace_back(m, aux.logits);
    }
  }
  return out;
}

}  // namespace seg_network
}  // namespace unime

#endif  // UNIME_SEG_NETWORK_HPP_
