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
// Joint modality-level and patch-level random masking with learnable mask
// tokens, shared by both training stages.

#ifndef UNIME_MASKING_HPP_
#define UNIME_MASKING_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "unime/rng.hpp"
#include "unime/tape.hpp"

namespace unime {
namespace masking {

inline constexpr int kNumModalities = 4;

using Delta = std::array<uint8_t, 4>;  // 1 = modality visible

struct MaskSpec {
  Delta delta;               // modality visibility
  std::vector<uint8_t> eta;  // [K * N] patch visibility, modality-major
  int64_t n = 0;             // patches per modality

  // gamma_{m,i} = delta_m * eta_{m,i}; layout matches eta.
  std::vector<uint8_t> joint_keep() const;
};

// delta_m ~ Bernoulli(1 - p_m) conditioned on sum(delta) >= 1 via rejection
// resampling. All p_m = 1 makes the constraint unsatisfiable and raises a
// configuration error before any sampling.
Delta sample_modality_mask(const std::array<double, 4>& p, Rng& rng);

// Independent eta_{m,i} ~ Bernoulli(1 - q_m), modality-major layout.
std::vector<uint8_t> sample_patch_mask(const std::array<double, 4>& q,
                                       int64_t n, Rng& rng);

MaskSpec sample_mask_spec(const std::array<double, 4>& p,
                          const std::array<double, 4>& q, int64_t n, Rng& rng);

// Deterministic delta for evaluation; names are canonical lower-case
// modality names. Empty or unknown input is a protocol error.
Delta subset_to_delta(const std::vector<std::string>& subset);

// All 15 non-empty modality subsets in the canonical report row order.
const std::vector<Delta>& canonical_subsets();

// Stage-2 training distribution: uniform over canonical_subsets().
Delta sample_stage2_delta(Rng& rng);

// Expands a delta into a per-patch keep vector (eta == 1 everywhere).
std::vector<uint8_t> delta_keep(const Delta& delta, int64_t n);

// One learnable vector of length P^3 per modality, shared across patch
// positions. Stem-level parameter for layer-wise lr decay; decay-exempt.
template <typename T>
void init_mask_tokens(ParamStore<T>& ps, int patch, Rng& rng) {
  Parameter<T>& tok = ps.create(
      "mask_tokens", {kNumModalities, (int64_t)patch * patch * patch},
      /*no_decay=*/true, /*llrd_layer=*/0);
  for (auto& v : tok.value.data) v = (T)rng.trunc_normal(0.02);
}

}  // namespace masking
}  // namespace unime

#endif  // UNIME_MASKING_HPP_
