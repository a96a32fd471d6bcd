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

#include "unime/masking.hpp"

#include "unime/data_synth.hpp"
#include "unime/errors.hpp"

namespace unime {
namespace masking {

std::vector<uint8_t> MaskSpec::joint_keep() const {
  std::vector<uint8_t> gamma((size_t)kNumModalities * n);
  for (int m = 0; m < kNumModalities; ++m)
    for (int64_t i = 0; i < n; ++i)
      gamma[m * n + i] = delta[m] & eta[m * n + i];
  return gamma;
}

Delta sample_modality_mask(const std::array<double, 4>& p, Rng& rng) {
  bool satisfiable = false;
  for (double pm : p) {
    check_config(pm >= 0.0 && pm <= 1.0, "mask.p must lie in [0, 1]");
    if (pm < 1.0) satisfiable = true;
  }
  check_config(satisfiable,
               "all modality mask probabilities are 1; the constraint "
               "sum(delta) >= 1 is unsatisfiable");
  Delta delta{};
  for (;;) {
    int total = 0;
    for (int m = 0; m < kNumModalities; ++m) {
      delta[m] = rng.bernoulli(1.0 - p[m]) ? 1 : 0;
      total += delta[m];
    }
    if (total >= 1) return delta;
  }
}

std::vector<uint8_t> sample_patch_mask(const std::array<double, 4>& q,
                                       int64_t n, Rng& rng) {
  check_config(n >= 1, "patch count must be >= 1");
  for (double qm : q)
    check_config(qm >= 0.0 && qm <= 1.0, "mask.q must lie in [0, 1]");
  std::vector<uint8_t> eta((size_t)kNumModalities * n);
  for (int m = 0; m < kNumModalities; ++m)
    for (int64_t i = 0; i < n; ++i)
      eta[m * n + i] = rng.bernoulli(1.0 - q[m]) ? 1 : 0;
  return eta;
}

MaskSpec sample_mask_spec(const std::array<double, 4>& p,
                          const std::array<double, 4>& q, int64_t n,
                          Rng& rng) {
  MaskSpec spec;
  spec.delta = sample_modality_mask(p, rng);
  spec.eta = sample_patch_mask(q, n, rng);
  spec.n = n;
  return spec;
}

Delta subset_to_delta(const std::vector<std::string>& subset) {
  if (subset.empty())
    throw ProtocolError("modality subset must be non-empty");
  Delta delta{};
  for (const auto& name : subset) {
    int idx = -1;
    for (int m = 0; m < kNumModalities; ++m)
      if (data_synth::modality_names()[m] == name) idx = m;
    if (idx < 0) throw ProtocolError("unknown modality in subset: " + name);
    delta[idx] = 1;
  }
  return delta;
}

const std::vector<Delta>& canonical_subsets() {
  // Row order of the 15-subset evaluation protocol: the four singletons, the
  // six pairs, the four triples, then all four, in the fixed published order.
  // Component order inside each Delta is FLAIR, T1, T1ce, T2.
  static const std::vector<Delta> kSubsets{
      {0, 0, 0, 1}, {0, 0, 1, 0}, {0, 1, 0, 0}, {1, 0, 0, 0},
      {0, 0, 1, 1}, {0, 1, 1, 0}, {1, 1, 0, 0}, {0, 1, 0, 1},
      {1, 0, 0, 1}, {1, 0, 1, 0}, {1, 1, 1, 0}, {1, 1, 0, 1},
      {1, 0, 1, 1}, {0, 1, 1, 1}, {1, 1, 1, 1},
  };
  return kSubsets;
}

Delta sample_stage2_delta(Rng& rng) {
  const auto& subsets = canonical_subsets();
  return subsets[(size_t)rng.uniform_int(0, (int64_t)subsets.size() - 1)];
}

std::vector<uint8_t> delta_keep(const Delta& delta, int64_t n) {
  std::vector<uint8_t> keep((size_t)kNumModalities * n);
  for (int m = 0; m < kNumModalities; ++m)
    for (int64_t i = 0; i < n; ++i) keep[m * n + i] = delta[m];
  return keep;
}

}  // namespace masking
}  // namespace unime
