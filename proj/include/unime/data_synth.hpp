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
// Deterministic synthetic multimodal phantoms with nested tumor regions,
// augmentation, and the on-disk case format.

#ifndef UNIME_DATA_SYNTH_HPP_
#define UNIME_DATA_SYNTH_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unime/rng.hpp"
#include "unime/tensor.hpp"

namespace unime {
namespace data_synth {

inline constexpr int kNumModalities = 4;
inline constexpr int kNumClasses = 4;  // 0 bg, 1 necrotic core, 2 edema, 3 ET

// Canonical modality order: FLAIR, T1, T1ce, T2. Fixed everywhere: channel
// order, file names, report columns.
const std::array<std::string, 4>& modality_names();
int modality_index(const std::string& name);  // data error if unknown

struct MultimodalCase {
  Tensor<float> volumes;   // [K, D, H, W], intensities in [0, 1]
  Tensor<uint8_t> labels;  // [D, H, W], values in {0, 1, 2, 3}
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel
  std::string case_id;

  bool operator==(const MultimodalCase& o) const {
    return volumes == o.volumes && labels == o.labels &&
           spacing == o.spacing && case_id == o.case_id;
  }
};

struct RegionMasks {
  Shape dims;               // [D, H, W]
  std::vector<uint8_t> wt;  // labels in {1,2,3}
  std::vector<uint8_t> tc;  // labels in {1,3}
  std::vector<uint8_t> et;  // labels == 3
};

struct PhantomParams {
  int min_lesions = 1;
  int max_lesions = 3;
  double noise_sigma = 0.05;
  // Lesion geometry in normalized [-1,1] coordinates.
  double wt_radius_lo = 0.30, wt_radius_hi = 0.50;
  double tc_ratio_lo = 0.55, tc_ratio_hi = 0.80;
  double et_ratio_lo = 0.50, et_ratio_hi = 0.80;
};

// Pure in (seed, dims, params): two calls produce identical cases. dims must
// each be divisible by `patch` (config error otherwise).
MultimodalCase generate_case(uint64_t seed, std::array<int, 3> dims,
                             const PhantomParams& params, int patch);

// WT = 1|2|3, TC = 1|3, ET = 3. Data error on labels outside {0..3}.
RegionMasks derive_region_masks(const Tensor<uint8_t>& labels);

struct AugmentConfig {
  std::array<int, 3> crop{96, 96, 96};
  double flip_p = 0.5;       // independent per axis
  bool rot90 = true;         // random 90-degree multiple in a random plane
  double intensity_scale = 0.1;  // per-modality scale in [1-s, 1+s]
  double intensity_shift = 0.1;  // per-modality shift in [-h, +h]
};

// Identical crop/flip/rotation for volumes and labels; intensity transforms
// per modality, re-clipped to [0,1]. Pure in (case, seed, config).
MultimodalCase augment(const MultimodalCase& c, uint64_t seed,
                       const AugmentConfig& cfg);

// Deterministic centered crop (offsets floor((dim - crop)/2)) of volumes and
// labels; the evaluation-time counterpart of the random training crop.
MultimodalCase center_crop(const MultimodalCase& c, std::array<int, 3> crop);

// Case directory: meta.json + vol_<modality>.raw (f32 LE, C-order, D-major)
// + seg.raw (u8). write then read is a bit-exact round trip.
void write_case(const MultimodalCase& c, const std::filesystem::path& dir);
MultimodalCase read_case(const std::filesystem::path& dir);

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> train, val, test;  // case directory names

  std::vector<std::string> split(const std::string& name) const;
  int64_t total() const {
    return (int64_t)(train.size() + val.size() + test.size());
  }
};

// val = floor(n/10), test = floor(n/5), train = rest. Data error when the
// train or test split would be empty.
struct SplitCounts {
  int64_t train, val, test;
};
SplitCounts split_counts(int64_t n);

void write_manifest(const DatasetManifest& m, uint64_t seed);
DatasetManifest read_manifest(const std::filesystem::path& root);

std::vector<MultimodalCase> load_split(const DatasetManifest& m,
                                       const std::string& split);

}  // namespace data_synth
}  // namespace unime

#endif  // UNIME_DATA_SYNTH_HPP_
