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
// DSC / HD95 metrics, the 15-subset missing-modality protocol, and report
// emission (CSV, markdown, optional per-case JSONL). DSC values inside a
// ProtocolReport are percentages.

#ifndef UNIME_EVALUATION_HPP_
#define UNIME_EVALUATION_HPP_

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "unime/data_synth.hpp"
#include "unime/masking.hpp"
#include "unime/tensor.hpp"

namespace unime {
namespace evaluation {

inline constexpr std::array<const char*, 3> kRegionNames{"WT", "TC", "ET"};

// 2|A n B| / (|A| + |B|); nonzero bytes are mask members. Both masks empty
// is perfect agreement (1.0). Contract error on length mismatch.
double dsc(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b);

// Mask voxels with a 6-connected non-mask neighbor or touching the volume
// boundary, in (z, y, x) voxel coordinates, raster order.
std::vector<std::array<int, 3>> surface_voxels(
    const std::vector<uint8_t>& mask, const Shape& dims);

// Linear interpolation between order statistics at rank p * (n - 1).
double percentile(std::vector<double> values, double p);

// One-empty-mask sentinel: the volume diagonal in mm.
double empty_mask_sentinel(const Shape& dims,
                           const std::array<double, 3>& spacing);

// Percentile of the pooled symmetric surface-to-surface distance multiset.
// Both masks empty -> 0; exactly one empty -> empty_mask_sentinel. The
// public entry point picks the brute-force pairwise path for small volumes
// and an exact Euclidean distance transform for large ones; both are exposed
// for equivalence testing.
double hd95(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b,
            const Shape& dims, const std::array<double, 3>& spacing,
            double pct = 0.95);
double hd95_brute(const std::vector<uint8_t>& a,
                  const std::vector<uint8_t>& b, const Shape& dims,
                  const std::array<double, 3>& spacing, double pct = 0.95);
double hd95_edt(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b,
                const Shape& dims, const std::array<double, 3>& spacing,
                double pct = 0.95);

// [C, D, H, W] logits -> [D, H, W] class labels; ties take the lowest class.
Tensor<uint8_t> argmax_labels(const Tensor<float>& logits);

struct SubsetRow {
  masking::Delta delta{};          // (flair, t1, t1ce, t2)
  std::array<double, 3> dsc{};     // percent, region order WT, TC, ET
  std::array<double, 3> hd95{};

  bool operator==(const SubsetRow&) const = default;
};

struct CaseMetrics {
  std::string case_id;
  masking::Delta delta{};
  std::array<double, 3> dsc{};  // percent
  std::array<double, 3> hd95{};
};

struct ProtocolReport {
  std::vector<SubsetRow> rows;        // 15, canonical subset order
  std::vector<CaseMetrics> per_case;  // subset-major; absent after parse_csv
  std::array<double, 3> avg_dsc{};    // arithmetic means of the 15 rows
  std::array<double, 3> avg_hd95{};

  void compute_averages();

  // Row-level equality; per-case entries are a debugging artifact and the
  // averages are derived, so neither participates.
  bool operator==(const ProtocolReport& o) const { return rows == o.rows; }
};

// Prediction for one case under one availability pattern, as a label map
// with the case's spatial dims.
using SegmentFn = std::function<Tensor<uint8_t>(
    const data_synth::MultimodalCase&, const masking::Delta&)>;

// Per subset, per case: predict, derive WT/TC/ET masks, score, average over
// cases. Protocol error on an empty case list.
ProtocolReport evaluate_protocol(
    const std::vector<data_synth::MultimodalCase>& cases, const SegmentFn& fn,
    double hd_percentile = 0.95);

// Columns flair,t1,t1ce,t2,region,dsc,hd95; one header, then 15 rows per
// region block in region order WT, TC, ET. Full %.17g precision so emitted
// files round-trip exactly.
void write_csv(const ProtocolReport& report, const std::filesystem::path& p);
ProtocolReport parse_csv(const std::filesystem::path& p);

// Availability glyphs: filled circle = available, open circle = missing;
// column order FLAIR, T1, T1ce, T2; final Avg. row.
void write_markdown(const ProtocolReport& report,
                    const std::filesystem::path& p);

// One JSON object per (subset, case) pair.
void write_jsonl(const ProtocolReport& report,
                 const std::filesystem::path& p);

}  // namespace evaluation
}  // namespace unime

#endif  // UNIME_EVALUATION_HPP_
