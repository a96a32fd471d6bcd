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

#include "unime/data_synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "unime/errors.hpp"

namespace unime {
namespace data_synth {

namespace fs = std::filesystem;
using nlohmann::json;

const std::array<std::string, 4>& modality_names() {
  static const std::array<std::string, 4> kNames{"flair", "t1", "t1ce", "t2"};
  return kNames;
}

int modality_index(const std::string& name) {
  const auto& names = modality_names();
  for (int i = 0; i < 4; ++i)
    if (names[i] == name) return i;
  throw DataError("unknown modality name: " + name);
}

// ---------------------------------------------------------------------------
// Phantom generation.

namespace {

// Mean intensity per (tissue row, modality). Rows: outside-brain, healthy
// tissue, necrotic core (1), edema (2), enhancing tumor (3). Columns follow
// the canonical modality order. The profile encodes modality complementarity:
// edema is bright on FLAIR/T2, the enhancing rim is bright on T1ce only, and
// the core is dark on T1/T1ce.
constexpr double kIntensity[5][4] = {
    {0.02, 0.02, 0.02, 0.02},  // outside brain
    {0.35, 0.55, 0.55, 0.40},  // healthy tissue
    {0.45, 0.25, 0.20, 0.60},  // label 1, necrotic core
    {0.90, 0.40, 0.40, 0.85},  // label 2, edema
    {0.55, 0.45, 0.95, 0.50},  // label 3, enhancing tumor
};

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> semi;

  // Squared normalized radius of a point; <= 1 means inside.
  double rho2(double z, double y, double x) const {
    const double dz = (z - center[0]) / semi[0];
    const double dy = (y - center[1]) / semi[1];
    const double dx = (x - center[2]) / semi[2];
    return dz * dz + dy * dy + dx * dx;
  }
};

struct Lesion {
  Ellipsoid wt;          // outer shell (edema)
  double tc_ratio;       // TC boundary at rho = tc_ratio
  double et_ratio;       // ET boundary at rho = tc_ratio * et_ratio
};

}  // namespace

MultimodalCase generate_case(uint64_t seed, std::array<int, 3> dims,
                             const PhantomParams& params, int patch) {
  check_config(patch >= 1, "patch size must be >= 1");
  for (int a = 0; a < 3; ++a) {
    check_config(dims[a] >= 1, "dims must be positive");
    check_config(dims[a] % patch == 0,
                 "volume dims must be divisible by the patch size");
  }
  check_config(params.min_lesions >= 0 &&
                   params.max_lesions >= params.min_lesions,
               "lesion count range invalid");
  check_config(params.noise_sigma >= 0.0, "noise sigma must be >= 0");

  Rng rng(mix64(seed, 0xCA5Eull));

  // Draw order is fixed; any change breaks byte-level reproducibility.
  Ellipsoid brain;
  for (int a = 0; a < 3; ++a) brain.center[a] = rng.uniform(-0.08, 0.08);
  for (int a = 0; a < 3; ++a) brain.semi[a] = rng.uniform(0.72, 0.90);

  const int n_lesions =
      (int)rng.uniform_int(params.min_lesions, params.max_lesions);
  std::vector<Lesion> lesions(n_lesions);
  for (Lesion& l : lesions) {
    for (int a = 0; a < 3; ++a)
      l.wt.center[a] =
          brain.center[a] + rng.uniform(-0.45, 0.45) * brain.semi[a];
    const double r = rng.uniform(params.wt_radius_lo, params.wt_radius_hi);
    for (int a = 0; a < 3; ++a) l.wt.semi[a] = r * rng.uniform(0.85, 1.25);
    l.tc_ratio = rng.uniform(params.tc_ratio_lo, params.tc_ratio_hi);
    l.et_ratio = rng.uniform(params.et_ratio_lo, params.et_ratio_hi);
  }

  double intensity[5][4];
  for (int r = 0; r < 5; ++r)
    for (int m = 0; m < 4; ++m)
      intensity[r][m] = kIntensity[r][m] + rng.uniform(-0.03, 0.03);

  const int d = dims[0], h = dims[1], w = dims[2];
  MultimodalCase c;
  c.volumes = Tensor<float>::zeros({kNumModalities, d, h, w});
  c.labels = Tensor<uint8_t>::zeros({d, h, w});

  // Tissue row per voxel: 0 outside, 1 tissue, 2..4 tumor classes 1..3.
  std::vector<uint8_t> row((size_t)d * h * w);
  for (int z = 0; z < d; ++z) {
    const double uz = 2.0 * (z + 0.5) / d - 1.0;
    for (int y = 0; y < h; ++y) {
      const double uy = 2.0 * (y + 0.5) / h - 1.0;
      for (int x = 0; x < w; ++x) {
        const double ux = 2.0 * (x + 0.5) / w - 1.0;
        const int64_t v = ((int64_t)z * h + y) * w + x;
        if (brain.rho2(uz, uy, ux) > 1.0) {
          row[v] = 0;
          continue;
        }
        // Class precedence across overlapping lesions: 3 > 1 > 2.
        uint8_t label = 0;
        for (const Lesion& l : lesions) {
          const double rho = std::sqrt(l.wt.rho2(uz, uy, ux));
          if (rho > 1.0) continue;
          uint8_t cls = 2;
          if (rho <= l.tc_ratio * l.et_ratio)
            cls = 3;
          else if (rho <= l.tc_ratio)
            cls = 1;
          if (label == 0)
            label = cls;
          else if (cls == 3 || (cls == 1 && label == 2))
            label = cls;
        }
        c.labels.data[v] = label;
        row[v] = label == 0 ? 1 : (uint8_t)(label + 1);
      }
    }
  }

  // Render + noise, modality-major so the draw order is channel-contiguous.
  const int64_t sp = (int64_t)d * h * w;
  for (int m = 0; m < kNumModalities; ++m) {
    float* out = c.volumes.ptr() + m * sp;
    for (int64_t v = 0; v < sp; ++v) {
      double val = intensity[row[v]][m];
      if (params.noise_sigma > 0.0) val += rng.normal(0.0, params.noise_sigma);
      out[v] = (float)std::clamp(val, 0.0, 1.0);
    }
  }

  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%04llu", (unsigned long long)seed);
  c.case_id = buf;
  return c;
}

RegionMasks derive_region_masks(const Tensor<uint8_t>& labels) {
  RegionMasks r;
  r.dims = labels.shape;
  const int64_t n = labels.numel();
  r.wt.resize(n);
  r.tc.resize(n);
  r.et.resize(n);
  for (int64_t i = 0; i < n; ++i) {
    const uint8_t l = labels.data[i];
    if (l > 3) throw DataError("label value out of range {0..3}");
    r.wt[i] = l != 0;
    r.tc[i] = l == 1 || l == 3;
    r.et[i] = l == 3;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Augmentation.

namespace {

// In-plane 90-degree rotation, one step: dest(i, j) = src(j, n - 1 - i).
// `plane` selects the axis pair: 0 = (d,h), 1 = (d,w), 2 = (h,w).
template <typename T>
void rot90_once(const T* src, T* dst, int d, int h, int w, int plane) {
  for (int z = 0; z < d; ++z)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int sz = z, sy = y, sx = x;
        if (plane == 0) {
          sz = y;
          sy = d - 1 - z;
        } else if (plane == 1) {
          sz = x;
          sx = d - 1 - z;
        } else {
          sy = x;
          sx = h - 1 - y;
        }
        dst[((int64_t)z * h + y) * w + x] = src[((int64_t)sz * h + sy) * w + sx];
      }
}

template <typename T>
void flip_axis(std::vector<T>& a, int d, int h, int w, int axis) {
  auto idx = [&](int z, int y, int x) { return ((int64_t)z * h + y) * w + x; };
  if (axis == 0) {
    for (int z = 0; z < d / 2; ++z)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          std::swap(a[idx(z, y, x)], a[idx(d - 1 - z, y, x)]);
  } else if (axis == 1) {
    for (int z = 0; z < d; ++z)
      for (int y = 0; y < h / 2; ++y)
        for (int x = 0; x < w; ++x)
          std::swap(a[idx(z, y, x)], a[idx(z, h - 1 - y, x)]);
  } else {
    for (int z = 0; z < d; ++z)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w / 2; ++x)
          std::swap(a[idx(z, y, x)], a[idx(z, y, w - 1 - x)]);
  }
}

}  // namespace

MultimodalCase augment(const MultimodalCase& c, uint64_t seed,
                       const AugmentConfig& cfg) {
  const int d = (int)c.labels.shape[0], h = (int)c.labels.shape[1],
            w = (int)c.labels.shape[2];
  const int cd = cfg.crop[0], ch = cfg.crop[1], cw = cfg.crop[2];
  check_config(cd >= 1 && ch >= 1 && cw >= 1, "crop dims must be positive");
  check_config(cd <= d && ch <= h && cw <= w,
               "crop larger than the volume");
  check_config(!cfg.rot90 || (cd == ch && ch == cw),
               "90-degree rotations require a cubic crop");
  check_config(cfg.flip_p >= 0.0 && cfg.flip_p <= 1.0,
               "flip probability outside [0,1]");
  check_config(cfg.intensity_scale >= 0.0 && cfg.intensity_shift >= 0.0,
               "intensity ranges must be >= 0");

  Rng rng(mix64(seed, 0xA0Cull));

  // Fixed draw order: crop origin, flips, rotation, per-modality intensity.
  const int oz = (int)rng.uniform_int(0, d - cd);
  const int oy = (int)rng.uniform_int(0, h - ch);
  const int ox = (int)rng.uniform_int(0, w - cw);
  bool flips[3];
  for (int a = 0; a < 3; ++a) flips[a] = rng.bernoulli(cfg.flip_p);
  int plane = 0, turns = 0;
  if (cfg.rot90) {
    plane = (int)rng.uniform_int(0, 2);
    turns = (int)rng.uniform_int(0, 3);
  }

  MultimodalCase out;
  out.case_id = c.case_id;
  out.spacing = c.spacing;
  out.volumes = Tensor<float>::zeros({kNumModalities, cd, ch, cw});
  out.labels = Tensor<uint8_t>::zeros({cd, ch, cw});

  const int64_t csp = (int64_t)cd * ch * cw;
  const int64_t sp = (int64_t)d * h * w;
  for (int m = 0; m < kNumModalities; ++m) {
    const float* src = c.volumes.ptr() + m * sp;
    float* dst = out.volumes.ptr() + m * csp;
    for (int z = 0; z < cd; ++z)
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
          dst[((int64_t)z * ch + y) * cw + x] =
              src[((int64_t)(oz + z) * h + (oy + y)) * w + (ox + x)];
  }
  for (int z = 0; z < cd; ++z)
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x)
        out.labels.data[((int64_t)z * ch + y) * cw + x] =
            c.labels.data[((int64_t)(oz + z) * h + (oy + y)) * w + (ox + x)];

  for (int a = 0; a < 3; ++a) {
    if (!flips[a]) continue;
    for (int m = 0; m < kNumModalities; ++m) {
      std::vector<float> chan(out.volumes.ptr() + m * csp,
                              out.volumes.ptr() + (m + 1) * csp);
      flip_axis(chan, cd, ch, cw, a);
      std::copy(chan.begin(), chan.end(), out.volumes.ptr() + m * csp);
    }
    flip_axis(out.labels.data, cd, ch, cw, a);
  }

  for (int k = 0; k < turns; ++k) {
    std::vector<float> tmpf(csp);
    for (int m = 0; m < kNumModalities; ++m) {
      rot90_once(out.volumes.ptr() + m * csp, tmpf.data(), cd, ch, cw, plane);
      std::copy(tmpf.begin(), tmpf.end(), out.volumes.ptr() + m * csp);
    }
    std::vector<uint8_t> tmpl(csp);
    rot90_once(out.labels.ptr(), tmpl.data(), cd, ch, cw, plane);
    std::copy(tmpl.begin(), tmpl.end(), out.labels.ptr());
  }

  for (int m = 0; m < kNumModalities; ++m) {
    const double scale =
        rng.uniform(1.0 - cfg.intensity_scale, 1.0 + cfg.intensity_scale);
    const double shift =
        rng.uniform(-cfg.intensity_shift, cfg.intensity_shift);
    float* chan = out.volumes.ptr() + m * csp;
    for (int64_t i = 0; i < csp; ++i)
      chan[i] = (float)std::clamp((double)chan[i] * scale + shift, 0.0, 1.0);
  }
  return out;
}

MultimodalCase center_crop(const MultimodalCase& c, std::array<int, 3> crop) {
  const int d = (int)c.labels.shape[0], h = (int)c.labels.shape[1],
            w = (int)c.labels.shape[2];
  const int cd = crop[0], ch = crop[1], cw = crop[2];
  check_config(cd >= 1 && ch >= 1 && cw >= 1, "crop dims must be positive");
  check_config(cd <= d && ch <= h && cw <= w, "crop larger than the volume");
  const int oz = (d - cd) / 2, oy = (h - ch) / 2, ox = (w - cw) / 2;

  MultimodalCase out;
  out.case_id = c.case_id;
  out.spacing = c.spacing;
  out.volumes = Tensor<float>::zeros({kNumModalities, cd, ch, cw});
  out.labels = Tensor<uint8_t>::zeros({cd, ch, cw});
  const int64_t csp = (int64_t)cd * ch * cw;
  const int64_t sp = (int64_t)d * h * w;
  for (int m = 0; m < kNumModalities; ++m) {
    const float* src = c.volumes.ptr() + m * sp;
    float* dst = out.volumes.ptr() + m * csp;
    for (int z = 0; z < cd; ++z)
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
          dst[((int64_t)z * ch + y) * cw + x] =
              src[((int64_t)(oz + z) * h + (oy + y)) * w + (ox + x)];
  }
  for (int z = 0; z < cd; ++z)
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x)
        out.labels.data[((int64_t)z * ch + y) * cw + x] =
            c.labels.data[((int64_t)(oz + z) * h + (oy + y)) * w + (ox + x)];
  return out;
}

// ---------------------------------------------------------------------------
// On-disk format.

namespace {

constexpr int kFormatVersion = 1;

void store_f32le(std::vector<char>& buf, const float* p, int64_t n) {
  buf.resize((size_t)n * 4);
  for (int64_t i = 0; i < n; ++i) {
    const uint32_t u = std::bit_cast<uint32_t>(p[i]);
    buf[i * 4 + 0] = (char)(u & 0xff);
    buf[i * 4 + 1] = (char)((u >> 8) & 0xff);
    buf[i * 4 + 2] = (char)((u >> 16) & 0xff);
    buf[i * 4 + 3] = (char)((u >> 24) & 0xff);
  }
}

void load_f32le(const std::vector<char>& buf, float* p, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    const uint32_t u = (uint32_t)(uint8_t)buf[i * 4 + 0] |
                       ((uint32_t)(uint8_t)buf[i * 4 + 1] << 8) |
                       ((uint32_t)(uint8_t)buf[i * 4 + 2] << 16) |
                       ((uint32_t)(uint8_t)buf[i * 4 + 3] << 24);
    p[i] = std::bit_cast<float>(u);
  }
}

void write_file(const fs::path& path, const char* data, size_t n) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f.write(data, (std::streamsize)n);
  if (!f) throw DataError("write failed: " + path.string());
}

std::vector<char> read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw FormatError("cannot open: " + path.string());
  const auto size = f.tellg();
  f.seekg(0);
  std::vector<char> buf((size_t)size);
  f.read(buf.data(), size);
  if (!f) throw FormatError("read failed: " + path.string());
  return buf;
}

json parse_json_file(const fs::path& path) {
  const auto buf = read_file(path);
  json j = json::parse(buf.begin(), buf.end(), nullptr, false);
  if (j.is_discarded())
    throw FormatError("malformed JSON: " + path.string());
  return j;
}

}  // namespace

void write_case(const MultimodalCase& c, const fs::path& dir) {
  check_contract(c.volumes.ndim() == 4 &&
                     c.volumes.shape[0] == kNumModalities &&
                     c.labels.ndim() == 3,
                 "write_case: malformed case tensors");
  fs::create_directories(dir);

  json meta;
  meta["format_version"] = kFormatVersion;
  meta["case_id"] = c.case_id;
  meta["dims"] = {c.labels.shape[0], c.labels.shape[1], c.labels.shape[2]};
  meta["spacing"] = {c.spacing[0], c.spacing[1], c.spacing[2]};
  meta["modalities"] = modality_names();
  meta["dtype"] = "f32le";
  meta["label_dtype"] = "u8";
  const std::string mtext = meta.dump(2) + "\n";
  write_file(dir / "meta.json", mtext.data(), mtext.size());

  const int64_t sp = c.labels.numel();
  std::vector<char> buf;
  for (int m = 0; m < kNumModalities; ++m) {
    store_f32le(buf, c.volumes.ptr() + m * sp, sp);
    write_file(dir / ("vol_" + modality_names()[m] + ".raw"), buf.data(),
               buf.size());
  }
  write_file(dir / "seg.raw", (const char*)c.labels.ptr(), (size_t)sp);
}

MultimodalCase read_case(const fs::path& dir) {
  const json meta = parse_json_file(dir / "meta.json");
  for (const char* key : {"format_version", "case_id", "dims", "spacing",
                          "modalities", "dtype", "label_dtype"})
    if (!meta.contains(key))
      throw FormatError("meta.json missing key '" + std::string(key) + "'");
  if (meta["format_version"] != kFormatVersion)
    throw FormatError("unknown case format version");
  if (meta["dtype"] != "f32le" || meta["label_dtype"] != "u8")
    throw FormatError("unknown dtype tag in meta.json");
  if (meta["modalities"] != json(modality_names()))
    throw FormatError("unexpected modality list in meta.json");
  const auto dims = meta["dims"];
  if (!dims.is_array() || dims.size() != 3)
    throw FormatError("dims must be a 3-array");
  const int64_t d = dims[0], h = dims[1], w = dims[2];
  if (d < 1 || h < 1 || w < 1) throw FormatError("non-positive dims");

  MultimodalCase c;
  c.case_id = meta["case_id"];
  for (int a = 0; a < 3; ++a) c.spacing[a] = meta["spacing"][a];
  const int64_t sp = d * h * w;
  c.volumes = Tensor<float>::zeros({kNumModalities, d, h, w});
  c.labels = Tensor<uint8_t>::zeros({d, h, w});
  for (int m = 0; m < kNumModalities; ++m) {
    const auto buf = read_file(dir / ("vol_" + modality_names()[m] + ".raw"));
    if ((int64_t)buf.size() != sp * 4)
      throw FormatError("volume payload size mismatch for modality " +
                        modality_names()[m]);
    load_f32le(buf, c.volumes.ptr() + m * sp, sp);
  }
  const auto seg = read_file(dir / "seg.raw");
  if ((int64_t)seg.size() != sp)
    throw FormatError("segmentation payload size mismatch");
  std::memcpy(c.labels.ptr(), seg.data(), (size_t)sp);
  return c;
}

// ---------------------------------------------------------------------------
// Dataset manifest and splits.

SplitCounts split_counts(int64_t n) {
  SplitCounts s;
  s.val = n / 10;
  s.test = n / 5;
  s.train = n - s.val - s.test;
  if (s.train < 1 || s.test < 1)
    throw DataError("dataset too small to form train/val/test splits (n=" +
                    std::to_string(n) + ")");
  return s;
}

std::vector<std::string> DatasetManifest::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw DataError("unknown split: " + name);
}

void write_manifest(const DatasetManifest& m, uint64_t seed) {
  json j;
  j["format_version"] = kFormatVersion;
  j["seed"] = seed;
  json cases = json::array();
  for (const auto& [names, split] :
       {std::pair{&m.train, "train"}, {&m.val, "val"}, {&m.test, "test"}})
    for (const auto& name : *names)
      cases.push_back({{"name", name}, {"split", split}});
  j["cases"] = std::move(cases);
  const std::string text = j.dump(2) + "\n";
  write_file(m.root / "manifest.json", text.data(), text.size());
}

DatasetManifest read_manifest(const fs::path& root) {
  const json j = parse_json_file(root / "manifest.json");
  if (!j.contains("format_version") || j["format_version"] != kFormatVersion)
    throw FormatError("unknown manifest format version");
  if (!j.contains("cases") || !j["cases"].is_array())
    throw FormatError("manifest missing case list");
  DatasetManifest m;
  m.root = root;
  for (const auto& c : j["cases"]) {
    if (!c.contains("name") || !c.contains("split"))
      throw FormatError("manifest case entry missing name/split");
    const std::string split = c["split"];
    if (split == "train")
      m.train.push_back(c["name"]);
    else if (split == "val")
      m.val.push_back(c["name"]);
    else if (split == "test")
      m.test.push_back(c["name"]);
    else
      throw FormatError("manifest split must be train/val/test");
  }
  return m;
}

std::vector<MultimodalCase> load_split(const DatasetManifest& m,
                                       const std::string& split) {
  std::vector<MultimodalCase> cases;
  for (const auto& name : m.split(split))
    cases.push_back(read_case(m.root / name));
  return cases;
}

}  // namespace data_synth
}  // namespace unime
