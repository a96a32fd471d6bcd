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

#include "unime/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "unime/errors.hpp"

namespace unime {
namespace evaluation {
namespace {

// Large finite stand-in for infinity inside the distance transform; keeps
// parabola intersection arithmetic NaN-free.
constexpr double kFar = 1e30;

int64_t count_nonzero(const std::vector<uint8_t>& m) {
  int64_t n = 0;
  for (uint8_t v : m) n += v != 0;
  return n;
}

void check_hd_inputs(const std::vector<uint8_t>& a,
                     const std::vector<uint8_t>& b, const Shape& dims,
                     const std::array<double, 3>& spacing, double pct) {
  check_contract(dims.size() == 3, "hd95: dims must be [D, H, W]");
  const int64_t n = dims[0] * dims[1] * dims[2];
  check_contract((int64_t)a.size() == n && (int64_t)b.size() == n,
                 "hd95: mask sizes must match dims");
  for (double s : spacing)
    check_contract(s > 0.0, "hd95: spacing must be positive");
  check_contract(pct > 0.0 && pct <= 1.0, "hd95: percentile outside (0, 1]");
}

// Directed surface distances from each voxel of `from` to the nearest voxel
// of `to`, brute force over all pairs.
void directed_brute(const std::vector<std::array<int, 3>>& from,
                    const std::vector<std::array<int, 3>>& to,
                    const std::array<double, 3>& spacing,
                    std::vector<double>& out) {
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dz = (p[0] - q[0]) * spacing[0];
      const double dy = (p[1] - q[1]) * spacing[1];
      const double dx = (p[2] - q[2]) * spacing[2];
      const double d2 = dz * dz + dy * dy + dx * dx;
      if (d2 < best) best = d2;
    }
    out.push_back(std::sqrt(best));
  }
}

// One pass of the exact 1D squared Euclidean distance transform (lower
// envelope of parabolas) over uniformly spaced samples x_i = i * s.
void edt_1d(const double* f, double* d, int n, double s) {
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -kFar;
  z[1] = kFar;
  auto xq = [s](int i) { return i * s; };
  for (int q = 1; q < n; ++q) {
    double inter;
    for (;;) {
      const int p = v[k];
      inter = ((f[q] + xq(q) * xq(q)) - (f[p] + xq(p) * xq(p))) /
              (2.0 * xq(q) - 2.0 * xq(p));
      if (inter <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = inter;
    z[k + 1] = kFar;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < xq(q)) ++k;
    const double dx = xq(q) - xq(v[k]);
    d[q] = dx * dx + f[v[k]];
  }
}

// Exact squared EDT of a seed set over the full grid, anisotropic spacing.
std::vector<double> edt_field(const std::vector<std::array<int, 3>>& seeds,
                              const Shape& dims,
                              const std::array<double, 3>& spacing) {
  const int d = (int)dims[0], h = (int)dims[1], w = (int)dims[2];
  std::vector<double> g((size_t)d * h * w, kFar);
  for (const auto& p : seeds)
    g[((int64_t)p[0] * h + p[1]) * w + p[2]] = 0.0;

  std::vector<double> line(std::max({d, h, w}));
  std::vector<double> out(std::max({d, h, w}));
  // x pass
  for (int z = 0; z < d; ++z)
    for (int y = 0; y < h; ++y) {
      double* row = g.data() + ((int64_t)z * h + y) * w;
      edt_1d(row, out.data(), w, spacing[2]);
      std::copy(out.data(), out.data() + w, row);
    }
  // y pass
  for (int z = 0; z < d; ++z)
    for (int x = 0; x < w; ++x) {
      for (int y = 0; y < h; ++y) line[y] = g[((int64_t)z * h + y) * w + x];
      edt_1d(line.data(), out.data(), h, spacing[1]);
      for (int y = 0; y < h; ++y) g[((int64_t)z * h + y) * w + x] = out[y];
    }
  // z pass
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int z = 0; z < d; ++z) line[z] = g[((int64_t)z * h + y) * w + x];
      edt_1d(line.data(), out.data(), d, spacing[0]);
      for (int z = 0; z < d; ++z) g[((int64_t)z * h + y) * w + x] = out[z];
    }
  return g;
}

double hd_from_surfaces(const std::vector<std::array<int, 3>>& sa,
                        const std::vector<std::array<int, 3>>& sb,
                        const Shape& dims,
                        const std::array<double, 3>& spacing, double pct,
                        bool use_edt) {
  std::vector<double> dists;
  dists.reserve(sa.size() + sb.size());
  if (use_edt) {
    const int h = (int)dims[1], w = (int)dims[2];
    const auto db = edt_field(sb, dims, spacing);
    for (const auto& p : sa)
      dists.push_back(std::sqrt(db[((int64_t)p[0] * h + p[1]) * w + p[2]]));
    const auto da = edt_field(sa, dims, spacing);
    for (const auto& p : sb)
      dists.push_back(std::sqrt(da[((int64_t)p[0] * h + p[1]) * w + p[2]]));
  } else {
    directed_brute(sa, sb, spacing, dists);
    directed_brute(sb, sa, spacing, dists);
  }
  return percentile(std::move(dists), pct);
}

double hd95_impl(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b,
                 const Shape& dims, const std::array<double, 3>& spacing,
                 double pct, bool use_edt) {
  check_hd_inputs(a, b, dims, spacing, pct);
  const bool ea = count_nonzero(a) == 0, eb = count_nonzero(b) == 0;
  if (ea && eb) return 0.0;
  if (ea || eb) return empty_mask_sentinel(dims, spacing);
  return hd_from_surfaces(surface_voxels(a, dims), surface_voxels(b, dims),
                          dims, spacing, pct, use_edt);
}

}  // namespace

double dsc(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
  check_contract(a.size() == b.size(), "dsc: mask sizes differ");
  int64_t na = 0, nb = 0, ni = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const bool ia = a[i] != 0, ib = b[i] != 0;
    na += ia;
    nb += ib;
    ni += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * (double)ni / (double)(na + nb);
}

std::vector<std::array<int, 3>> surface_voxels(
    const std::vector<uint8_t>& mask, const Shape& dims) {
  check_contract(dims.size() == 3, "surface_voxels: dims must be [D, H, W]");
  const int d = (int)dims[0], h = (int)dims[1], w = (int)dims[2];
  check_contract((int64_t)mask.size() == (int64_t)d * h * w,
                 "surface_voxels: mask size must match dims");
  std::vector<std::array<int, 3>> out;
  auto at = [&](int z, int y, int x) {
    return mask[((int64_t)z * h + y) * w + x] != 0;
  };
  for (int z = 0; z < d; ++z)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!at(z, y, x)) continue;
        const bool boundary = z == 0 || z == d - 1 || y == 0 || y == h - 1 ||
                              x == 0 || x == w - 1;
        if (boundary || !at(z - 1, y, x) || !at(z + 1, y, x) ||
            !at(z, y - 1, x) || !at(z, y + 1, x) || !at(z, y, x - 1) ||
            !at(z, y, x + 1)) {
          out.push_back({z, y, x});
        }
      }
  return out;
}

double percentile(std::vector<double> values, double p) {
  check_contract(!values.empty(), "percentile: empty sample");
  check_contract(p > 0.0 && p <= 1.0, "percentile: p outside (0, 1]");
  std::sort(values.begin(), values.end());
  const double rank = p * (double)(values.size() - 1);
  const size_t lo = (size_t)rank;
  if (lo + 1 >= values.size()) return values.back();
  const double frac = rank - (double)lo;
  return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

double empty_mask_sentinel(const Shape& dims,
                           const std::array<double, 3>& spacing) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double e = (double)(dims[i] - 1) * spacing[i];
    s += e * e;
  }
  return std::sqrt(s);
}

double hd95(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b,
            const Shape& dims, const std::array<double, 3>& spacing,
            double pct) {
  const int64_t numel = dims.size() == 3 ? dims[0] * dims[1] * dims[2] : 0;
  return hd95_impl(a, b, dims, spacing, pct, /*use_edt=*/numel > 32768);
}

double hd95_brute(const std::vector<uint8_t>& a,
                  const std::vector<uint8_t>& b, const Shape& dims,
                  const std::array<double, 3>& spacing, double pct) {
  return hd95_impl(a, b, dims, spacing, pct, /*use_edt=*/false);
}

double hd95_edt(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b,
                const Shape& dims, const std::array<double, 3>& spacing,
                double pct) {
  return hd95_impl(a, b, dims, spacing, pct, /*use_edt=*/true);
}

Tensor<uint8_t> argmax_labels(const Tensor<float>& logits) {
  check_contract(logits.ndim() == 4, "argmax_labels: logits must be rank 4");
  const int c = (int)logits.shape[0];
  check_contract(c >= 1 && c <= 255, "argmax_labels: bad class count");
  const int64_t sp = logits.numel() / c;
  Tensor<uint8_t> out({logits.shape[1], logits.shape[2], logits.shape[3]});
  for (int64_t i = 0; i < sp; ++i) {
    int best = 0;
    float bv = logits.data[i];
    for (int ch = 1; ch < c; ++ch) {
      const float v = logits.data[(int64_t)ch * sp + i];
      if (v > bv) {
        bv = v;
        best = ch;
      }
    }
    out.data[i] = (uint8_t)best;
  }
  return out;
}

void ProtocolReport::compute_averages() {
  check_contract(!rows.empty(), "report has no rows");
  avg_dsc = {0.0, 0.0, 0.0};
  avg_hd95 = {0.0, 0.0, 0.0};
  for (const auto& r : rows)
    for (int g = 0; g < 3; ++g) {
      avg_dsc[g] += r.dsc[g];
      avg_hd95[g] += r.hd95[g];
    }
  for (int g = 0; g < 3; ++g) {
    avg_dsc[g] /= (double)rows.size();
    avg_hd95[g] /= (double)rows.size();
  }
}

ProtocolReport evaluate_protocol(
    const std::vector<data_synth::MultimodalCase>& cases, const SegmentFn& fn,
    double hd_percentile) {
  if (cases.empty())
    throw ProtocolError("evaluation requires a non-empty case list");
  ProtocolReport report;
  for (const auto& delta : masking::canonical_subsets()) {
    SubsetRow row;
    row.delta = delta;
    for (const auto& c : cases) {
      const Tensor<uint8_t> pred = fn(c, delta);
      check_contract(pred.shape == c.labels.shape,
                     "prediction dims differ from the ground truth");
      const auto pm = data_synth::derive_region_masks(pred);
      const auto gm = data_synth::derive_region_masks(c.labels);
      const std::array<const std::vector<uint8_t>*, 3> pr{&pm.wt, &pm.tc,
                                                          &pm.et};
      const std::array<const std::vector<uint8_t>*, 3> gr{&gm.wt, &gm.tc,
                                                          &gm.et};
      CaseMetrics cm;
      cm.case_id = c.case_id;
      cm.delta = delta;
      for (int g = 0; g < 3; ++g) {
        cm.dsc[g] = 100.0 * dsc(*pr[g], *gr[g]);
        cm.hd95[g] =
            hd95(*pr[g], *gr[g], c.labels.shape, c.spacing, hd_percentile);
        row.dsc[g] += cm.dsc[g];
        row.hd95[g] += cm.hd95[g];
      }
      report.per_case.push_back(std::move(cm));
    }
    for (int g = 0; g < 3; ++g) {
      row.dsc[g] /= (double)cases.size();
      row.hd95[g] /= (double)cases.size();
    }
    report.rows.push_back(row);
  }
  report.compute_averages();
  return report;
}

void write_csv(const ProtocolReport& report, const std::filesystem::path& p) {
  check_contract(report.rows.size() == masking::canonical_subsets().size(),
                 "report must hold all 15 subset rows");
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + p.string());
  f << "flair,t1,t1ce,t2,region,dsc,hd95\n";
  char buf[128];
  for (int g = 0; g < 3; ++g) {
    for (const auto& r : report.rows) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%s,%.17g,%.17g",
                    (int)r.delta[0], (int)r.delta[1], (int)r.delta[2],
                    (int)r.delta[3], kRegionNames[g], r.dsc[g], r.hd95[g]);
      f << buf << "\n";
    }
  }
  f.flush();
  if (!f) throw DataError("write failed: " + p.string());
}

ProtocolReport parse_csv(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw FormatError("cannot open: " + p.string());
  std::string line;
  if (!std::getline(f, line) || line != "flair,t1,t1ce,t2,region,dsc,hd95")
    throw FormatError(p.string() + ": bad or missing CSV header");

  const auto& subsets = masking::canonical_subsets();
  ProtocolReport report;
  report.rows.resize(subsets.size());
  for (size_t i = 0; i < subsets.size(); ++i)
    report.rows[i].delta = subsets[i];

  for (int g = 0; g < 3; ++g) {
    for (size_t i = 0; i < subsets.size(); ++i) {
      if (!std::getline(f, line))
        throw FormatError(p.string() + ": truncated report");
      std::stringstream ss(line);
      std::string field;
      std::array<std::string, 7> fields;
      for (int k = 0; k < 7; ++k) {
        if (!std::getline(ss, field, ','))
          throw FormatError(p.string() + ": short row '" + line + "'");
        fields[k] = field;
      }
      for (int m = 0; m < 4; ++m) {
        if (fields[m] != std::to_string((int)subsets[i][m]))
          throw FormatError(p.string() + ": subset order differs from the "
                            "canonical protocol order");
      }
      if (fields[4] != kRegionNames[g])
        throw FormatError(p.string() + ": unexpected region '" + fields[4] +
                          "'");
      report.rows[i].dsc[g] = std::stod(fields[5]);
      report.rows[i].hd95[g] = std::stod(fields[6]);
    }
  }
  if (std::getline(f, line) && !line.empty())
    throw FormatError(p.string() + ": trailing content after 45 rows");
  report.compute_averages();
  return report;
}

void write_markdown(const ProtocolReport& report,
                    const std::filesystem::path& p) {
  check_contract(report.rows.size() == masking::canonical_subsets().size(),
                 "report must hold all 15 subset rows");
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + p.string());
  f << "| FLAIR | T1 | T1ce | T2 | DSC WT | DSC TC | DSC ET | HD95 WT | "
       "HD95 TC | HD95 ET |\n";
  f << "|---|---|---|---|---|---|---|---|---|---|\n";
  char buf[64];
  for (const auto& r : report.rows) {
    f << "|";
    for (int m = 0; m < 4; ++m) f << " " << (r.delta[m] ? "●" : "○") << " |";
    for (int g = 0; g < 3; ++g) {
      std::snprintf(buf, sizeof(buf), " %.2f |", r.dsc[g]);
      f << buf;
    }
    for (int g = 0; g < 3; ++g) {
      std::snprintf(buf, sizeof(buf), " %.2f |", r.hd95[g]);
      f << buf;
    }
    f << "\n";
  }
  f << "| Avg. | | | |";
  for (int g = 0; g < 3; ++g) {
    std::snprintf(buf, sizeof(buf), " %.2f |", report.avg_dsc[g]);
    f << buf;
  }
  for (int g = 0; g < 3; ++g) {
    std::snprintf(buf, sizeof(buf), " %.2f |", report.avg_hd95[g]);
    f << buf;
  }
  f << "\n";
  f.flush();
  if (!f) throw DataError("write failed: " + p.string());
}

void write_jsonl(const ProtocolReport& report,
                 const std::filesystem::path& p) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + p.string());
  for (const auto& cm : report.per_case) {
    nlohmann::json j;
    j["case_id"] = cm.case_id;
    const auto names = data_synth::modality_names();
    for (int m = 0; m < 4; ++m) j[names[m]] = (int)cm.delta[m];
    for (int g = 0; g < 3; ++g) {
      j[kRegionNames[g]] = {{"dsc", cm.dsc[g]}, {"hd95", cm.hd95[g]}};
    }
    f << j.dump() << "\n";
  }
  f.flush();
  if (!f) throw DataError("write failed: " + p.string());
}

}  // namespace evaluation
}  // namespace unime
