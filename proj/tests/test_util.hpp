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
// Shared test helpers: independent brute-force oracles and the central
// finite-difference harness. Oracles are written in the most naive form
// possible, on purpose, so they share no structure with the library code.

#ifndef UNIME_TESTS_TEST_UTIL_HPP_
#define UNIME_TESTS_TEST_UTIL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "unime/rng.hpp"
#include "unime/tape.hpp"
#include "unime/tensor.hpp"

namespace testutil {

// Fresh directory under the system temp root; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto base = std::filesystem::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      auto cand = base / (tag + "_" + std::to_string(i));
      std::error_code ec;
      if (std::filesystem::create_directories(cand, ec)) {
        path_ = cand;
        return;
      }
    }
    throw std::runtime_error("cannot create temp dir for tag " + tag);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& sub) const {
    return path_ / sub;
  }

 private:
  std::filesystem::path path_;
};

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

template <typename T>
unime::Tensor<T> random_tensor(unime::Shape shape, uint64_t seed,
                               double scale = 1.0) {
  unime::Tensor<T> t(std::move(shape));
  unime::Rng rng(seed);
  for (auto& v : t.data) v = (T)(scale * rng.normal());
  return t;
}

// ---------------------------------------------------------------------------
// Finite differences. All in double; h scaled to the parameter magnitude.

struct FdCheck {
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

inline double fd_rel_err(double analytic, double numeric) {
  const double denom =
      std::max({1e-6, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / denom;
}

// Central difference of `loss_fn` (which must recompute the full forward
// pass from current parameter values) w.r.t. element `idx` of `prm`.
inline FdCheck central_diff(unime::Parameter<double>& prm, int64_t idx,
                            double analytic_grad,
                            const std::function<double()>& loss_fn,
                            double h = 1e-5) {
  const double save = prm.value.data[idx];
  const double step = h * std::max(1.0, std::fabs(save));
  prm.value.data[idx] = save + step;
  const double up = loss_fn();
  prm.value.data[idx] = save - step;
  const double dn = loss_fn();
  prm.value.data[idx] = save;
  FdCheck out;
  out.analytic = analytic_grad;
  out.numeric = (up - dn) / (2.0 * step);
  out.rel_err = fd_rel_err(out.analytic, out.numeric);
  return out;
}

// ---------------------------------------------------------------------------
// Naive metric oracles (set-based DSC, all-pairs HD percentile).

inline double oracle_dsc(const std::vector<uint8_t>& a,
                         const std::vector<uint8_t>& b) {
  int64_t inter = 0, ca = 0, cb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i]) ++ca;
    if (b[i]) ++cb;
    if (a[i] && b[i]) ++inter;
  }
  if (ca + cb == 0) return 1.0;
  return 2.0 * (double)inter / (double)(ca + cb);
}

// Surface voxels the slow way: member with any 6-neighbor outside the mask
// or outside the volume.
inline std::vector<std::array<int, 3>> oracle_surface(
    const std::vector<uint8_t>& m, int d, int h, int w) {
  auto at = [&](int z, int y, int x) -> bool {
    if (z < 0 || z >= d || y < 0 || y >= h || x < 0 || x >= w) return false;
    return m[(size_t)((z * h + y) * w + x)] != 0;
  };
  std::vector<std::array<int, 3>> out;
  for (int z = 0; z < d; ++z)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!at(z, y, x)) continue;
        const bool interior = at(z - 1, y, x) && at(z + 1, y, x) &&
                              at(z, y - 1, x) && at(z, y + 1, x) &&
                              at(z, y, x - 1) && at(z, y, x + 1);
        if (!interior) out.push_back({z, y, x});
      }
  return out;
}

inline double oracle_percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  if (v.empty()) return 0.0;
  const double rank = p * (double)(v.size() - 1);
  const size_t lo = (size_t)std::floor(rank);
  const size_t hi = (size_t)std::ceil(rank);
  const double frac = rank - (double)lo;
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

inline double oracle_hd95(const std::vector<uint8_t>& a,
                          const std::vector<uint8_t>& b, int d, int h, int w,
                          const std::array<double, 3>& sp, double pct) {
  const bool ea = std::none_of(a.begin(), a.end(), [](uint8_t v) { return v; });
  const bool eb = std::none_of(b.begin(), b.end(), [](uint8_t v) { return v; });
  if (ea && eb) return 0.0;
  if (ea != eb) {
    double s = 0.0;
    const int dims[3] = {d, h, w};
    for (int i = 0; i < 3; ++i) s += ((dims[i] - 1) * sp[i]) * ((dims[i] - 1) * sp[i]);
    return std::sqrt(s);
  }
  const auto sa = oracle_surface(a, d, h, w);
  const auto sb = oracle_surface(b, d, h, w);
  auto dist = [&](const std::array<int, 3>& p1, const std::array<int, 3>& p2) {
    const double dz = (p1[0] - p2[0]) * sp[0];
    const double dy = (p1[1] - p2[1]) * sp[1];
    const double dx = (p1[2] - p2[2]) * sp[2];
    return std::sqrt(dz * dz + dy * dy + dx * dx);
  };
  std::vector<double> pool;
  for (const auto& p1 : sa) {
    double best = 1e300;
    for (const auto& p2 : sb) best = std::min(best, dist(p1, p2));
    pool.push_back(best);
  }
  for (const auto& p2 : sb) {
    double best = 1e300;
    for (const auto& p1 : sa) best = std::min(best, dist(p1, p2));
    pool.push_back(best);
  }
  return oracle_percentile(std::move(pool), pct);
}

}  // namespace testutil

#endif  // UNIME_TESTS_TEST_UTIL_HPP_
