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
// Times every OpenMP kernel against its serial reference on training-scale
// shapes and checks agreement: bitwise for order-preserving kernels, a
// relative tolerance for the conv3d weight-grad fast path whose summation
// order differs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "unime/kernels.hpp"
#include "unime/parallel.hpp"
#include "unime/rng.hpp"

namespace {

using unime::Rng;
namespace kn = unime::kernels;

int g_reps = 5;
bool g_all_match = true;

std::vector<float> random_vec(int64_t n, uint64_t seed) {
  std::vector<float> v((size_t)n);
  Rng rng(seed);
  for (auto& x : v) x = (float)rng.normal(0.0, 1.0);
  return v;
}

double time_best_ms(const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < g_reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best,
                    std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void report(const std::string& name, const std::string& shape,
            double serial_ms, double omp_ms, bool match) {
  g_all_match = g_all_match && match;
  std::printf("%-22s %-28s %9.3f ms %9.3f ms %6.2fx  %s\n", name.c_str(),
              shape.c_str(), serial_ms, omp_ms, serial_ms / omp_ms,
              match ? "bitwise-equal" : "MISMATCH");
}

double max_rel_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max(1.0, std::fabs((double)a[i]));
    worst = std::max(worst, std::fabs((double)a[i] - (double)b[i]) / denom);
  }
  return worst;
}

void report_tol(const std::string& name, const std::string& shape,
                double serial_ms, double omp_ms, double rel, double tol) {
  const bool match = rel <= tol;
  g_all_match = g_all_match && match;
  std::printf("%-22s %-28s %9.3f ms %9.3f ms %6.2fx  %s (rel %.1e)\n",
              name.c_str(), shape.c_str(), serial_ms, omp_ms,
              serial_ms / omp_ms, match ? "within-tol" : "MISMATCH", rel);
}

void bench_conv3d(int ci, int co, int dim, int k, int stride, int pad) {
  const auto g = kn::Conv3dDims::make(ci, co, dim, dim, dim, k, stride, pad);
  const auto in = random_vec((int64_t)ci * dim * dim * dim, 1);
  const auto wt = random_vec((int64_t)co * ci * k * k * k, 2);
  const auto bias = random_vec(co, 3);
  const int64_t on = (int64_t)co * g.od * g.oh * g.ow;
  std::vector<float> a((size_t)on), b((size_t)on);

  const double ts = time_best_ms([&] {
    kn::serial::conv3d_fwd(in.data(), wt.data(), bias.data(), a.data(), g);
  });
  const double tp = time_best_ms([&] {
    kn::omp::conv3d_fwd(in.data(), wt.data(), bias.data(), b.data(), g);
  });
  char shape[64];
  std::snprintf(shape, sizeof(shape), "%dx%d %d^3 k%d s%d", ci, co, dim, k,
                stride);
  report("conv3d_fwd", shape, ts, tp,
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);

  // Backward pair on the same geometry.
  const auto gout = random_vec(on, 4);
  std::vector<float> gin_a(in.size(), 0.0f), gin_b(in.size(), 0.0f);
  const double ts2 = time_best_ms([&] {
    std::fill(gin_a.begin(), gin_a.end(), 0.0f);
    kn::serial::conv3d_bwd_input(gout.data(), wt.data(), gin_a.data(), g);
  });
  const double tp2 = time_best_ms([&] {
    std::fill(gin_b.begin(), gin_b.end(), 0.0f);
    kn::omp::conv3d_bwd_input(gout.data(), wt.data(), gin_b.data(), g);
  });
  report("conv3d_bwd_input", shape, ts2, tp2,
         std::memcmp(gin_a.data(), gin_b.data(),
                     gin_a.size() * sizeof(float)) == 0);

  std::vector<float> gw_a(wt.size(), 0.0f), gw_b(wt.size(), 0.0f);
  std::vector<float> gb_a(bias.size(), 0.0f), gb_b(bias.size(), 0.0f);
  const double ts3 = time_best_ms([&] {
    std::fill(gw_a.begin(), gw_a.end(), 0.0f);
    std::fill(gb_a.begin(), gb_a.end(), 0.0f);
    kn::serial::conv3d_bwd_weight(gout.data(), in.data(), gw_a.data(),
                                  gb_a.data(), g);
  });
  const double tp3 = time_best_ms([&] {
    std::fill(gw_b.begin(), gw_b.end(), 0.0f);
    std::fill(gb_b.begin(), gb_b.end(), 0.0f);
    kn::omp::conv3d_bwd_weight(gout.data(), in.data(), gw_b.data(),
                               gb_b.data(), g);
  });
  const bool gb_same =
      std::memcmp(gb_a.data(), gb_b.data(), gb_a.size() * sizeof(float)) == 0;
  if (k == 3 && stride == 1 && pad == 1) {
    // Fast path reorders the per-weight sum; bias grads stay bitwise.
    report_tol("conv3d_bwd_weight", shape, ts3, tp3,
               std::max(max_rel_diff(gw_a, gw_b), gb_same ? 0.0 : 1.0), 1e-3);
  } else {
    report("conv3d_bwd_weight", shape, ts3, tp3,
           std::memcmp(gw_a.data(), gw_b.data(),
                       gw_a.size() * sizeof(float)) == 0 &&
               gb_same);
  }
}

void bench_convt3d(int ci, int co, int dim, int k, int stride) {
  const auto g = kn::ConvT3dDims::make(ci, co, dim, dim, dim, k, stride);
  const auto in = random_vec((int64_t)ci * dim * dim * dim, 5);
  const auto wt = random_vec((int64_t)ci * co * k * k * k, 6);
  const int64_t on = (int64_t)co * g.od * g.oh * g.ow;
  std::vector<float> a((size_t)on), b((size_t)on);

  const float* no_bias = nullptr;
  const double ts = time_best_ms([&] {
    kn::serial::convt3d_fwd(in.data(), wt.data(), no_bias, a.data(), g);
  });
  const double tp = time_best_ms([&] {
    kn::omp::convt3d_fwd(in.data(), wt.data(), no_bias, b.data(), g);
  });
  char shape[64];
  std::snprintf(shape, sizeof(shape), "%dx%d %d^3 k%d s%d", ci, co, dim, k,
                stride);
  report("convt3d_fwd", shape, ts, tp,
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

void bench_matmul(int m, int k, int n) {
  const auto a = random_vec((int64_t)m * k, 7);
  const auto b = random_vec((int64_t)k * n, 8);
  std::vector<float> c1((size_t)m * n), c2((size_t)m * n);

  const double ts = time_best_ms(
      [&] { kn::serial::matmul_nn(a.data(), b.data(), c1.data(), m, k, n,
                                  false); });
  const double tp = time_best_ms(
      [&] { kn::omp::matmul_nn(a.data(), b.data(), c2.data(), m, k, n,
                               false); });
  char shape[64];
  std::snprintf(shape, sizeof(shape), "%dx%dx%d", m, k, n);
  report("matmul_nn", shape, ts, tp,
         std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(float)) == 0);
  const double gflop = 2.0 * m * k * n / 1e9;
  std::printf("%-22s %-28s serial %.2f GF/s, omp %.2f GF/s\n", "", "",
              gflop / (ts / 1e3), gflop / (tp / 1e3));
}

void bench_linear(int rows, int din, int dout) {
  const auto x = random_vec((int64_t)rows * din, 9);
  const auto wt = random_vec((int64_t)dout * din, 10);
  const auto bias = random_vec(dout, 11);
  std::vector<float> y1((size_t)rows * dout), y2((size_t)rows * dout);

  const double ts = time_best_ms([&] {
    kn::serial::linear_fwd(x.data(), wt.data(), bias.data(), y1.data(), rows,
                           din, dout);
  });
  const double tp = time_best_ms([&] {
    kn::omp::linear_fwd(x.data(), wt.data(), bias.data(), y2.data(), rows, din,
                        dout);
  });
  char shape[64];
  std::snprintf(shape, sizeof(shape), "rows%d %d->%d", rows, din, dout);
  report("linear_fwd", shape, ts, tp,
         std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(float)) == 0);
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--reps" && i + 1 < argc)
      g_reps = std::atoi(argv[++i]);
  }
  unime::par::init_from_env();
  std::printf("threads: %d, reps: %d (best-of)\n\n", unime::par::thread_count(),
              g_reps);
  std::printf("%-22s %-28s %12s %12s %7s\n", "kernel", "shape", "serial",
              "omp", "speedup");

  bench_conv3d(16, 16, 16, 3, 1, 1);   // stage-2 encoder block
  bench_conv3d(4, 96, 16, 8, 8, 0);    // tokenizer
  bench_conv3d(64, 128, 4, 3, 2, 1);   // deep encoder stage
  bench_convt3d(128, 64, 2, 2, 2);     // decoder upsample
  bench_convt3d(32, 16, 8, 2, 2);
  bench_matmul(256, 256, 256);
  bench_matmul(12, 96, 384);           // desk attention projection
  bench_linear(512, 96, 384);

  std::printf("\n%s\n",
              g_all_match ? "all outputs agree" : "MISMATCH DETECTED");
  return g_all_match ? 0 : 1;
}
