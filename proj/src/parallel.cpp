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

#include "unime/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace unime::par {

namespace {
std::atomic<bool> g_enabled{true};

constexpr int64_t kBlock = 4096;

template <typename T>
double block_sum_impl(const T* x, int64_t n) {
  if (n == 0) return 0.0;
  int64_t nblocks = (n + kBlock - 1) / kBlock;
  std::vector<double> partial(static_cast<size_t>(nblocks));
#pragma omp parallel for schedule(static) if (g_enabled.load())
  for (int64_t b = 0; b < nblocks; ++b) {
    double acc = 0.0;
    int64_t end = std::min(n, (b + 1) * kBlock);
    for (int64_t i = b * kBlock; i < end; ++i) acc += static_cast<double>(x[i]);
    partial[static_cast<size_t>(b)] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}
}  // namespace

bool enabled() { return g_enabled.load(); }
void set_enabled(bool on) { g_enabled.store(on); }

void init_from_env() {
#ifdef _OPENMP
  if (const char* w = std::getenv("UNIME_NUM_WORKERS")) {
    int n = std::atoi(w);
    if (n > 0) omp_set_num_threads(std::min(n, omp_get_max_threads()));
  }
#endif
}

int thread_count() {
#ifdef _OPENMP
  return g_enabled.load() ? omp_get_max_threads() : 1;
#else
  return 1;
#endif
}

double block_sum(const float* x, int64_t n) { return block_sum_impl(x, n); }
double block_sum(const double* x, int64_t n) { return block_sum_impl(x, n); }

namespace {
template <typename T>
double block_sum_sq_impl(const T* x, int64_t n) {
  if (n == 0) return 0.0;
  int64_t nblocks = (n + kBlock - 1) / kBlock;
  std::vector<double> partial(static_cast<size_t>(nblocks));
#pragma omp parallel for schedule(static) if (g_enabled.load())
  for (int64_t b = 0; b < nblocks; ++b) {
    double acc = 0.0;
    int64_t end = std::min(n, (b + 1) * kBlock);
    for (int64_t i = b * kBlock; i < end; ++i) {
      double v = static_cast<double>(x[i]);
      acc += v * v;
    }
    partial[static_cast<size_t>(b)] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}
}  // namespace

double block_sum_sq(const float* x, int64_t n) {
  return block_sum_sq_impl(x, n);
}
double block_sum_sq(const double* x, int64_t n) {
  return block_sum_sq_impl(x, n);
}

}  // namespace unime::par
