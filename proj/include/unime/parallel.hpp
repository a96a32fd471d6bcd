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

#ifndef UNIME_PARALLEL_HPP_
#define UNIME_PARALLEL_HPP_

#include <cstdint>

namespace unime::par {

// Global switch between the OpenMP kernels and the serial reference kernels.
// Parallel kernels assign each output element to exactly one thread and keep
// a fixed accumulation order, so the two routes agree bitwise (tests assert
// exactly that) except for the conv3d weight-gradient fast path, whose fixed
// lane split reorders each sum; there the routes agree to rounding and each
// route is still bit-reproducible for any thread count.
bool enabled();
void set_enabled(bool on);

// Honors UNIME_NUM_WORKERS if set (caps the OpenMP thread count).
void init_from_env();
int thread_count();

// Fixed-chunk pairwise-ish reduction: partial sums over 4096-element blocks,
// then a serial sum over blocks. The summation order is independent of the
// thread count, so reductions stay deterministic under any parallelism.
double block_sum(const float* x, int64_t n);
double block_sum(const double* x, int64_t n);

// Same reduction over squared elements.
double block_sum_sq(const float* x, int64_t n);
double block_sum_sq(const double* x, int64_t n);

}  // namespace unime::par

#endif  // UNIME_PARALLEL_HPP_
