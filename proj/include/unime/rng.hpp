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

#ifndef UNIME_RNG_HPP_
#define UNIME_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <random>

namespace unime {

// splitmix64 finalizer; used to derive independent streams from a base seed.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(mix64(a) ^ b); }
inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) {
  return mix64(mix64(a, b) ^ c);
}

// Deterministic random stream. The engine is std::mt19937_64 (fully specified
// by the standard); all distributions are mapped by hand so that sequences are
// identical across platforms and standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in the inclusive range [lo, hi], rejection-free modulo
  // bias is negligible for the ranges used here but we reject anyway.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t v;
    do {
      v = gen_();
    } while (v >= limit);
    return lo + static_cast<int64_t>(v % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; draws two uniforms per call, the sine branch is discarded so
  // the draw count per call is fixed.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Normal truncated to +-2 sigma, the usual initializer convention.
  double trunc_normal(double stddev) {
    double z = normal();
    while (std::fabs(z) > 2.0) z = normal();
    return stddev * z;
  }

  // Derive an independent substream; independent of this stream's position.
  Rng fork(uint64_t stream) const { return Rng(mix64(seed_, stream)); }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace unime

#endif  // UNIME_RNG_HPP_
