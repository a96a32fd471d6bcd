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

#include "unime/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <vector>

#include "unime/parallel.hpp"

namespace unime::kernels {

Conv3dDims Conv3dDims::make(int ci, int co, int d, int h, int w, int k,
                            int stride, int pad) {
  Conv3dDims g;
  g.ci = ci;
  g.co = co;
  g.d = d;
  g.h = h;
  g.w = w;
  g.k = k;
  g.stride = stride;
  g.pad = pad;
  g.od = (d + 2 * pad - k) / stride + 1;
  g.oh = (h + 2 * pad - k) / stride + 1;
  g.ow = (w + 2 * pad - k) / stride + 1;
  assert(g.od > 0 && g.oh > 0 && g.ow > 0);
  return g;
}

ConvT3dDims ConvT3dDims::make(int ci, int co, int d, int h, int w, int k,
                              int stride) {
  ConvT3dDims g;
  g.ci = ci;
  g.co = co;
  g.d = d;
  g.h = h;
  g.w = w;
  g.k = k;
  g.stride = stride;
  g.od = (d - 1) * stride + k;
  g.oh = (h - 1) * stride + k;
  g.ow = (w - 1) * stride + k;
  return g;
}

namespace serial {

// Naive reference kernels. One scalar accumulator per output element, index
// order (ci, kd, kh, kw) for forward / input-grad and raster (zo, yo, xo)
// for weight-grad. The omp kernels reproduce these orders exactly except for
// the conv3d weight-grad k3/s1/p1 fast path, which matches to rounding only.

template <typename T>
void conv3d_fwd(const T* in, const T* wt, const T* bias, T* out,
                const Conv3dDims& g) {
  const int k3 = g.k * g.k * g.k;
  for (int co = 0; co < g.co; ++co)
    for (int zo = 0; zo < g.od; ++zo)
      for (int yo = 0; yo < g.oh; ++yo)
        for (int xo = 0; xo < g.ow; ++xo) {
          T acc = bias ? bias[co] : T(0);
          for (int ci = 0; ci < g.ci; ++ci)
            for (int kd = 0; kd < g.k; ++kd) {
              const int zi = zo * g.stride + kd - g.pad;
              if (zi < 0 || zi >= g.d) continue;
              for (int kh = 0; kh < g.k; ++kh) {
                const int yi = yo * g.stride + kh - g.pad;
                if (yi < 0 || yi >= g.h) continue;
                for (int kw = 0; kw < g.k; ++kw) {
                  const int xi = xo * g.stride + kw - g.pad;
                  if (xi < 0 || xi >= g.w) continue;
                  acc += wt[((int64_t)(co * g.ci + ci) * k3) +
                            (kd * g.k + kh) * g.k + kw] *
                         in[((int64_t)(ci * g.d + zi) * g.h + yi) * g.w + xi];
                }
              }
            }
          out[((int64_t)(co * g.od + zo) * g.oh + yo) * g.ow + xo] = acc;
        }
}

template <typename T>
void conv3d_bwd_input(const T* gout, const T* wt, T* gin,
                      const Conv3dDims& g) {
  const int k3 = g.k * g.k * g.k;
  for (int ci = 0; ci < g.ci; ++ci)
    for (int zi = 0; zi < g.d; ++zi)
      for (int yi = 0; yi < g.h; ++yi)
        for (int xi = 0; xi < g.w; ++xi) {
          T acc = T(0);
          for (int co = 0; co < g.co; ++co)
            for (int kd = 0; kd < g.k; ++kd) {
              const int tz = zi + g.pad - kd;
              if (tz < 0 || tz % g.stride != 0) continue;
              const int zo = tz / g.stride;
              if (zo >= g.od) continue;
              for (int kh = 0; kh < g.k; ++kh) {
                const int ty = yi + g.pad - kh;
                if (ty < 0 || ty % g.stride != 0) continue;
                const int yo = ty / g.stride;
                if (yo >= g.oh) continue;
                for (int kw = 0; kw < g.k; ++kw) {
                  const int tx = xi + g.pad - kw;
                  if (tx < 0 || tx % g.stride != 0) continue;
                  const int xo = tx / g.stride;
                  if (xo >= g.ow) continue;
                  acc += wt[((int64_t)(co * g.ci + ci) * k3) +
                            (kd * g.k + kh) * g.k + kw] *
                         gout[((int64_t)(co * g.od + zo) * g.oh + yo) * g.ow +
                              xo];
                }
              }
            }
          gin[((int64_t)(ci * g.d + zi) * g.h + yi) * g.w + xi] += acc;
        }
}

template <typename T>
void conv3d_bwd_weight(const T* gout, const T* in, T* gw, T* gb,
                       const Conv3dDims& g) {
  const int k3 = g.k * g.k * g.k;
  for (int co = 0; co < g.co; ++co)
    for (int ci = 0; ci < g.ci; ++ci)
      for (int kd = 0; kd < g.k; ++kd)
        for (int kh = 0; kh < g.k; ++kh)
          for (int kw = 0; kw < g.k; ++kw) {
            T acc = T(0);
            for (int zo = 0; zo < g.od; ++zo) {
              const int zi = zo * g.stride + kd - g.pad;
              if (zi < 0 || zi >= g.d) continue;
              for (int yo = 0; yo < g.oh; ++yo) {
                const int yi = yo * g.stride + kh - g.pad;
                if (yi < 0 || yi >= g.h) continue;
                for (int xo = 0; xo < g.ow; ++xo) {
                  const int xi = xo * g.stride + kw - g.pad;
                  if (xi < 0 || xi >= g.w) continue;
                  acc +=
                      gout[((int64_t)(co * g.od + zo) * g.oh + yo) * g.ow +
                           xo] *
                      in[((int64_t)(ci * g.d + zi) * g.h + yi) * g.w + xi];
                }
              }
            }
            gw[((int64_t)(co * g.ci + ci) * k3) + (kd * g.k + kh) * g.k + kw] +=
                acc;
          }
  if (gb) {
    for (int co = 0; co < g.co; ++co) {
      T acc = T(0);
      const T* gc = gout + (int64_t)co * g.od * g.oh * g.ow;
      for (int64_t i = 0; i < (int64_t)g.od * g.oh * g.ow; ++i) acc += gc[i];
      gb[co] += acc;
    }
  }
}

template <typename T>
void convt3d_fwd(const T* in, const T* wt, const T* bias, T* out,
                 const ConvT3dDims& g) {
  const int k3 = g.k * g.k * g.k;
  for (int co = 0; co < g.co; ++co)
    for (int zo = 0; zo < g.od; ++zo)
      for (int yo = 0; yo < g.oh; ++yo)
        for (int xo = 0; xo < g.ow; ++xo) {
          T acc = bias ? bias[co] : T(0);
          for (int ci = 0; ci < g.ci; ++ci)
            for (int kd = 0; kd < g.k; ++kd) {
              const int tz = zo - kd;
              if (tz < 0 || tz % g.stride != 0) continue;
              const int zi = tz / g.stride;
              if (zi >= g.d) continue;
              for (int kh = 0; kh < g.k; ++kh) {
                const int ty = yo - kh;
                if (ty < 0 || ty % g.stride != 0) continue;
                const int yi = ty / g.stride;
                if (yi >= g.h) continue;
                for (int kw = 0; kw < g.k; ++kw) {
                  const int tx = xo - kw;
                  if (tx < 0 || tx % g.stride != 0) continue;
                  const int xi = tx / g.stride;
                  if (xi >= g.w) continue;
                  acc += wt[((int64_t)(ci * g.co + co) * k3) +
                            (kd * g.k + kh) * g.k + kw] *
                         in[((int64_t)(ci * g.d + zi) * g.h + yi) * g.w + xi];
                }
              }
            }
          out[((int64_t)(co * g.od + zo) * g.oh + yo) * g.ow + xo] = acc;
        }
}

template <typename T>
void convt3d_bwd_input(const T* gout, const T* wt, T* gin,
                       const ConvT3dDims& g) {
  const int k3 = g.k * g.k * g.k;
  for (int ci = 0; ci < g.ci; ++ci)
    for (int zi = 0; zi < g.d; ++zi)
      for (int yi = 0; yi < g.h; ++yi)
        for (int xi = 0; xi < g.w; ++xi) {
          T acc = T(0);
          for (int co = 0; co < g.co; ++co)
            for (int kd = 0; kd < g.k; ++kd)
              for (int kh = 0; kh < g.k; ++kh)
                for (int kw = 0; kw < g.k; ++kw)
                  acc += wt[((int64_t)(ci * g.co + co) * k3) +
                            (kd * g.k + kh) * g.k + kw] *
                         gout[((int64_t)(co * g.od + zi * g.stride + kd) *
                                   g.oh +
                               yi * g.stride + kh) *
                                  g.ow +
                              xi * g.stride + kw];
          gin[((int64_t)(ci * g.d + zi) * g.h + yi) * g.w + xi] += acc;
        }
}

template <typename T>
void convt3d_bwd_weight(const T* gout, const T* in, T* gw, T* gb,
                        const ConvT3dDims& g) {
  const int k3 = g.k * g.k * g.k;
  for (int ci = 0; ci < g.ci; ++ci)
    for (int co = 0; co < g.co; ++co)
      for (int kd = 0; kd < g.k; ++kd)
        for (int kh = 0; kh < g.k; ++kh)
          for (int kw = 0; kw < g.k; ++kw) {
            T acc = T(0);
            for (int zi = 0; zi < g.d; ++zi)
              for (int yi = 0; yi < g.h; ++yi)
                for (int xi = 0; xi < g.w; ++xi)
                  acc += in[((int64_t)(ci * g.d + zi) * g.h + yi) * g.w + xi] *
                         gout[((int64_t)(co * g.od + zi * g.stride + kd) *
                                   g.oh +
                               yi * g.stride + kh) *
                                  g.ow +
                              xi * g.stride + kw];
            gw[((int64_t)(ci * g.co + co) * k3) + (kd * g.k + kh) * g.k + kw] +=
                acc;
          }
  if (gb) {
    for (int co = 0; co < g.co; ++co) {
      T acc = T(0);
      const T* gc = gout + (int64_t)co * g.od * g.oh * g.ow;
      for (int64_t i = 0; i < (int64_t)g.od * g.oh * g.ow; ++i) acc += gc[i];
      gb[co] += acc;
    }
  }
}

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n,
               bool accumulate) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T acc = T(0);
      for (int kk = 0; kk < k; ++kk)
        acc += a[(int64_t)i * k + kk] * b[(int64_t)kk * n + j];
      T* dst = c + (int64_t)i * n + j;
      *dst = accumulate ? *dst + acc : acc;
    }
}

template <typename T>
void matmul_nt(const T* a, const T* bt, T* c, int m, int k, int n,
               bool accumulate) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T acc = T(0);
      for (int kk = 0; kk < k; ++kk)
        acc += a[(int64_t)i * k + kk] * bt[(int64_t)j * k + kk];
      T* dst = c + (int64_t)i * n + j;
      *dst = accumulate ? *dst + acc : acc;
    }
}

template <typename T>
void matmul_tn(const T* at, const T* b, T* c, int m, int k, int n,
               bool accumulate) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T acc = T(0);
      for (int kk = 0; kk < k; ++kk)
        acc += at[(int64_t)kk * m + i] * b[(int64_t)kk * n + j];
      T* dst = c + (int64_t)i * n + j;
      *dst = accumulate ? *dst + acc : acc;
    }
}

template <typename T>
void linear_fwd(const T* x, const T* wt, const T* bias, T* y, int rows,
                int din, int dout) {
  for (int s = 0; s < rows; ++s)
    for (int o = 0; o < dout; ++o) {
      T acc = bias ? bias[o] : T(0);
      for (int i = 0; i < din; ++i)
        acc += x[(int64_t)s * din + i] * wt[(int64_t)i * dout + o];
      y[(int64_t)s * dout + o] = acc;
    }
}

template <typename T>
void linear_bwd_input(const T* gy, const T* wt, T* gx, int rows, int din,
                      int dout) {
  for (int s = 0; s < rows; ++s)
    for (int i = 0; i < din; ++i) {
      T acc = T(0);
      for (int o = 0; o < dout; ++o)
        acc += gy[(int64_t)s * dout + o] * wt[(int64_t)i * dout + o];
      gx[(int64_t)s * din + i] += acc;
    }
}

template <typename T>
void linear_bwd_weight(const T* gy, const T* x, T* gw, T* gb, int rows,
                       int din, int dout) {
  for (int i = 0; i < din; ++i)
    for (int o = 0; o < dout; ++o) {
      T acc = T(0);
      for (int s = 0; s < rows; ++s)
        acc += x[(int64_t)s * din + i] * gy[(int64_t)s * dout + o];
      gw[(int64_t)i * dout + o] += acc;
    }
  if (gb) {
    for (int o = 0; o < dout; ++o) {
      T acc = T(0);
      for (int s = 0; s < rows; ++s) acc += gy[(int64_t)s * dout + o];
      gb[o] += acc;
    }
  }
}

}  // namespace serial

namespace omp {

// Optimized kernels. Parallelism is always over disjoint output elements
// (no reductions across threads) and the per-element accumulation order
// matches the serial reference, so the two routes agree bitwise. One
// exception: the k3/s1/p1 weight-gradient fast path folds eight fixed
// position lanes per weight, so its sums agree with the reference to
// rounding, not bit-for-bit. It is still deterministic for any thread
// count.

namespace detail {

// Channels copied inside a zero border of width 1 so the k3/s1/p1 fast
// paths iterate full rows without bounds checks. A zero tap adds exactly
// +0 to a sum, leaving per-element accumulation order intact.
template <typename T>
std::vector<T> pad1(const T* src, int c, int d, int h, int w) {
  const int pd = d + 2, ph = h + 2, pw = w + 2;
  std::vector<T> out((size_t)c * pd * ph * pw, T(0));
  for (int ci = 0; ci < c; ++ci)
    for (int z = 0; z < d; ++z)
      for (int y = 0; y < h; ++y) {
        const T* s = src + (((int64_t)ci * d + z) * h + y) * w;
        T* t =
            out.data() + (((int64_t)ci * pd + z + 1) * ph + y + 1) * pw + 1;
        std::copy(s, s + w, t);
      }
  return out;
}

// All nine taps of one (ci, kd) slice applied to a full output row in the
// serial (kh, kw) order; left-associated adds keep the reference order.
template <typename T>
void conv3d_fwd_k3(const T* in, const T* wt, const T* bias, T* out,
                   const Conv3dDims& g) {
  const int d = g.d, h = g.h, w = g.w;
  const int ph = h + 2, pw = w + 2;
  const int64_t pchan = (int64_t)(d + 2) * ph * pw;
  const std::vector<T> pin = pad1(in, g.ci, d, h, w);
  const int64_t plane = (int64_t)h * w;
#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < g.co; ++co)
    for (int zo = 0; zo < d; ++zo) {
      std::vector<T> acc((size_t)plane, bias ? bias[co] : T(0));
      for (int ci = 0; ci < g.ci; ++ci) {
        const T* pc = pin.data() + ci * pchan;
        const T* wc = wt + (int64_t)(co * g.ci + ci) * 27;
        for (int kd = 0; kd < 3; ++kd) {
          const T* pz = pc + (int64_t)(zo + kd) * ph * pw;
          const T w0 = wc[kd * 9 + 0], w1 = wc[kd * 9 + 1],
                  w2 = wc[kd * 9 + 2], w3 = wc[kd * 9 + 3],
                  w4 = wc[kd * 9 + 4], w5 = wc[kd * 9 + 5],
                  w6 = wc[kd * 9 + 6], w7 = wc[kd * 9 + 7],
                  w8 = wc[kd * 9 + 8];
          for (int yo = 0; yo < h; ++yo) {
            T* arow = acc.data() + (int64_t)yo * w;
            const T* r0 = pz + (int64_t)yo * pw;
            const T* r1 = r0 + pw;
            const T* r2 = r1 + pw;
            // One statement per tap keeps the reference one-round-per-add
            // accumulation; folding taps first would round differently.
            for (int xo = 0; xo < w; ++xo) {
              T a = arow[xo];
              a += w0 * r0[xo];
              a += w1 * r0[xo + 1];
              a += w2 * r0[xo + 2];
              a += w3 * r1[xo];
              a += w4 * r1[xo + 1];
              a += w5 * r1[xo + 2];
              a += w6 * r2[xo];
              a += w7 * r2[xo + 1];
              a += w8 * r2[xo + 2];
              arow[xo] = a;
            }
          }
        }
      }
      std::copy(acc.begin(), acc.end(), out + ((int64_t)co * d + zo) * plane);
    }
}

// Full correlation with reversed taps; per-element order (co, kd, kh, kw)
// as in the reference.
template <typename T>
void conv3d_bwd_input_k3(const T* gout, const T* wt, T* gin,
                         const Conv3dDims& g) {
  const int d = g.d, h = g.h, w = g.w;
  const int ph = h + 2, pw = w + 2;
  const int64_t pchan = (int64_t)(d + 2) * ph * pw;
  const std::vector<T> pg = pad1(gout, g.co, d, h, w);
  const int64_t plane = (int64_t)h * w;
#pragma omp parallel for collapse(2) schedule(static)
  for (int ci = 0; ci < g.ci; ++ci)
    for (int zi = 0; zi < d; ++zi) {
      std::vector<T> acc((size_t)plane, T(0));
      for (int co = 0; co < g.co; ++co) {
        const T* pc = pg.data() + co * pchan;
        const T* wc = wt + (int64_t)(co * g.ci + ci) * 27;
        for (int kd = 0; kd < 3; ++kd) {
          const T* pz = pc + (int64_t)(zi + 2 - kd) * ph * pw;
          const T w0 = wc[kd * 9 + 0], w1 = wc[kd * 9 + 1],
                  w2 = wc[kd * 9 + 2], w3 = wc[kd * 9 + 3],
                  w4 = wc[kd * 9 + 4], w5 = wc[kd * 9 + 5],
                  w6 = wc[kd * 9 + 6], w7 = wc[kd * 9 + 7],
                  w8 = wc[kd * 9 + 8];
          for (int yi = 0; yi < h; ++yi) {
            T* arow = acc.data() + (int64_t)yi * w;
            const T* r0 = pz + (int64_t)(yi + 2) * pw;
            const T* r1 = pz + (int64_t)(yi + 1) * pw;
            const T* r2 = pz + (int64_t)yi * pw;
            for (int xi = 0; xi < w; ++xi) {
              T a = arow[xi];
              a += w0 * r0[xi + 2];
              a += w1 * r0[xi + 1];
              a += w2 * r0[xi];
              a += w3 * r1[xi + 2];
              a += w4 * r1[xi + 1];
              a += w5 * r1[xi];
              a += w6 * r2[xi + 2];
              a += w7 * r2[xi + 1];
              a += w8 * r2[xi];
              arow[xi] = a;
            }
          }
        }
      }
      T* dst = gin + ((int64_t)ci * d + zi) * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] += acc[i];
    }
}

// Each weight gradient is one flat dot product of the gout volume against
// a zero-filled shifted copy of the input volume, accumulated in eight
// fixed lanes (lane = flat index mod 8) folded in lane order at the end.
// The lane split differs from the reference raster chain, so values agree
// to rounding only.
template <typename T>
void conv3d_bwd_weight_k3(const T* gout, const T* in, T* gw,
                          const Conv3dDims& g) {
  const int d = g.d, h = g.h, w = g.w;
  const int64_t plane = (int64_t)h * w;
  const int64_t vol = (int64_t)d * plane;
  const int64_t svol = (int64_t)(d + 2) * plane;
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < g.ci; ++ci) {
    // Shift volume (kh, kw), plane z + 1: in[ci][z] offset by (kh-1, kw-1)
    // with zero fill. Tap (kd, kh, kw) then pairs gout plane z with shift
    // plane z + kd, one contiguous run over the whole volume.
    std::vector<T> shifts((size_t)(9 * svol), T(0));
    const T* inc = in + (int64_t)ci * vol;
    for (int kh = 0; kh < 3; ++kh)
      for (int kw = 0; kw < 3; ++kw) {
        T* s = shifts.data() + (size_t)((kh * 3 + kw) * svol);
        const int x0 = std::max(0, 1 - kw);
        const int x1 = std::min(w, w + 1 - kw);
        for (int z = 0; z < d; ++z)
          for (int y = 0; y < h; ++y) {
            const int ys = y + kh - 1;
            if (ys < 0 || ys >= h) continue;
            const T* src = inc + ((int64_t)z * h + ys) * w + (x0 + kw - 1);
            std::copy(src, src + (x1 - x0),
                      s + (int64_t)(z + 1) * plane + (int64_t)y * w + x0);
          }
      }
    for (int co = 0; co < g.co; ++co) {
      const T* gc = gout + (int64_t)co * vol;
      T* wb = gw + (int64_t)(co * g.ci + ci) * 27;
      for (int kd = 0; kd < 3; ++kd)
        for (int kh = 0; kh < 3; ++kh)
          for (int kw = 0; kw < 3; ++kw) {
            const T* s = shifts.data() + (size_t)((kh * 3 + kw) * svol) +
                         (int64_t)kd * plane;
            T lanes[8] = {};
            int64_t i = 0;
            for (; i + 8 <= vol; i += 8) {
              // The eight chains are independent; simd maps lane l to
              // vector lane l without reassociating any chain.
#pragma omp simd
              for (int l = 0; l < 8; ++l) lanes[l] += gc[i + l] * s[i + l];
            }
            for (int l = 0; i < vol; ++i, ++l) lanes[l] += gc[i] * s[i];
            T acc = lanes[0];
            for (int l = 1; l < 8; ++l) acc += lanes[l];
            wb[(kd * 3 + kh) * 3 + kw] += acc;
          }
    }
  }
}

}  // namespace detail

template <typename T>
void conv3d_fwd(const T* in, const T* wt, const T* bias, T* out,
                const Conv3dDims& g) {
  if (g.k == 3 && g.stride == 1 && g.pad == 1) {
    detail::conv3d_fwd_k3(in, wt, bias, out, g);
    return;
  }
  const int k3 = g.k * g.k * g.k;
  const int64_t plane_sz = (int64_t)g.oh * g.ow;
#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < g.co; ++co)
    for (int zo = 0; zo < g.od; ++zo) {
      T* plane = out + ((int64_t)co * g.od + zo) * plane_sz;
      const T bv = bias ? bias[co] : T(0);
      for (int64_t i = 0; i < plane_sz; ++i) plane[i] = bv;
      for (int ci = 0; ci < g.ci; ++ci) {
        const T* wc = wt + (int64_t)(co * g.ci + ci) * k3;
        const T* inc = in + (int64_t)ci * g.d * g.h * g.w;
        for (int kd = 0; kd < g.k; ++kd) {
          const int zi = zo * g.stride + kd - g.pad;
          if (zi < 0 || zi >= g.d) continue;
          for (int yo = 0; yo < g.oh; ++yo) {
            T* orow = plane + (int64_t)yo * g.ow;
            for (int kh = 0; kh < g.k; ++kh) {
              const int yi = yo * g.stride + kh - g.pad;
              if (yi < 0 || yi >= g.h) continue;
              const T* irow = inc + ((int64_t)zi * g.h + yi) * g.w;
              for (int kw = 0; kw < g.k; ++kw) {
                const T wv = wc[(kd * g.k + kh) * g.k + kw];
                if (g.stride == 1) {
                  const int xlo = std::max(0, g.pad - kw);
                  const int xhi = std::min(g.ow, g.w + g.pad - kw);
                  const T* ir = irow + kw - g.pad;
                  for (int xo = xlo; xo < xhi; ++xo) orow[xo] += wv * ir[xo];
                } else {
                  for (int xo = 0; xo < g.ow; ++xo) {
                    const int xi = xo * g.stride + kw - g.pad;
                    if (xi < 0 || xi >= g.w) continue;
                    orow[xo] += wv * irow[xi];
                  }
                }
              }
            }
          }
        }
      }
    }
}

template <typename T>
void conv3d_bwd_input(const T* gout, const T* wt, T* gin,
                      const Conv3dDims& g) {
  if (g.k == 3 && g.stride == 1 && g.pad == 1) {
    detail::conv3d_bwd_input_k3(gout, wt, gin, g);
    return;
  }
  const int k3 = g.k * g.k * g.k;
#pragma omp parallel for collapse(2) schedule(static)
  for (int ci = 0; ci < g.ci; ++ci)
    for (int zi = 0; zi < g.d; ++zi) {
      T* plane = gin + ((int64_t)ci * g.d + zi) * g.h * g.w;
      for (int co = 0; co < g.co; ++co) {
        const T* wc = wt + (int64_t)(co * g.ci + ci) * k3;
        const T* gc = gout + (int64_t)co * g.od * g.oh * g.ow;
        for (int kd = 0; kd < g.k; ++kd) {
          const int tz = zi + g.pad - kd;
          if (tz < 0 || tz % g.stride != 0) continue;
          const int zo = tz / g.stride;
          if (zo >= g.od) continue;
          for (int yi = 0; yi < g.h; ++yi) {
            T* grow = plane + (int64_t)yi * g.w;
            for (int kh = 0; kh < g.k; ++kh) {
              const int ty = yi + g.pad - kh;
              if (ty < 0 || ty % g.stride != 0) continue;
              const int yo = ty / g.stride;
              if (yo >= g.oh) continue;
              const T* gr = gc + ((int64_t)zo * g.oh + yo) * g.ow;
              for (int kw = 0; kw < g.k; ++kw) {
                const T wv = wc[(kd * g.k + kh) * g.k + kw];
                if (g.stride == 1) {
                  // xo = xi + pad - kw must land in [0, ow)
                  const int xlo = std::max(0, kw - g.pad);
                  const int xhi = std::min(g.w, g.ow + kw - g.pad);
                  const T* gsh = gr + g.pad - kw;
                  for (int xi = xlo; xi < xhi; ++xi) grow[xi] += wv * gsh[xi];
                } else {
                  for (int xo = 0; xo < g.ow; ++xo) {
                    const int xi = xo * g.stride + kw - g.pad;
                    if (xi < 0 || xi >= g.w) continue;
                    grow[xi] += wv * gr[xo];
                  }
                }
              }
            }
          }
        }
      }
    }
}

template <typename T>
void conv3d_bwd_weight(const T* gout, const T* in, T* gw, T* gb,
                       const Conv3dDims& g) {
  const int k3 = g.k * g.k * g.k;
  assert(g.k <= 8);
  if (g.k == 3 && g.stride == 1 && g.pad == 1) {
    detail::conv3d_bwd_weight_k3(gout, in, gw, g);
  } else {
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < g.co; ++co)
      for (int ci = 0; ci < g.ci; ++ci) {
        const T* gc = gout + (int64_t)co * g.od * g.oh * g.ow;
        const T* inc = in + (int64_t)ci * g.d * g.h * g.w;
        for (int kd = 0; kd < g.k; ++kd)
          for (int kh = 0; kh < g.k; ++kh) {
            T acc[8] = {};
            for (int zo = 0; zo < g.od; ++zo) {
              const int zi = zo * g.stride + kd - g.pad;
              if (zi < 0 || zi >= g.d) continue;
              for (int yo = 0; yo < g.oh; ++yo) {
                const int yi = yo * g.stride + kh - g.pad;
                if (yi < 0 || yi >= g.h) continue;
                const T* gr = gc + ((int64_t)zo * g.oh + yo) * g.ow;
                const T* ir = inc + ((int64_t)zi * g.h + yi) * g.w;
                for (int xo = 0; xo < g.ow; ++xo) {
                  const T gv = gr[xo];
                  for (int kw = 0; kw < g.k; ++kw) {
                    const int xi = xo * g.stride + kw - g.pad;
                    if (xi < 0 || xi >= g.w) continue;
                    acc[kw] += gv * ir[xi];
                  }
                }
              }
            }
            T* dst =
                gw + ((int64_t)(co * g.ci + ci) * k3) + (kd * g.k + kh) * g.k;
            for (int kw = 0; kw < g.k; ++kw) dst[kw] += acc[kw];
          }
      }
  }
  if (gb) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.co; ++co) {
      T acc = T(0);
      const T* gc = gout + (int64_t)co * g.od * g.oh * g.ow;
      for (int64_t i = 0; i < (int64_t)g.od * g.oh * g.ow; ++i) acc += gc[i];
      gb[co] += acc;
    }
  }
}

template <typename T>
void convt3d_fwd(const T* in, const T* wt, const T* bias, T* out,
                 const ConvT3dDims& g) {
  const int k3 = g.k * g.k * g.k;
  const int64_t plane_sz = (int64_t)g.oh * g.ow;
  // With k <= stride each output receives at most one tap per axis, so the
  // (yi, kh) loop order below visits contributions in the serial order.
  assert(g.k <= g.stride);
#pragma omp parallel for collapse(2) schedule(static)
  for (int co = 0; co < g.co; ++co)
    for (int zo = 0; zo < g.od; ++zo) {
      T* plane = out + ((int64_t)co * g.od + zo) * plane_sz;
      const T bv = bias ? bias[co] : T(0);
      for (int64_t i = 0; i < plane_sz; ++i) plane[i] = bv;
      for (int ci = 0; ci < g.ci; ++ci) {
        const T* wc = wt + (int64_t)(ci * g.co + co) * k3;
        const T* inc = in + (int64_t)ci * g.d * g.h * g.w;
        for (int kd = 0; kd < g.k; ++kd) {
          const int tz = zo - kd;
          if (tz < 0 || tz % g.stride != 0) continue;
          const int zi = tz / g.stride;
          if (zi >= g.d) continue;
          for (int yi = 0; yi < g.h; ++yi)
            for (int kh = 0; kh < g.k; ++kh) {
              const int yo = yi * g.stride + kh;
              T* orow = plane + (int64_t)yo * g.ow;
              const T* irow = inc + ((int64_t)zi * g.h + yi) * g.w;
              for (int kw = 0; kw < g.k; ++kw) {
                const T wv = wc[(kd * g.k + kh) * g.k + kw];
                for (int xi = 0; xi < g.w; ++xi)
                  orow[xi * g.stride + kw] += wv * irow[xi];
              }
            }
        }
      }
    }
}

template <typename T>
void convt3d_bwd_input(const T* gout, const T* wt, T* gin,
                       const ConvT3dDims& g) {
  const int k3 = g.k * g.k * g.k;
#pragma omp parallel for collapse(2) schedule(static)
  for (int ci = 0; ci < g.ci; ++ci)
    for (int zi = 0; zi < g.d; ++zi) {
      T* plane = gin + ((int64_t)ci * g.d + zi) * g.h * g.w;
      for (int co = 0; co < g.co; ++co) {
        const T* wc = wt + (int64_t)(ci * g.co + co) * k3;
        const T* gc = gout + (int64_t)co * g.od * g.oh * g.ow;
        for (int kd = 0; kd < g.k; ++kd) {
          const int zo = zi * g.stride + kd;
          for (int yi = 0; yi < g.h; ++yi) {
            T* grow = plane + (int64_t)yi * g.w;
            for (int kh = 0; kh < g.k; ++kh) {
              const int yo = yi * g.stride + kh;
              const T* gr = gc + ((int64_t)zo * g.oh + yo) * g.ow;
              for (int kw = 0; kw < g.k; ++kw) {
                const T wv = wc[(kd * g.k + kh) * g.k + kw];
                for (int xi = 0; xi < g.w; ++xi)
                  grow[xi] += wv * gr[xi * g.stride + kw];
              }
            }
          }
        }
      }
    }
}

template <typename T>
void convt3d_bwd_weight(const T* gout, const T* in, T* gw, T* gb,
                        const ConvT3dDims& g) {
  const int k3 = g.k * g.k * g.k;
  assert(g.k <= 8);
#pragma omp parallel for collapse(2) schedule(static)
  for (int ci = 0; ci < g.ci; ++ci)
    for (int co = 0; co < g.co; ++co) {
      const T* gc = gout + (int64_t)co * g.od * g.oh * g.ow;
      const T* inc = in + (int64_t)ci * g.d * g.h * g.w;
      for (int kd = 0; kd < g.k; ++kd)
        for (int kh = 0; kh < g.k; ++kh) {
          T acc[8] = {};
          for (int zi = 0; zi < g.d; ++zi)
            for (int yi = 0; yi < g.h; ++yi) {
              const T* ir = inc + ((int64_t)zi * g.h + yi) * g.w;
              const T* gr = gc + ((int64_t)(zi * g.stride + kd) * g.oh +
                                  yi * g.stride + kh) *
                                     g.ow;
              for (int xi = 0; xi < g.w; ++xi) {
                const T iv = ir[xi];
                for (int kw = 0; kw < g.k; ++kw)
                  acc[kw] += iv * gr[xi * g.stride + kw];
              }
            }
          T* dst = gw + ((int64_t)(ci * g.co + co) * k3) + (kd * g.k + kh) * g.k;
          for (int kw = 0; kw < g.k; ++kw) dst[kw] += acc[kw];
        }
    }
  if (gb) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < g.co; ++co) {
      T acc = T(0);
      const T* gc = gout + (int64_t)co * g.od * g.oh * g.ow;
      for (int64_t i = 0; i < (int64_t)g.od * g.oh * g.ow; ++i) acc += gc[i];
      gb[co] += acc;
    }
  }
}

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    T* crow = c + (int64_t)i * n;
    if (!accumulate)
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    for (int kk = 0; kk < k; ++kk) {
      const T av = a[(int64_t)i * k + kk];
      const T* brow = b + (int64_t)kk * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void matmul_nt(const T* a, const T* bt, T* c, int m, int k, int n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const T* arow = a + (int64_t)i * k;
    T* crow = c + (int64_t)i * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = bt + (int64_t)j * k;
      T acc = T(0);
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

template <typename T>
void matmul_tn(const T* at, const T* b, T* c, int m, int k, int n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    T* crow = c + (int64_t)i * n;
    if (!accumulate)
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    for (int kk = 0; kk < k; ++kk) {
      const T av = at[(int64_t)kk * m + i];
      const T* brow = b + (int64_t)kk * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void linear_fwd(const T* x, const T* wt, const T* bias, T* y, int rows,
                int din, int dout) {
#pragma omp parallel for schedule(static)
  for (int s = 0; s < rows; ++s) {
    T* yrow = y + (int64_t)s * dout;
    if (bias)
      for (int o = 0; o < dout; ++o) yrow[o] = bias[o];
    else
      for (int o = 0; o < dout; ++o) yrow[o] = T(0);
    const T* xrow = x + (int64_t)s * din;
    for (int i = 0; i < din; ++i) {
      const T xv = xrow[i];
      const T* wrow = wt + (int64_t)i * dout;
      for (int o = 0; o < dout; ++o) yrow[o] += xv * wrow[o];
    }
  }
}

template <typename T>
void linear_bwd_input(const T* gy, const T* wt, T* gx, int rows, int din,
                      int dout) {
#pragma omp parallel for schedule(static)
  for (int s = 0; s < rows; ++s) {
    const T* grow = gy + (int64_t)s * dout;
    T* xrow = gx + (int64_t)s * din;
    for (int i = 0; i < din; ++i) {
      const T* wrow = wt + (int64_t)i * dout;
      T acc = T(0);
      for (int o = 0; o < dout; ++o) acc += grow[o] * wrow[o];
      xrow[i] += acc;
    }
  }
}

template <typename T>
void linear_bwd_weight(const T* gy, const T* x, T* gw, T* gb, int rows,
                       int din, int dout) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < din; ++i) {
    T* wrow = gw + (int64_t)i * dout;
    for (int s = 0; s < rows; ++s) {
      const T xv = x[(int64_t)s * din + i];
      const T* grow = gy + (int64_t)s * dout;
      for (int o = 0; o < dout; ++o) wrow[o] += xv * grow[o];
    }
  }
  if (gb) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < dout; ++o) {
      T acc = T(0);
      for (int s = 0; s < rows; ++s) acc += gy[(int64_t)s * dout + o];
      gb[o] += acc;
    }
  }
}

}  // namespace omp

#define UNIME_DISPATCH(fn, ...)            \
  do {                                     \
    if (par::enabled())                    \
      omp::fn(__VA_ARGS__);                \
    else                                   \
      serial::fn(__VA_ARGS__);             \
  } while (0)

template <typename T>
void conv3d_fwd(const T* in, const T* wt, const T* bias, T* out,
                const Conv3dDims& g) {
  UNIME_DISPATCH(conv3d_fwd, in, wt, bias, out, g);
}
template <typename T>
void conv3d_bwd_input(const T* gout, const T* wt, T* gin,
                      const Conv3dDims& g) {
  UNIME_DISPATCH(conv3d_bwd_input, gout, wt, gin, g);
}
template <typename T>
void conv3d_bwd_weight(const T* gout, const T* in, T* gw, T* gb,
                       const Conv3dDims& g) {
  UNIME_DISPATCH(conv3d_bwd_weight, gout, in, gw, gb, g);
}
template <typename T>
void convt3d_fwd(const T* in, const T* wt, const T* bias, T* out,
                 const ConvT3dDims& g) {
  UNIME_DISPATCH(convt3d_fwd, in, wt, bias, out, g);
}
template <typename T>
void convt3d_bwd_input(const T* gout, const T* wt, T* gin,
                       const ConvT3dDims& g) {
  UNIME_DISPATCH(convt3d_bwd_input, gout, wt, gin, g);
}
template <typename T>
void convt3d_bwd_weight(const T* gout, const T* in, T* gw, T* gb,
                        const ConvT3dDims& g) {
  UNIME_DISPATCH(convt3d_bwd_weight, gout, in, gw, gb, g);
}
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n,
               bool accumulate) {
  UNIME_DISPATCH(matmul_nn, a, b, c, m, k, n, accumulate);
}
template <typename T>
void matmul_nt(const T* a, const T* bt, T* c, int m, int k, int n,
               bool accumulate) {
  UNIME_DISPATCH(matmul_nt, a, bt, c, m, k, n, accumulate);
}
template <typename T>
void matmul_tn(const T* at, const T* b, T* c, int m, int k, int n,
               bool accumulate) {
  UNIME_DISPATCH(matmul_tn, at, b, c, m, k, n, accumulate);
}
template <typename T>
void linear_fwd(const T* x, const T* wt, const T* bias, T* y, int rows,
                int din, int dout) {
  UNIME_DISPATCH(linear_fwd, x, wt, bias, y, rows, din, dout);
}
template <typename T>
void linear_bwd_input(const T* gy, const T* wt, T* gx, int rows, int din,
                      int dout) {
  UNIME_DISPATCH(linear_bwd_input, gy, wt, gx, rows, din, dout);
}
template <typename T>
void linear_bwd_weight(const T* gy, const T* x, T* gw, T* gb, int rows,
                       int din, int dout) {
  UNIME_DISPATCH(linear_bwd_weight, gy, x, gw, gb, rows, din, dout);
}

#undef UNIME_DISPATCH

// Explicit instantiations for the two supported scalar types.
#define UNIME_INSTANTIATE(T)                                                  \
  template void serial::conv3d_fwd<T>(const T*, const T*, const T*, T*,      \
                                      const Conv3dDims&);                     \
  template void serial::conv3d_bwd_input<T>(const T*, const T*, T*,          \
                                            const Conv3dDims&);              \
  template void serial::conv3d_bwd_weight<T>(const T*, const T*, T*, T*,     \
                                             const Conv3dDims&);             \
  template void serial::convt3d_fwd<T>(const T*, const T*, const T*, T*,     \
                                       const ConvT3dDims&);                  \
  template void serial::convt3d_bwd_input<T>(const T*, const T*, T*,         \
                                             const ConvT3dDims&);            \
  template void serial::convt3d_bwd_weight<T>(const T*, const T*, T*, T*,    \
                                              const ConvT3dDims&);           \
  template void serial::matmul_nn<T>(const T*, const T*, T*, int, int, int,  \
                                     bool);                                  \
  template void serial::matmul_nt<T>(const T*, const T*, T*, int, int, int,  \
                                     bool);                                  \
  template void serial::matmul_tn<T>(const T*, const T*, T*, int, int, int,  \
                                     bool);                                  \
  template void serial::linear_fwd<T>(const T*, const T*, const T*, T*, int, \
                                      int, int);                             \
  template void serial::linear_bwd_input<T>(const T*, const T*, T*, int,     \
                                            int, int);                       \
  template void serial::linear_bwd_weight<T>(const T*, const T*, T*, T*,     \
                                             int, int, int);                 \
  template void omp::conv3d_fwd<T>(const T*, const T*, const T*, T*,         \
                                   const Conv3dDims&);                       \
  template void omp::conv3d_bwd_input<T>(const T*, const T*, T*,             \
                                         const Conv3dDims&);                 \
  template void omp::conv3d_bwd_weight<T>(const T*, const T*, T*, T*,        \
                                          const Conv3dDims&);                \
  template void omp::convt3d_fwd<T>(const T*, const T*, const T*, T*,        \
                                    const ConvT3dDims&);                     \
  template void omp::convt3d_bwd_input<T>(const T*, const T*, T*,            \
                                          const ConvT3dDims&);               \
  template void omp::convt3d_bwd_weight<T>(const T*, const T*, T*, T*,       \
                                           const ConvT3dDims&);              \
  template void omp::matmul_nn<T>(const T*, const T*, T*, int, int, int,     \
                                  bool);                                     \
  template void omp::matmul_nt<T>(const T*, const T*, T*, int, int, int,     \
                                  bool);                                     \
  template void omp::matmul_tn<T>(const T*, const T*, T*, int, int, int,     \
                                  bool);                                     \
  template void omp::linear_fwd<T>(const T*, const T*, const T*, T*, int,    \
                                   int, int);                                \
  template void omp::linear_bwd_input<T>(const T*, const T*, T*, int, int,   \
                                         int);                               \
  template void omp::linear_bwd_weight<T>(const T*, const T*, T*, T*, int,   \
                                          int, int);                         \
  template void conv3d_fwd<T>(const T*, const T*, const T*, T*,              \
                              const Conv3dDims&);                            \
  template void conv3d_bwd_input<T>(const T*, const T*, T*,                  \
                                    const Conv3dDims&);                      \
  template void conv3d_bwd_weight<T>(const T*, const T*, T*, T*,             \
                                     const Conv3dDims&);                     \
  template void convt3d_fwd<T>(const T*, const T*, const T*, T*,             \
                               const ConvT3dDims&);                          \
  template void convt3d_bwd_input<T>(const T*, const T*, T*,                 \
                                     const ConvT3dDims&);                    \
  template void convt3d_bwd_weight<T>(const T*, const T*, T*, T*,            \
                                      const ConvT3dDims&);                   \
  template void matmul_nn<T>(const T*, const T*, T*, int, int, int, bool);   \
  template void matmul_nt<T>(const T*, const T*, T*, int, int, int, bool);   \
  template void matmul_tn<T>(const T*, const T*, T*, int, int, int, bool);   \
  template void linear_fwd<T>(const T*, const T*, const T*, T*, int, int,    \
                              int);                                          \
  template void linear_bwd_input<T>(const T*, const T*, T*, int, int, int);  \
  template void linear_bwd_weight<T>(const T*, const T*, T*, T*, int, int,   \
                                     int);

UNIME_INSTANTIATE(float)
UNIME_INSTANTIATE(double)

#undef UNIME_INSTANTIATE

}  // namespace unime::kernels
