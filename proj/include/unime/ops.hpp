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
// Differentiable op library. Every op appends one node to the tape and
// installs a backward hook that accumulates into its inputs' gradients.
// Reductions use fixed-order accumulation (par::block_sum or serial
// index-order loops) so results do not depend on the thread count.

#ifndef UNIME_OPS_HPP_
#define UNIME_OPS_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "unime/errors.hpp"
#include "unime/kernels.hpp"
#include "unime/parallel.hpp"
#include "unime/tape.hpp"
#include "unime/tensor.hpp"

namespace unime::ops {

namespace detail {

template <typename T>
inline bool wants_grad(Tape<T>& t, std::initializer_list<Val> ins) {
  if (!t.grad_enabled()) return false;
  for (Val v : ins)
    if (v.valid() && t.requires_grad(v)) return true;
  return false;
}

template <typename T>
inline T sigmoid_scalar(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

// GELU in the exact erf form and its derivative.
template <typename T>
inline T gelu_scalar(T x) {
  const T kInvSqrt2 = T(0.7071067811865475244008443621048490393L);
  return x * T(0.5) * (T(1) + std::erf(x * kInvSqrt2));
}
template <typename T>
inline T gelu_grad_scalar(T x) {
  const T kInvSqrt2 = T(0.7071067811865475244008443621048490393L);
  const T kInvSqrt2Pi = T(0.3989422804014326779399460599343818685L);
  const T cdf = T(0.5) * (T(1) + std::erf(x * kInvSqrt2));
  const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * x * x);
  return cdf + x * pdf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise.

template <typename T>
Val add(Tape<T>& t, Val a, Val b) {
  const Tensor<T>& av = t.val(a);
  const Tensor<T>& bv = t.val(b);
  check_contract(av.shape == bv.shape, "add: shape mismatch " +
                                           shape_str(av.shape) + " vs " +
                                           shape_str(bv.shape));
  Tensor<T> y = av;
  const int64_t n = y.numel();
  T* yp = y.ptr();
  const T* bp = bv.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int64_t i = 0; i < n; ++i) yp[i] += bp[i];
  const bool rg = detail::wants_grad(t, {a, b});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, a, b, out, n]() {
      const T* g = tp->grad(out).ptr();
      for (Val v : {a, b}) {
        if (!tp->requires_grad(v)) continue;
        T* gv = tp->grad(v).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
        for (int64_t i = 0; i < n; ++i) gv[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Val scale(Tape<T>& t, Val a, T c) {
  const Tensor<T>& av = t.val(a);
  Tensor<T> y = av;
  const int64_t n = y.numel();
  T* yp = y.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int64_t i = 0; i < n; ++i) yp[i] *= c;
  const bool rg = detail::wants_grad(t, {a});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, a, out, c, n]() {
      const T* g = tp->grad(out).ptr();
      T* ga = tp->grad(a).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int64_t i = 0; i < n; ++i) ga[i] += c * g[i];
    });
  }
  return out;
}

// Hadamard product.
template <typename T>
Val mul(Tape<T>& t, Val a, Val b) {
  const Tensor<T>& av = t.val(a);
  const Tensor<T>& bv = t.val(b);
  check_contract(av.shape == bv.shape, "mul: shape mismatch " +
                                           shape_str(av.shape) + " vs " +
                                           shape_str(bv.shape));
  Tensor<T> y = av;
  const int64_t n = y.numel();
  T* yp = y.ptr();
  const T* bp = bv.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int64_t i = 0; i < n; ++i) yp[i] *= bp[i];
  const bool rg = detail::wants_grad(t, {a, b});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, a, b, out, n]() {
      const T* g = tp->grad(out).ptr();
      if (tp->requires_grad(a)) {
        const T* bp2 = tp->val(b).ptr();
        T* ga = tp->grad(a).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * bp2[i];
      }
      if (tp->requires_grad(b)) {
        const T* ap2 = tp->val(a).ptr();
        T* gb = tp->grad(b).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * ap2[i];
      }
    });
  }
  return out;
}

template <typename T>
Val gelu(Tape<T>& t, Val x) {
  const Tensor<T>& xv = t.val(x);
  Tensor<T> y(xv.shape);
  const int64_t n = y.numel();
  const T* xp = xv.ptr();
  T* yp = y.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int64_t i = 0; i < n; ++i) yp[i] = detail::gelu_scalar(xp[i]);
  const bool rg = detail::wants_grad(t, {x});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, out, n]() {
      const T* g = tp->grad(out).ptr();
      const T* xp2 = tp->val(x).ptr();
      T* gx = tp->grad(x).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int64_t i = 0; i < n; ++i)
        gx[i] += g[i] * detail::gelu_grad_scalar(xp2[i]);
    });
  }
  return out;
}

template <typename T>
Val silu(Tape<T>& t, Val x) {
  const Tensor<T>& xv = t.val(x);
  Tensor<T> y(xv.shape);
  const int64_t n = y.numel();
  const T* xp = xv.ptr();
  T* yp = y.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int64_t i = 0; i < n; ++i) {
    const T s = detail::sigmoid_scalar(xp[i]);
    yp[i] = xp[i] * s;
  }
  const bool rg = detail::wants_grad(t, {x});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, out, n]() {
      const T* g = tp->grad(out).ptr();
      const T* xp2 = tp->val(x).ptr();
      T* gx = tp->grad(x).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int64_t i = 0; i < n; ++i) {
        const T s = detail::sigmoid_scalar(xp2[i]);
        gx[i] += g[i] * s * (T(1) + xp2[i] * (T(1) - s));
      }
    });
  }
  return out;
}

template <typename T>
Val sigmoid(Tape<T>& t, Val x) {
  const Tensor<T>& xv = t.val(x);
  Tensor<T> y(xv.shape);
  const int64_t n = y.numel();
  const T* xp = xv.ptr();
  T* yp = y.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int64_t i = 0; i < n; ++i) yp[i] = detail::sigmoid_scalar(xp[i]);
  const bool rg = detail::wants_grad(t, {x});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, out, n]() {
      const T* g = tp->grad(out).ptr();
      const T* yp2 = tp->val(out).ptr();
      T* gx = tp->grad(x).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int64_t i = 0; i < n; ++i)
        gx[i] += g[i] * yp2[i] * (T(1) - yp2[i]);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dense layers.

// x [..., din] * w [din, dout] + b [dout]
template <typename T>
Val linear(Tape<T>& t, Val x, Val w, Val b = kNoVal) {
  const Tensor<T>& xv = t.val(x);
  const Tensor<T>& wv = t.val(w);
  check_contract(wv.ndim() == 2, "linear: weight must be rank 2");
  const int din = (int)wv.shape[0];
  const int dout = (int)wv.shape[1];
  check_contract(xv.ndim() >= 1 && xv.shape.back() == din,
                 "linear: input last dim != din");
  const int rows = (int)(xv.numel() / din);
  Shape oshape = xv.shape;
  oshape.back() = dout;
  Tensor<T> y(oshape);
  kernels::linear_fwd(xv.ptr(), wv.ptr(),
                      b.valid() ? t.val(b).ptr() : nullptr, y.ptr(), rows,
                      din, dout);
  const bool rg = detail::wants_grad(t, {x, w, b});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, w, b, out, rows, din, dout]() {
      const T* g = tp->grad(out).ptr();
      if (tp->requires_grad(x))
        kernels::linear_bwd_input(g, tp->val(w).ptr(), tp->grad(x).ptr(),
                                  rows, din, dout);
      const bool wg = tp->requires_grad(w);
      const bool bg = b.valid() && tp->requires_grad(b);
      if (wg)
        kernels::linear_bwd_weight(g, tp->val(x).ptr(), tp->grad(w).ptr(),
                                   bg ? tp->grad(b).ptr() : nullptr, rows,
                                   din, dout);
      else if (bg) {
        T* gb = tp->grad(b).ptr();
        for (int o = 0; o < dout; ++o) {
          T acc = T(0);
          for (int s = 0; s < rows; ++s) acc += g[(int64_t)s * dout + o];
          gb[o] += acc;
        }
      }
    });
  }
  return out;
}

// x [ci, d, h, w] * w [co, ci, k, k, k] (+ b [co]), cubic kernel.
template <typename T>
Val conv3d(Tape<T>& t, Val x, Val w, Val b, int stride, int pad) {
  const Tensor<T>& xv = t.val(x);
  const Tensor<T>& wv = t.val(w);
  check_contract(xv.ndim() == 4, "conv3d: input must be rank 4");
  check_contract(wv.ndim() == 5 && wv.shape[2] == wv.shape[3] &&
                     wv.shape[3] == wv.shape[4],
                 "conv3d: weight must be [co,ci,k,k,k]");
  check_contract(wv.shape[1] == xv.shape[0], "conv3d: channel mismatch");
  const auto g = kernels::Conv3dDims::make(
      (int)xv.shape[0], (int)wv.shape[0], (int)xv.shape[1], (int)xv.shape[2],
      (int)xv.shape[3], (int)wv.shape[2], stride, pad);
  Tensor<T> y({g.co, g.od, g.oh, g.ow});
  kernels::conv3d_fwd(xv.ptr(), wv.ptr(),
                      b.valid() ? t.val(b).ptr() : nullptr, y.ptr(), g);
  const bool rg = detail::wants_grad(t, {x, w, b});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, w, b, out, g]() {
      const T* gy = tp->grad(out).ptr();
      if (tp->requires_grad(x))
        kernels::conv3d_bwd_input(gy, tp->val(w).ptr(), tp->grad(x).ptr(), g);
      const bool wg = tp->requires_grad(w);
      const bool bg = b.valid() && tp->requires_grad(b);
      if (wg)
        kernels::conv3d_bwd_weight(gy, tp->val(x).ptr(), tp->grad(w).ptr(),
                                   bg ? tp->grad(b).ptr() : nullptr, g);
      else if (bg) {
        T* gb = tp->grad(b).ptr();
        const int64_t plane = (int64_t)g.od * g.oh * g.ow;
        for (int co = 0; co < g.co; ++co) {
          T acc = T(0);
          for (int64_t i = 0; i < plane; ++i) acc += gy[co * plane + i];
          gb[co] += acc;
        }
      }
    });
  }
  return out;
}

// x [ci, d, h, w] * w [ci, co, k, k, k] (+ b [co]), pad 0.
template <typename T>
Val conv_transpose3d(Tape<T>& t, Val x, Val w, Val b, int stride) {
  const Tensor<T>& xv = t.val(x);
  const Tensor<T>& wv = t.val(w);
  check_contract(xv.ndim() == 4, "conv_transpose3d: input must be rank 4");
  check_contract(wv.ndim() == 5 && wv.shape[2] == wv.shape[3] &&
                     wv.shape[3] == wv.shape[4],
                 "conv_transpose3d: weight must be [ci,co,k,k,k]");
  check_contract(wv.shape[0] == xv.shape[0],
                 "conv_transpose3d: channel mismatch");
  const auto g = kernels::ConvT3dDims::make(
      (int)xv.shape[0], (int)wv.shape[1], (int)xv.shape[1], (int)xv.shape[2],
      (int)xv.shape[3], (int)wv.shape[2], stride);
  Tensor<T> y({g.co, g.od, g.oh, g.ow});
  kernels::convt3d_fwd(xv.ptr(), wv.ptr(),
                       b.valid() ? t.val(b).ptr() : nullptr, y.ptr(), g);
  const bool rg = detail::wants_grad(t, {x, w, b});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, w, b, out, g]() {
      const T* gy = tp->grad(out).ptr();
      if (tp->requires_grad(x))
        kernels::convt3d_bwd_input(gy, tp->val(w).ptr(), tp->grad(x).ptr(),
                                   g);
      const bool wg = tp->requires_grad(w);
      const bool bg = b.valid() && tp->requires_grad(b);
      if (wg)
        kernels::convt3d_bwd_weight(gy, tp->val(x).ptr(), tp->grad(w).ptr(),
                                    bg ? tp->grad(b).ptr() : nullptr, g);
      else if (bg) {
        T* gb = tp->grad(b).ptr();
        const int64_t plane = (int64_t)g.od * g.oh * g.ow;
        for (int co = 0; co < g.co; ++co) {
          T acc = T(0);
          for (int64_t i = 0; i < plane; ++i) acc += gy[co * plane + i];
          gb[co] += acc;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batched matmul (for attention).

// a [B,M,K] x b [B,N,K]^T -> [B,M,N]
template <typename T>
Val matmul_batched_nt(Tape<T>& t, Val a, Val b) {
  const Tensor<T>& av = t.val(a);
  const Tensor<T>& bv = t.val(b);
  check_contract(av.ndim() == 3 && bv.ndim() == 3 &&
                     av.shape[0] == bv.shape[0] && av.shape[2] == bv.shape[2],
                 "matmul_batched_nt: bad shapes");
  const int bb = (int)av.shape[0], m = (int)av.shape[1],
            k = (int)av.shape[2], n = (int)bv.shape[1];
  Tensor<T> y({bb, m, n});
  for (int i = 0; i < bb; ++i)
    kernels::matmul_nt(av.ptr() + (int64_t)i * m * k,
                       bv.ptr() + (int64_t)i * n * k,
                       y.ptr() + (int64_t)i * m * n, m, k, n, false);
  const bool rg = detail::wants_grad(t, {a, b});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, a, b, out, bb, m, k, n]() {
      const T* g = tp->grad(out).ptr();
      if (tp->requires_grad(a)) {
        T* ga = tp->grad(a).ptr();
        const T* bp = tp->val(b).ptr();
        for (int i = 0; i < bb; ++i)
          kernels::matmul_nn(g + (int64_t)i * m * n, bp + (int64_t)i * n * k,
                             ga + (int64_t)i * m * k, m, n, k, true);
      }
      if (tp->requires_grad(b)) {
        T* gb = tp->grad(b).ptr();
        const T* ap = tp->val(a).ptr();
        for (int i = 0; i < bb; ++i)
          kernels::matmul_tn(g + (int64_t)i * m * n, ap + (int64_t)i * m * k,
                             gb + (int64_t)i * n * k, n, m, k, true);
      }
    });
  }
  return out;
}

// a [B,M,K] x b [B,K,N] -> [B,M,N]
template <typename T>
Val matmul_batched_nn(Tape<T>& t, Val a, Val b) {
  const Tensor<T>& av = t.val(a);
  const Tensor<T>& bv = t.val(b);
  check_contract(av.ndim() == 3 && bv.ndim() == 3 &&
                     av.shape[0] == bv.shape[0] && av.shape[2] == bv.shape[1],
                 "matmul_batched_nn: bad shapes");
  const int bb = (int)av.shape[0], m = (int)av.shape[1],
            k = (int)av.shape[2], n = (int)bv.shape[2];
  Tensor<T> y({bb, m, n});
  for (int i = 0; i < bb; ++i)
    kernels::matmul_nn(av.ptr() + (int64_t)i * m * k,
                       bv.ptr() + (int64_t)i * k * n,
                       y.ptr() + (int64_t)i * m * n, m, k, n, false);
  const bool rg = detail::wants_grad(t, {a, b});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, a, b, out, bb, m, k, n]() {
      const T* g = tp->grad(out).ptr();
      if (tp->requires_grad(a)) {
        T* ga = tp->grad(a).ptr();
        const T* bp = tp->val(b).ptr();
        for (int i = 0; i < bb; ++i)
          kernels::matmul_nt(g + (int64_t)i * m * n, bp + (int64_t)i * k * n,
                             ga + (int64_t)i * m * k, m, n, k, true);
      }
      if (tp->requires_grad(b)) {
        T* gb = tp->grad(b).ptr();
        const T* ap = tp->val(a).ptr();
        for (int i = 0; i < bb; ++i)
          kernels::matmul_tn(ap + (int64_t)i * m * k, g + (int64_t)i * m * n,
                             gb + (int64_t)i * k * n, k, m, n, true);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and softmax.

// Softmax over the last dimension.
template <typename T>
Val softmax_last(Tape<T>& t, Val x) {
  const Tensor<T>& xv = t.val(x);
  const int c = (int)xv.shape.back();
  const int64_t rows = xv.numel() / c;
  Tensor<T> y(xv.shape);
  const T* xp = xv.ptr();
  T* yp = y.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xp + r * c;
    T* yr = yp + r * c;
    T mx = xr[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    T s = T(0);
    for (int j = 0; j < c; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    const T inv = T(1) / s;
    for (int j = 0; j < c; ++j) yr[j] *= inv;
  }
  const bool rg = detail::wants_grad(t, {x});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, out, rows, c]() {
      const T* g = tp->grad(out).ptr();
      const T* yp2 = tp->val(out).ptr();
      T* gx = tp->grad(x).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int64_t r = 0; r < rows; ++r) {
        const T* gr = g + r * c;
        const T* yr = yp2 + r * c;
        T* gxr = gx + r * c;
        T dot = T(0);
        for (int j = 0; j < c; ++j) dot += gr[j] * yr[j];
        for (int j = 0; j < c; ++j) gxr[j] += yr[j] * (gr[j] - dot);
      }
    });
  }
  return out;
}

// LayerNorm over the last dimension with affine [C] parameters.
template <typename T>
Val layer_norm(Tape<T>& t, Val x, Val gain, Val bias, T eps) {
  const Tensor<T>& xv = t.val(x);
  const int c = (int)xv.shape.back();
  const int64_t rows = xv.numel() / c;
  check_contract(t.val(gain).numel() == c && t.val(bias).numel() == c,
                 "layer_norm: affine size mismatch");
  Tensor<T> y(xv.shape);
  auto mu = std::make_shared<std::vector<T>>(rows);
  auto rstd = std::make_shared<std::vector<T>>(rows);
  const T* xp = xv.ptr();
  const T* gp = t.val(gain).ptr();
  const T* bp = t.val(bias).ptr();
  T* yp = y.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xp + r * c;
    T* yr = yp + r * c;
    T m = T(0);
    for (int j = 0; j < c; ++j) m += xr[j];
    m /= T(c);
    T v = T(0);
    for (int j = 0; j < c; ++j) v += (xr[j] - m) * (xr[j] - m);
    v /= T(c);
    const T rs = T(1) / std::sqrt(v + eps);
    (*mu)[r] = m;
    (*rstd)[r] = rs;
    for (int j = 0; j < c; ++j) yr[j] = (xr[j] - m) * rs * gp[j] + bp[j];
  }
  const bool rg = detail::wants_grad(t, {x, gain, bias});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, gain, bias, out, rows, c, mu, rstd]() {
      const T* g = tp->grad(out).ptr();
      const T* xp2 = tp->val(x).ptr();
      const T* gp2 = tp->val(gain).ptr();
      if (tp->requires_grad(x)) {
        T* gx = tp->grad(x).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
        for (int64_t r = 0; r < rows; ++r) {
          const T* xr = xp2 + r * c;
          const T* gr = g + r * c;
          T* gxr = gx + r * c;
          const T m = (*mu)[r], rs = (*rstd)[r];
          T s1 = T(0), s2 = T(0);
          for (int j = 0; j < c; ++j) {
            const T xh = (xr[j] - m) * rs;
            const T dxh = gr[j] * gp2[j];
            s1 += dxh;
            s2 += dxh * xh;
          }
          for (int j = 0; j < c; ++j) {
            const T xh = (xr[j] - m) * rs;
            const T dxh = gr[j] * gp2[j];
            gxr[j] += rs * (dxh - s1 / T(c) - xh * s2 / T(c));
          }
        }
      }
      const bool gg = tp->requires_grad(gain);
      const bool bg = tp->requires_grad(bias);
      if (gg || bg) {
        T* ggain = gg ? tp->grad(gain).ptr() : nullptr;
        T* gbias = bg ? tp->grad(bias).ptr() : nullptr;
#pragma omp parallel for schedule(static) if (par::enabled())
        for (int j = 0; j < c; ++j) {
          T sg = T(0), sb = T(0);
          for (int64_t r = 0; r < rows; ++r) {
            const T xh = (xp2[r * c + j] - (*mu)[r]) * (*rstd)[r];
            sg += g[r * c + j] * xh;
            sb += g[r * c + j];
          }
          if (ggain) ggain[j] += sg;
          if (gbias) gbias[j] += sb;
        }
      }
    });
  }
  return out;
}

// InstanceNorm: per-channel statistics over the spatial dims of [C, ...].
template <typename T>
Val instance_norm(Tape<T>& t, Val x, Val gain, Val bias, T eps) {
  const Tensor<T>& xv = t.val(x);
  check_contract(xv.ndim() >= 2, "instance_norm: input must be rank >= 2");
  const int c = (int)xv.shape[0];
  const int64_t s = xv.numel() / c;
  check_contract(t.val(gain).numel() == c && t.val(bias).numel() == c,
                 "instance_norm: affine size mismatch");
  Tensor<T> y(xv.shape);
  auto mu = std::make_shared<std::vector<T>>(c);
  auto rstd = std::make_shared<std::vector<T>>(c);
  const T* xp = xv.ptr();
  const T* gp = t.val(gain).ptr();
  const T* bp = t.val(bias).ptr();
  T* yp = y.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int ch = 0; ch < c; ++ch) {
    const T* xr = xp + (int64_t)ch * s;
    T* yr = yp + (int64_t)ch * s;
    T m = par::block_sum(xr, s) / T(s);
    T v = T(0);
    for (int64_t j = 0; j < s; ++j) v += (xr[j] - m) * (xr[j] - m);
    v /= T(s);
    const T rs = T(1) / std::sqrt(v + eps);
    (*mu)[ch] = m;
    (*rstd)[ch] = rs;
    const T gc = gp[ch], bc = bp[ch];
    for (int64_t j = 0; j < s; ++j) yr[j] = (xr[j] - m) * rs * gc + bc;
  }
  const bool rg = detail::wants_grad(t, {x, gain, bias});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, gain, bias, out, c, s, mu, rstd]() {
      const T* g = tp->grad(out).ptr();
      const T* xp2 = tp->val(x).ptr();
      const T* gp2 = tp->val(gain).ptr();
      const bool xg = tp->requires_grad(x);
      const bool gg = tp->requires_grad(gain);
      const bool bg = tp->requires_grad(bias);
      T* gx = xg ? tp->grad(x).ptr() : nullptr;
      T* ggain = gg ? tp->grad(gain).ptr() : nullptr;
      T* gbias = bg ? tp->grad(bias).ptr() : nullptr;
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int ch = 0; ch < c; ++ch) {
        const T* xr = xp2 + (int64_t)ch * s;
        const T* gr = g + (int64_t)ch * s;
        const T m = (*mu)[ch], rs = (*rstd)[ch], gc = gp2[ch];
        T sgx = T(0), sb = T(0);
        for (int64_t j = 0; j < s; ++j) {
          const T xh = (xr[j] - m) * rs;
          sgx += gr[j] * xh;
          sb += gr[j];
        }
        if (gx) {
          const T s1 = sb * gc, s2 = sgx * gc;
          T* gxr = gx + (int64_t)ch * s;
          for (int64_t j = 0; j < s; ++j) {
            const T xh = (xr[j] - m) * rs;
            const T dxh = gr[j] * gc;
            gxr[j] += rs * (dxh - s1 / T(s) - xh * s2 / T(s));
          }
        }
        if (ggain) ggain[ch] += sgx;
        if (gbias) gbias[ch] += sb;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rotary position embedding over a 3D grid, factorized per axis.

// x [H, S, dh]; pos[s] = (z, y, x) grid coordinates. Channels are split into
// three even groups of 2*floor(dh/6); pairs (2j, 2j+1) inside the group for
// axis a rotate by angle pos[s][a] * base^(-2j / group), remaining channels
// pass through unchanged.
template <typename T>
Val rope3d(Tape<T>& t, Val x,
           std::shared_ptr<const std::vector<std::array<int, 3>>> pos,
           T base) {
  const Tensor<T>& xv = t.val(x);
  check_contract(xv.ndim() == 3, "rope3d: input must be [heads, S, dh]");
  const int nh = (int)xv.shape[0];
  const int sn = (int)xv.shape[1];
  const int dh = (int)xv.shape[2];
  check_contract((int)pos->size() == sn, "rope3d: position count mismatch");
  const int npair = dh / 6;          // pairs per axis group
  const int group = 2 * npair;       // channels per axis group
  auto theta = std::make_shared<std::vector<T>>(npair);
  for (int j = 0; j < npair; ++j)
    (*theta)[j] = std::pow(base, -T(2 * j) / T(group));
  Tensor<T> y(xv.shape);
  const T* xp = xv.ptr();
  T* yp = y.ptr();
  const int64_t rows = (int64_t)nh * sn;
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int64_t r = 0; r < rows; ++r) {
    const int sidx = (int)(r % sn);
    const T* xr = xp + r * dh;
    T* yr = yp + r * dh;
    for (int j = 0; j < dh; ++j) yr[j] = xr[j];
    for (int a = 0; a < 3; ++a) {
      const T p = T((*pos)[sidx][a]);
      for (int j = 0; j < npair; ++j) {
        const T phi = p * (*theta)[j];
        const T cs = std::cos(phi), sg = std::sin(phi);
        const int c0 = a * group + 2 * j;
        const T x0 = xr[c0], x1 = xr[c0 + 1];
        yr[c0] = x0 * cs - x1 * sg;
        yr[c0 + 1] = x0 * sg + x1 * cs;
      }
    }
  }
  const bool rg = detail::wants_grad(t, {x});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, out, pos, theta, rows, sn, dh, npair,
                         group]() {
      const T* g = tp->grad(out).ptr();
      T* gx = tp->grad(x).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int64_t r = 0; r < rows; ++r) {
        const int sidx = (int)(r % sn);
        const T* gr = g + r * dh;
        T* gxr = gx + r * dh;
        for (int j = 0; j < dh; ++j) gxr[j] += gr[j];
        for (int a = 0; a < 3; ++a) {
          const T p = T((*pos)[sidx][a]);
          for (int j = 0; j < npair; ++j) {
            const T phi = p * (*theta)[j];
            const T cs = std::cos(phi), sg = std::sin(phi);
            const int c0 = a * group + 2 * j;
            const T g0 = gr[c0], g1 = gr[c0 + 1];
            // undo the pass-through added above, then add the rotation
            gxr[c0] += (g0 * cs + g1 * sg) - g0;
            gxr[c0 + 1] += (-g0 * sg + g1 * cs) - g1;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape movement.

// [S, H*dh] -> [H, S, dh]
template <typename T>
Val split_heads(Tape<T>& t, Val x, int nheads) {
  const Tensor<T>& xv = t.val(x);
  check_contract(xv.ndim() == 2 && xv.shape[1] % nheads == 0,
                 "split_heads: bad shape");
  const int sn = (int)xv.shape[0];
  const int dh = (int)(xv.shape[1] / nheads);
  Tensor<T> y({nheads, sn, dh});
  const T* xp = xv.ptr();
  T* yp = y.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int h = 0; h < nheads; ++h)
    for (int s = 0; s < sn; ++s)
      for (int j = 0; j < dh; ++j)
        yp[((int64_t)h * sn + s) * dh + j] =
            xp[(int64_t)s * nheads * dh + h * dh + j];
  const bool rg = detail::wants_grad(t, {x});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, out, nheads, sn, dh]() {
      const T* g = tp->grad(out).ptr();
      T* gx = tp->grad(x).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int s = 0; s < sn; ++s)
        for (int h = 0; h < nheads; ++h)
          for (int j = 0; j < dh; ++j)
            gx[(int64_t)s * nheads * dh + h * dh + j] +=
                g[((int64_t)h * sn + s) * dh + j];
    });
  }
  return out;
}

// [H, S, dh] -> [S, H*dh]
template <typename T>
Val merge_heads(Tape<T>& t, Val x) {
  const Tensor<T>& xv = t.val(x);
  check_contract(xv.ndim() == 3, "merge_heads: bad shape");
  const int nheads = (int)xv.shape[0];
  const int sn = (int)xv.shape[1];
  const int dh = (int)xv.shape[2];
  Tensor<T> y({sn, (int64_t)nheads * dh});
  const T* xp = xv.ptr();
  T* yp = y.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int s = 0; s < sn; ++s)
    for (int h = 0; h < nheads; ++h)
      for (int j = 0; j < dh; ++j)
        yp[(int64_t)s * nheads * dh + h * dh + j] =
            xp[((int64_t)h * sn + s) * dh + j];
  const bool rg = detail::wants_grad(t, {x});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, out, nheads, sn, dh]() {
      const T* g = tp->grad(out).ptr();
      T* gx = tp->grad(x).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int h = 0; h < nheads; ++h)
        for (int s = 0; s < sn; ++s)
          for (int j = 0; j < dh; ++j)
            gx[((int64_t)h * sn + s) * dh + j] +=
                g[(int64_t)s * nheads * dh + h * dh + j];
    });
  }
  return out;
}

// [C, d, h, w] -> [d*h*w, C] (token-major)
template <typename T>
Val grid_to_tokens(Tape<T>& t, Val x) {
  const Tensor<T>& xv = t.val(x);
  check_contract(xv.ndim() == 4, "grid_to_tokens: input must be rank 4");
  const int c = (int)xv.shape[0];
  const int64_t s = xv.numel() / c;
  Tensor<T> y({s, c});
  const T* xp = xv.ptr();
  T* yp = y.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int64_t i = 0; i < s; ++i)
    for (int j = 0; j < c; ++j) yp[i * c + j] = xp[(int64_t)j * s + i];
  const bool rg = detail::wants_grad(t, {x});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, out, s, c]() {
      const T* g = tp->grad(out).ptr();
      T* gx = tp->grad(x).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int j = 0; j < c; ++j)
        for (int64_t i = 0; i < s; ++i)
          gx[(int64_t)j * s + i] += g[i * c + j];
    });
  }
  return out;
}

// [S, C] -> [C, d, h, w] with S == d*h*w
template <typename T>
Val tokens_to_grid(Tape<T>& t, Val x, int d, int h, int w) {
  const Tensor<T>& xv = t.val(x);
  check_contract(xv.ndim() == 2 && xv.shape[0] == (int64_t)d * h * w,
                 "tokens_to_grid: token count mismatch");
  const int c = (int)xv.shape[1];
  const int64_t s = xv.shape[0];
  Tensor<T> y({c, d, h, w});
  const T* xp = xv.ptr();
  T* yp = y.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int j = 0; j < c; ++j)
    for (int64_t i = 0; i < s; ++i) yp[(int64_t)j * s + i] = xp[i * c + j];
  const bool rg = detail::wants_grad(t, {x});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, out, s, c]() {
      const T* g = tp->grad(out).ptr();
      T* gx = tp->grad(x).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int64_t i = 0; i < s; ++i)
        for (int j = 0; j < c; ++j) gx[i * c + j] += g[(int64_t)j * s + i];
    });
  }
  return out;
}

// Concatenate along dim 0 of rank-2 tensors.
template <typename T>
Val concat_rows(Tape<T>& t, Val a, Val b) {
  const Tensor<T>& av = t.val(a);
  const Tensor<T>& bv = t.val(b);
  check_contract(av.ndim() == 2 && bv.ndim() == 2 &&
                     av.shape[1] == bv.shape[1],
                 "concat_rows: bad shapes");
  Tensor<T> y({av.shape[0] + bv.shape[0], av.shape[1]});
  std::copy(av.ptr(), av.ptr() + av.numel(), y.ptr());
  std::copy(bv.ptr(), bv.ptr() + bv.numel(), y.ptr() + av.numel());
  const bool rg = detail::wants_grad(t, {a, b});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    const int64_t na = av.numel(), nb = bv.numel();
    t.set_backward(out, [tp, a, b, out, na, nb]() {
      const T* g = tp->grad(out).ptr();
      if (tp->requires_grad(a)) {
        T* ga = tp->grad(a).ptr();
        for (int64_t i = 0; i < na; ++i) ga[i] += g[i];
      }
      if (tp->requires_grad(b)) {
        T* gb = tp->grad(b).ptr();
        for (int64_t i = 0; i < nb; ++i) gb[i] += g[na + i];
      }
    });
  }
  return out;
}

// Rows [r0, r1) of a rank-2 tensor.
template <typename T>
Val slice_rows(Tape<T>& t, Val x, int64_t r0, int64_t r1) {
  const Tensor<T>& xv = t.val(x);
  check_contract(xv.ndim() == 2 && r0 >= 0 && r0 < r1 && r1 <= xv.shape[0],
                 "slice_rows: bad range");
  const int64_t c = xv.shape[1];
  Tensor<T> y({r1 - r0, c});
  std::copy(xv.ptr() + r0 * c, xv.ptr() + r1 * c, y.ptr());
  const bool rg = detail::wants_grad(t, {x});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, out, r0, r1, c]() {
      const T* g = tp->grad(out).ptr();
      T* gx = tp->grad(x).ptr();
      const int64_t n = (r1 - r0) * c;
      for (int64_t i = 0; i < n; ++i) gx[r0 * c + i] += g[i];
    });
  }
  return out;
}

// Concatenate along the channel (first) dim; spatial dims must match.
template <typename T>
Val concat_channels(Tape<T>& t, Val a, Val b) {
  const Tensor<T>& av = t.val(a);
  const Tensor<T>& bv = t.val(b);
  check_contract(av.ndim() == bv.ndim() && av.ndim() >= 2,
                 "concat_channels: rank mismatch");
  for (int i = 1; i < av.ndim(); ++i)
    check_contract(av.shape[i] == bv.shape[i],
                   "concat_channels: spatial mismatch");
  Shape oshape = av.shape;
  oshape[0] += bv.shape[0];
  Tensor<T> y(oshape);
  std::copy(av.ptr(), av.ptr() + av.numel(), y.ptr());
  std::copy(bv.ptr(), bv.ptr() + bv.numel(), y.ptr() + av.numel());
  const bool rg = detail::wants_grad(t, {a, b});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    const int64_t na = av.numel(), nb = bv.numel();
    t.set_backward(out, [tp, a, b, out, na, nb]() {
      const T* g = tp->grad(out).ptr();
      if (tp->requires_grad(a)) {
        T* ga = tp->grad(a).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
        for (int64_t i = 0; i < na; ++i) ga[i] += g[i];
      }
      if (tp->requires_grad(b)) {
        T* gb = tp->grad(b).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
        for (int64_t i = 0; i < nb; ++i) gb[i] += g[na + i];
      }
    });
  }
  return out;
}

// Channel c of a [C, ...] tensor as [1, ...].
template <typename T>
Val slice_channel(Tape<T>& t, Val x, int64_t c) {
  const Tensor<T>& xv = t.val(x);
  check_contract(xv.ndim() >= 2 && c >= 0 && c < xv.shape[0],
                 "slice_channel: bad channel");
  Shape oshape = xv.shape;
  oshape[0] = 1;
  const int64_t sp = xv.numel() / xv.shape[0];
  Tensor<T> y(oshape);
  std::copy(xv.ptr() + c * sp, xv.ptr() + (c + 1) * sp, y.ptr());
  const bool rg = detail::wants_grad(t, {x});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, out, c, sp]() {
      const T* g = tp->grad(out).ptr();
      T* gx = tp->grad(x).ptr() + c * sp;
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int64_t i = 0; i < sp; ++i) gx[i] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channel attention pieces (ECA).

// [C, ...] -> [C], mean over spatial dims.
template <typename T>
Val global_avg_pool(Tape<T>& t, Val x) {
  const Tensor<T>& xv = t.val(x);
  check_contract(xv.ndim() >= 2, "global_avg_pool: rank must be >= 2");
  const int c = (int)xv.shape[0];
  const int64_t s = xv.numel() / c;
  Tensor<T> y({c});
  const T* xp = xv.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int ch = 0; ch < c; ++ch)
    y.data[ch] = par::block_sum(xp + (int64_t)ch * s, s) / T(s);
  const bool rg = detail::wants_grad(t, {x});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, out, c, s]() {
      const T* g = tp->grad(out).ptr();
      T* gx = tp->grad(x).ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int ch = 0; ch < c; ++ch) {
        const T gv = g[ch] / T(s);
        T* gr = gx + (int64_t)ch * s;
        for (int64_t j = 0; j < s; ++j) gr[j] += gv;
      }
    });
  }
  return out;
}

// 1D convolution over the channel axis with zero padding, odd k.
template <typename T>
Val conv1d_channels(Tape<T>& t, Val x, Val w) {
  const Tensor<T>& xv = t.val(x);
  const Tensor<T>& wv = t.val(w);
  check_contract(xv.ndim() == 1, "conv1d_channels: input must be rank 1");
  check_contract(wv.ndim() == 1 && wv.shape[0] % 2 == 1,
                 "conv1d_channels: kernel must be rank 1, odd size");
  const int c = (int)xv.shape[0];
  const int k = (int)wv.shape[0];
  const int half = k / 2;
  Tensor<T> y({c});
  for (int i = 0; i < c; ++i) {
    T acc = T(0);
    for (int j = 0; j < k; ++j) {
      const int src = i + j - half;
      if (src < 0 || src >= c) continue;
      acc += wv.data[j] * xv.data[src];
    }
    y.data[i] = acc;
  }
  const bool rg = detail::wants_grad(t, {x, w});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, w, out, c, k, half]() {
      const T* g = tp->grad(out).ptr();
      if (tp->requires_grad(x)) {
        const T* wp = tp->val(w).ptr();
        T* gx = tp->grad(x).ptr();
        for (int i = 0; i < c; ++i)
          for (int j = 0; j < k; ++j) {
            const int dst = i - j + half;
            if (dst < 0 || dst >= c) continue;
            gx[i] += wp[j] * g[dst];
          }
      }
      if (tp->requires_grad(w)) {
        const T* xp = tp->val(x).ptr();
        T* gw = tp->grad(w).ptr();
        for (int j = 0; j < k; ++j) {
          T acc = T(0);
          for (int i = 0; i < c; ++i) {
            const int src = i + j - half;
            if (src < 0 || src >= c) continue;
            acc += g[i] * xp[src];
          }
          gw[j] += acc;
        }
      }
    });
  }
  return out;
}

// y[ch, ...] = x[ch, ...] * s[ch]
template <typename T>
Val scale_channels(Tape<T>& t, Val x, Val s) {
  const Tensor<T>& xv = t.val(x);
  const Tensor<T>& sv = t.val(s);
  check_contract(xv.ndim() >= 2 && sv.ndim() == 1 &&
                     sv.shape[0] == xv.shape[0],
                 "scale_channels: bad shapes");
  const int c = (int)xv.shape[0];
  const int64_t sp = xv.numel() / c;
  Tensor<T> y(xv.shape);
  const T* xp = xv.ptr();
  T* yp = y.ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int ch = 0; ch < c; ++ch) {
    const T sc = sv.data[ch];
    for (int64_t j = 0; j < sp; ++j)
      yp[(int64_t)ch * sp + j] = xp[(int64_t)ch * sp + j] * sc;
  }
  const bool rg = detail::wants_grad(t, {x, s});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, s, out, c, sp]() {
      const T* g = tp->grad(out).ptr();
      const T* xp2 = tp->val(x).ptr();
      const T* sp2 = tp->val(s).ptr();
      const bool xg = tp->requires_grad(x);
      const bool sg2 = tp->requires_grad(s);
      T* gx = xg ? tp->grad(x).ptr() : nullptr;
      T* gs = sg2 ? tp->grad(s).ptr() : nullptr;
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int ch = 0; ch < c; ++ch) {
        const T sc = sp2[ch];
        T acc = T(0);
        for (int64_t j = 0; j < sp; ++j) {
          const int64_t i = (int64_t)ch * sp + j;
          if (gx) gx[i] += g[i] * sc;
          acc += g[i] * xp2[i];
        }
        if (gs) gs[ch] += acc;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Masking.

namespace detail {

// Iterates every voxel of patch `pi` (depth-major raster over the patch
// grid), calling fn(volume_offset_within_channel, offset_within_patch).
template <typename Fn>
inline void for_patch_voxels(int pi, int d, int h, int w, int pp, Fn&& fn) {
  (void)d;  // patch index fixes the depth slab; only h/w strides matter
  const int gh = h / pp, gw = w / pp;
  const int pz = pi / (gh * gw);
  const int py = (pi / gw) % gh;
  const int px = pi % gw;
  int64_t j = 0;
  for (int dz = 0; dz < pp; ++dz)
    for (int dy = 0; dy < pp; ++dy)
      for (int dx = 0; dx < pp; ++dx, ++j) {
        const int64_t v =
            ((int64_t)(pz * pp + dz) * h + (py * pp + dy)) * w + px * pp + dx;
        fn(v, j);
      }
}

}  // namespace detail

// Joint mask application (voxel space). x [K,D,H,W]; tokens [K, P^3]; keep
// holds gamma_{m,i} in [modality][patch] order (1 = patch visible). Masked
// patches are tiled with the modality's token reshaped to P x P x P.
template <typename T>
Val apply_patch_mask(Tape<T>& t, Val x, Val tokens,
                     std::shared_ptr<const std::vector<uint8_t>> keep,
                     int pp) {
  const Tensor<T>& xv = t.val(x);
  const Tensor<T>& tv = t.val(tokens);
  check_contract(xv.ndim() == 4, "apply_patch_mask: input must be rank 4");
  const int k = (int)xv.shape[0];
  const int d = (int)xv.shape[1], h = (int)xv.shape[2], w = (int)xv.shape[3];
  check_contract(d % pp == 0 && h % pp == 0 && w % pp == 0,
                 "apply_patch_mask: dims not divisible by patch size");
  const int64_t n = (int64_t)(d / pp) * (h / pp) * (w / pp);
  check_contract(tv.ndim() == 2 && tv.shape[0] == k &&
                     tv.shape[1] == (int64_t)pp * pp * pp,
                 "apply_patch_mask: tokens must be [K, P^3]");
  check_contract((int64_t)keep->size() == k * n,
                 "apply_patch_mask: indicator count mismatch");
  Tensor<T> y = xv;
  const int64_t chan = (int64_t)d * h * w;
  const T* tok = tv.ptr();
  T* yp = y.ptr();
#pragma omp parallel for collapse(2) schedule(static) if (par::enabled())
  for (int m = 0; m < k; ++m)
    for (int64_t i = 0; i < n; ++i) {
      if ((*keep)[m * n + i]) continue;
      const T* tm = tok + (int64_t)m * pp * pp * pp;
      T* ych = yp + m * chan;
      detail::for_patch_voxels((int)i, d, h, w, pp,
                               [&](int64_t v, int64_t j) { ych[v] = tm[j]; });
    }
  const bool rg = detail::wants_grad(t, {x, tokens});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, tokens, out, keep, pp, k, d, h, w, n,
                         chan]() {
      const T* g = tp->grad(out).ptr();
      const bool xg = tp->requires_grad(x);
      const bool tg = tp->requires_grad(tokens);
      if (xg) {
        T* gx = tp->grad(x).ptr();
#pragma omp parallel for collapse(2) schedule(static) if (par::enabled())
        for (int m = 0; m < k; ++m)
          for (int64_t i = 0; i < n; ++i) {
            if (!(*keep)[m * n + i]) continue;
            const T* gch = g + m * chan;
            T* gxch = gx + m * chan;
            detail::for_patch_voxels(
                (int)i, d, h, w, pp,
                [&](int64_t v, int64_t) { gxch[v] += gch[v]; });
          }
      }
      if (tg) {
        T* gt = tp->grad(tokens).ptr();
        const int64_t p3 = (int64_t)pp * pp * pp;
#pragma omp parallel for schedule(static) if (par::enabled())
        for (int m = 0; m < k; ++m) {
          const T* gch = g + m * chan;
          T* gtm = gt + m * p3;
          for (int64_t i = 0; i < n; ++i) {
            if ((*keep)[m * n + i]) continue;
            detail::for_patch_voxels(
                (int)i, d, h, w, pp,
                [&](int64_t v, int64_t j) { gtm[j] += gch[v]; });
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses.

// Mean squared error against a constant target, over all elements.
template <typename T>
Val mse_mean(Tape<T>& t, Val pred, std::shared_ptr<const Tensor<T>> target) {
  const Tensor<T>& pv = t.val(pred);
  check_contract(pv.shape == target->shape, "mse_mean: shape mismatch");
  const int64_t n = pv.numel();
  std::vector<T> sq(n);
  const T* pp = pv.ptr();
  const T* tpt = target->ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int64_t i = 0; i < n; ++i) {
    const T d = pp[i] - tpt[i];
    sq[i] = d * d;
  }
  Tensor<T> y({1});
  y.data[0] = par::block_sum(sq.data(), n) / T(n);
  const bool rg = detail::wants_grad(t, {pred});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, pred, out, target, n]() {
      const T g = tp->grad(out).data[0];
      const T* pp2 = tp->val(pred).ptr();
      const T* tp2 = target->ptr();
      T* gp = tp->grad(pred).ptr();
      const T c = g * T(2) / T(n);
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int64_t i = 0; i < n; ++i) gp[i] += c * (pp2[i] - tp2[i]);
    });
  }
  return out;
}

// Euclidean norm with zero subgradient at the origin.
template <typename T>
Val l2_norm(Tape<T>& t, Val x) {
  const Tensor<T>& xv = t.val(x);
  const int64_t n = xv.numel();
  std::vector<T> sq(n);
  for (int64_t i = 0; i < n; ++i) sq[i] = xv.data[i] * xv.data[i];
  Tensor<T> y({1});
  y.data[0] = std::sqrt(par::block_sum(sq.data(), n));
  const bool rg = detail::wants_grad(t, {x});
  Val out = t.make(std::move(y), rg);
  if (rg) {
    Tape<T>* tp = &t;
    t.set_backward(out, [tp, x, out, n]() {
      const T g = tp->grad(out).data[0];
      const T norm = tp->val(out).data[0];
      if (norm <= T(0)) return;  // subgradient 0 at the origin
      const T* xp = tp->val(x).ptr();
      T* gx = tp->grad(x).ptr();
      const T c = g / norm;
      for (int64_t i = 0; i < n; ++i) gx[i] += c * xp[i];
    });
  }
  return out;
}

// Soft Dice + weighted cross entropy over logits [C, ...spatial] and integer
// labels. Dice: 1 - mean_c (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps).
// WCE: mean over voxels of w[label] * -log p[label].
template <typename T>
Val dice_wce(Tape<T>& t, Val logits,
             std::shared_ptr<const Tensor<uint8_t>> labels,
             std::vector<T> class_weights, T eps) {
  const Tensor<T>& lv = t.val(logits);
  check_contract(lv.ndim() >= 2, "dice_wce: logits must be rank >= 2");
  const int c = (int)lv.shape[0];
  const int64_t s = lv.numel() / c;
  check_contract(c <= 16, "dice_wce: at most 16 classes supported");
  check_contract(labels->numel() == s, "dice_wce: label count mismatch");
  check_contract((int)class_weights.size() == c,
                 "dice_wce: class weight count mismatch");
  for (int64_t v = 0; v < s; ++v)
    check_contract(labels->data[v] < c, "dice_wce: label out of range");

  // Softmax over the class axis (stride s), saved for the backward pass.
  auto prob = std::make_shared<Tensor<T>>(lv.shape);
  const T* lp = lv.ptr();
  T* pp = prob->ptr();
  const uint8_t* yp = labels->ptr();
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int64_t v = 0; v < s; ++v) {
    T mx = lp[v];
    for (int ch = 1; ch < c; ++ch) mx = std::max(mx, lp[(int64_t)ch * s + v]);
    T sum = T(0);
    for (int ch = 0; ch < c; ++ch) {
      const T e = std::exp(lp[(int64_t)ch * s + v] - mx);
      pp[(int64_t)ch * s + v] = e;
      sum += e;
    }
    const T inv = T(1) / sum;
    for (int ch = 0; ch < c; ++ch) pp[(int64_t)ch * s + v] *= inv;
  }

  // Per-class sums. sum(p) via block_sum on the contiguous class row;
  // sum(p*y) and label counts accumulate in voxel order.
  std::vector<T> sum_p(c), sum_py(c), sum_y(c);
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int ch = 0; ch < c; ++ch) {
    sum_p[ch] = par::block_sum(pp + (int64_t)ch * s, s);
    T py = T(0);
    int64_t cnt = 0;
    for (int64_t v = 0; v < s; ++v)
      if (yp[v] == ch) {
        py += pp[(int64_t)ch * s + v];
        ++cnt;
      }
    sum_py[ch] = py;
    sum_y[ch] = T(cnt);
  }
  T dice_acc = T(0);
  for (int ch = 0; ch < c; ++ch)
    dice_acc +=
        (T(2) * sum_py[ch] + eps) / (sum_p[ch] + sum_y[ch] + eps);
  const T dice_loss = T(1) - dice_acc / T(c);

  std::vector<T> nll(s);
#pragma omp parallel for schedule(static) if (par::enabled())
  for (int64_t v = 0; v < s; ++v) {
    const int y = yp[v];
    const T p = std::max(pp[(int64_t)y * s + v], T(1e-12));
    nll[v] = -class_weights[y] * std::log(p);
  }
  const T wce_loss = par::block_sum(nll.data(), s) / T(s);

  Tensor<T> out_t({1});
  out_t.data[0] = dice_loss + wce_loss;
  const bool rg = detail::wants_grad(t, {logits});
  Val out = t.make(std::move(out_t), rg);
  if (rg) {
    Tape<T>* tp = &t;
    auto sums = std::make_shared<std::array<std::vector<T>, 3>>();
    (*sums)[0] = std::move(sum_p);
    (*sums)[1] = std::move(sum_py);
    (*sums)[2] = std::move(sum_y);
    t.set_backward(out, [tp, logits, out, labels, prob, sums,
                         cw = std::move(class_weights), eps, c, s]() {
      const T g = tp->grad(out).data[0];
      const T* pp2 = prob->ptr();
      const uint8_t* yp2 = labels->ptr();
      T* gl = tp->grad(logits).ptr();
      const auto& sum_p2 = (*sums)[0];
      const auto& sum_py2 = (*sums)[1];
      const auto& sum_y2 = (*sums)[2];
      // d(dice)/dp coefficients per class.
      std::vector<T> da(c), db(c);
      for (int ch = 0; ch < c; ++ch) {
        const T bden = sum_p2[ch] + sum_y2[ch] + eps;
        const T anum = T(2) * sum_py2[ch] + eps;
        // dD/dp = (2*y*bden - anum) / bden^2; loss contributes -1/c of it
        da[ch] = -T(1) / T(c) * T(2) / bden;          // factor on y indicator
        db[ch] = T(1) / T(c) * anum / (bden * bden);  // constant shift
      }
#pragma omp parallel for schedule(static) if (par::enabled())
      for (int64_t v = 0; v < s; ++v) {
        const int y = yp2[v];
        T dLdp[16];  // c <= 16 segmentation classes
        T dot = T(0);
        for (int ch = 0; ch < c; ++ch) {
          const T p = pp2[(int64_t)ch * s + v];
          T d = db[ch] + (ch == y ? da[ch] : T(0));
          if (ch == y) {
            const T psafe = std::max(p, T(1e-12));
            d += -cw[y] / (T(s) * psafe);
          }
          dLdp[ch] = d;
          dot += d * p;
        }
        for (int ch = 0; ch < c; ++ch) {
          const T p = pp2[(int64_t)ch * s + v];
          gl[(int64_t)ch * s + v] += g * p * (dLdp[ch] - dot);
        }
      }
    });
  }
  return out;
}

}  // namespace unime::ops

#endif  // UNIME_OPS_HPP_
