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
// Dense compute kernels. The hot kernels (3D convolution, transposed
// convolution, matmul, linear) come in two routes: an optimized OpenMP
// implementation in kernels::omp and a naive serial reference in
// kernels::serial. Both accumulate per output element in the same canonical
// index order, so results are bit-identical; the unqualified functions
// dispatch on par::enabled(). Forward kernels overwrite their output,
// backward kernels accumulate (+=) into pre-zeroed gradient buffers.

#ifndef UNIME_KERNELS_HPP_
#define UNIME_KERNELS_HPP_

#include <cstdint>

namespace unime::kernels {

// Geometry of a cubic-kernel 3D convolution.
struct Conv3dDims {
  int ci, co;          // channels
  int d, h, w;         // input spatial dims
  int k, stride, pad;  // cubic kernel
  int od, oh, ow;      // output spatial dims

  static Conv3dDims make(int ci, int co, int d, int h, int w, int k,
                         int stride, int pad);
};

// Transposed convolution (pad 0): output dim = (in - 1) * stride + k.
// Weight layout [ci][co][k][k][k].
struct ConvT3dDims {
  int ci, co;
  int d, h, w;
  int k, stride;
  int od, oh, ow;

  static ConvT3dDims make(int ci, int co, int d, int h, int w, int k,
                          int stride);
};

namespace serial {

template <typename T>
void conv3d_fwd(const T* in, const T* wt, const T* bias, T* out,
                const Conv3dDims& g);
template <typename T>
void conv3d_bwd_input(const T* gout, const T* wt, T* gin, const Conv3dDims& g);
template <typename T>
void conv3d_bwd_weight(const T* gout, const T* in, T* gw, T* gb,
                       const Conv3dDims& g);

template <typename T>
void convt3d_fwd(const T* in, const T* wt, const T* bias, T* out,
                 const ConvT3dDims& g);
template <typename T>
void convt3d_bwd_input(const T* gout, const T* wt, T* gin,
                       const ConvT3dDims& g);
template <typename T>
void convt3d_bwd_weight(const T* gout, const T* in, T* gw, T* gb,
                        const ConvT3dDims& g);

// C[m][n] (accumulate ? += : =) sum_k A[m][k] * B[k][n]
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n,
               bool accumulate);
// C[m][n] ... sum_k A[m][k] * Bt[n][k]
template <typename T>
void matmul_nt(const T* a, const T* bt, T* c, int m, int k, int n,
               bool accumulate);
// C[m][n] ... sum_k At[k][m] * B[k][n]
template <typename T>
void matmul_tn(const T* at, const T* b, T* c, int m, int k, int n,
               bool accumulate);

// y[s][o] = b[o] + sum_i x[s][i] * w[i][o]; weight layout [din][dout].
template <typename T>
void linear_fwd(const T* x, const T* wt, const T* bias, T* y, int rows,
                int din, int dout);
template <typename T>
void linear_bwd_input(const T* gy, const T* wt, T* gx, int rows, int din,
                      int dout);
template <typename T>
void linear_bwd_weight(const T* gy, const T* x, T* gw, T* gb, int rows,
                       int din, int dout);

}  // namespace serial

namespace omp {

template <typename T>
void conv3d_fwd(const T* in, const T* wt, const T* bias, T* out,
                const Conv3dDims& g);
template <typename T>
void conv3d_bwd_input(const T* gout, const T* wt, T* gin, const Conv3dDims& g);
template <typename T>
void conv3d_bwd_weight(const T* gout, const T* in, T* gw, T* gb,
                       const Conv3dDims& g);

template <typename T>
void convt3d_fwd(const T* in, const T* wt, const T* bias, T* out,
                 const ConvT3dDims& g);
template <typename T>
void convt3d_bwd_input(const T* gout, const T* wt, T* gin,
                       const ConvT3dDims& g);
template <typename T>
void convt3d_bwd_weight(const T* gout, const T* in, T* gw, T* gb,
                        const ConvT3dDims& g);

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n,
               bool accumulate);
template <typename T>
void matmul_nt(const T* a, const T* bt, T* c, int m, int k, int n,
               bool accumulate);
template <typename T>
void matmul_tn(const T* at, const T* b, T* c, int m, int k, int n,
               bool accumulate);

template <typename T>
void linear_fwd(const T* x, const T* wt, const T* bias, T* y, int rows,
                int din, int dout);
template <typename T>
void linear_bwd_input(const T* gy, const T* wt, T* gx, int rows, int din,
                      int dout);
template <typename T>
void linear_bwd_weight(const T* gy, const T* x, T* gw, T* gb, int rows,
                       int din, int dout);

}  // namespace omp

// Dispatchers.
template <typename T>
void conv3d_fwd(const T* in, const T* wt, const T* bias, T* out,
                const Conv3dDims& g);
template <typename T>
void conv3d_bwd_input(const T* gout, const T* wt, T* gin, const Conv3dDims& g);
template <typename T>
void conv3d_bwd_weight(const T* gout, const T* in, T* gw, T* gb,
                       const Conv3dDims& g);
template <typename T>
void convt3d_fwd(const T* in, const T* wt, const T* bias, T* out,
                 const ConvT3dDims& g);
template <typename T>
void convt3d_bwd_input(const T* gout, const T* wt, T* gin,
                       const ConvT3dDims& g);
template <typename T>
void convt3d_bwd_weight(const T* gout, const T* in, T* gw, T* gb,
                        const ConvT3dDims& g);
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, int m, int k, int n,
               bool accumulate);
template <typename T>
void matmul_nt(const T* a, const T* bt, T* c, int m, int k, int n,
               bool accumulate);
template <typename T>
void matmul_tn(const T* at, const T* b, T* c, int m, int k, int n,
               bool accumulate);
template <typename T>
void linear_fwd(const T* x, const T* wt, const T* bias, T* y, int rows,
                int din, int dout);
template <typename T>
void linear_bwd_input(const T* gy, const T* wt, T* gx, int rows, int din,
                      int dout);
template <typename T>
void linear_bwd_weight(const T* gy, const T* x, T* gw, T* gb, int rows,
                       int din, int dout);

}  // namespace unime::kernels

#endif  // UNIME_KERNELS_HPP_
