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
// Kernel tests. Every kernel is checked against a from-scratch naive oracle
// written directly from the operator definition, then the omp route is
// checked against the serial route: bitwise everywhere except the conv3d
// weight-gradient k3/s1/p1 fast path, whose fixed lane split reorders each
// sum and therefore matches to rounding only.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "test_util.hpp"
#include "unime/kernels.hpp"
#include "unime/parallel.hpp"
#include "unime/rng.hpp"

using namespace unime;
using kernels::Conv3dDims;
using kernels::ConvT3dDims;

namespace {

std::vector<float> randv(size_t n, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = (float)(scale * rng.normal());
  return v;
}

// ---------------------------------------------------------------------------
// Oracles. Deliberately index-by-index from the definitions; double
// accumulation so they can serve as a numeric reference for both routes.

std::vector<double> oracle_conv3d(const std::vector<float>& in,
                                  const std::vector<float>& wt,
                                  const float* bias, const Conv3dDims& g) {
  std::vector<double> out((size_t)g.co * g.od * g.oh * g.ow, 0.0);
  for (int co = 0; co < g.co; ++co)
    for (int zo = 0; zo < g.od; ++zo)
      for (int yo = 0; yo < g.oh; ++yo)
        for (int xo = 0; xo < g.ow; ++xo) {
          double acc = bias ? (double)bias[co] : 0.0;
          for (int ci = 0; ci < g.ci; ++ci)
            for (int kz = 0; kz < g.k; ++kz)
              for (int ky = 0; ky < g.k; ++ky)
                for (int kx = 0; kx < g.k; ++kx) {
                  const int zi = zo * g.stride + kz - g.pad;
                  const int yi = yo * g.stride + ky - g.pad;
                  const int xi = xo * g.stride + kx - g.pad;
                  if (zi < 0 || zi >= g.d || yi < 0 || yi >= g.h || xi < 0 ||
                      xi >= g.w)
                    continue;
                  const double x =
                      in[(size_t)(((ci * g.d + zi) * g.h + yi) * g.w + xi)];
                  const double w =
                      wt[(size_t)((((co * g.ci + ci) * g.k + kz) * g.k + ky) *
                                      g.k +
                                  kx)];
                  acc += x * w;
                }
          out[(size_t)(((co * g.od + zo) * g.oh + yo) * g.ow + xo)] = acc;
        }
  return out;
}

std::vector<double> oracle_convt3d(const std::vector<float>& in,
                                   const std::vector<float>& wt,
                                   const float* bias, const ConvT3dDims& g) {
  std::vector<double> out((size_t)g.co * g.od * g.oh * g.ow, 0.0);
  if (bias)
    for (int co = 0; co < g.co; ++co)
      for (int i = 0; i < g.od * g.oh * g.ow; ++i)
        out[(size_t)co * g.od * g.oh * g.ow + i] = bias[co];
  // Scatter form straight from the definition.
  for (int ci = 0; ci < g.ci; ++ci)
    for (int z = 0; z < g.d; ++z)
      for (int y = 0; y < g.h; ++y)
        for (int x = 0; x < g.w; ++x) {
          const double v =
              in[(size_t)(((ci * g.d + z) * g.h + y) * g.w + x)];
          for (int co = 0; co < g.co; ++co)
            for (int kz = 0; kz < g.k; ++kz)
              for (int ky = 0; ky < g.k; ++ky)
                for (int kx = 0; kx < g.k; ++kx) {
                  const int zo = z * g.stride + kz;
                  const int yo = y * g.stride + ky;
                  const int xo = x * g.stride + kx;
                  const double w =
                      wt[(size_t)((((ci * g.co + co) * g.k + kz) * g.k + ky) *
                                      g.k +
                                  kx)];
                  out[(size_t)(((co * g.od + zo) * g.oh + yo) * g.ow + xo)] +=
                      v * w;
                }
        }
  return out;
}

double max_abs_diff(const std::vector<float>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs((double)a[i] - b[i]));
  return m;
}

double max_rel_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max(1.0, (double)std::fabs(a[i]));
    m = std::max(m, std::fabs((double)a[i] - (double)b[i]) / denom);
  }
  return m;
}

bool bitwise_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

struct ConvCase {
  int ci, co, d, h, w, k, stride, pad;
};

}  // namespace

TEST_CASE("Conv3dDims::make output geometry") {
  auto g = Conv3dDims::make(4, 96, 16, 16, 16, 8, 8, 0);
  CHECK(g.od == 2);
  CHECK(g.oh == 2);
  CHECK(g.ow == 2);
  g = Conv3dDims::make(16, 16, 16, 16, 16, 3, 1, 1);
  CHECK(g.od == 16);
  g = Conv3dDims::make(16, 32, 16, 16, 16, 3, 2, 1);
  CHECK(g.od == 8);
  g = Conv3dDims::make(1, 1, 5, 7, 9, 3, 2, 1);
  CHECK(g.od == 3);
  CHECK(g.oh == 4);
  CHECK(g.ow == 5);
}

TEST_CASE("ConvT3dDims::make output geometry") {
  auto g = ConvT3dDims::make(128, 64, 2, 2, 2, 2, 2);
  CHECK(g.od == 4);
  CHECK(g.oh == 4);
  CHECK(g.ow == 4);
  g = ConvT3dDims::make(1, 1, 3, 4, 5, 2, 2);
  CHECK(g.od == 6);
  CHECK(g.oh == 8);
  CHECK(g.ow == 10);
}

TEST_CASE("conv3d forward matches the naive oracle on a geometry grid") {
  const ConvCase cases[] = {
      {3, 5, 6, 6, 6, 3, 1, 1},  {2, 4, 7, 5, 6, 3, 2, 1},
      {4, 8, 8, 8, 8, 8, 8, 0},  {1, 1, 4, 4, 4, 1, 1, 0},
      {5, 3, 5, 6, 7, 2, 2, 0},  {2, 2, 9, 9, 9, 3, 1, 0},
  };
  int idx = 0;
  for (const auto& c : cases) {
    const auto g =
        Conv3dDims::make(c.ci, c.co, c.d, c.h, c.w, c.k, c.stride, c.pad);
    const auto in = randv((size_t)g.ci * g.d * g.h * g.w, 100 + idx);
    const auto wt = randv((size_t)g.co * g.ci * g.k * g.k * g.k, 200 + idx);
    const auto bias = randv((size_t)g.co, 300 + idx);
    std::vector<float> out((size_t)g.co * g.od * g.oh * g.ow);

    kernels::serial::conv3d_fwd(in.data(), wt.data(), bias.data(), out.data(),
                                g);
    const auto ref = oracle_conv3d(in, wt, bias.data(), g);
    CHECK(max_abs_diff(out, ref) < 1e-3);

    // No-bias form.
    kernels::serial::conv3d_fwd<float>(in.data(), wt.data(), nullptr,
                                       out.data(), g);
    const auto ref0 = oracle_conv3d(in, wt, nullptr, g);
    CHECK(max_abs_diff(out, ref0) < 1e-3);
    ++idx;
  }
}

TEST_CASE("conv3d backward matches finite differences of the forward") {
  // Small enough to FD every element; double precision throughout the FD.
  const auto g = Conv3dDims::make(2, 3, 4, 4, 4, 3, 1, 1);
  const auto in = randv((size_t)g.ci * g.d * g.h * g.w, 11);
  const auto wt = randv((size_t)g.co * g.ci * g.k * g.k * g.k, 12);
  const auto bias = randv((size_t)g.co, 13);
  const size_t on = (size_t)g.co * g.od * g.oh * g.ow;
  const auto gout = randv(on, 14);

  // loss = sum(out * gout) so dloss/dparam factors through gout.
  auto loss = [&](const std::vector<float>& inv,
                  const std::vector<float>& wtv,
                  const std::vector<float>& bv) {
    const auto out = oracle_conv3d(inv, wtv, bv.data(), g);
    double s = 0;
    for (size_t i = 0; i < on; ++i) s += out[i] * (double)gout[i];
    return s;
  };

  std::vector<float> gin(in.size(), 0.0f), gw(wt.size(), 0.0f),
      gb(bias.size(), 0.0f);
  kernels::serial::conv3d_bwd_input(gout.data(), wt.data(), gin.data(), g);
  kernels::serial::conv3d_bwd_weight(gout.data(), in.data(), gw.data(),
                                     gb.data(), g);

  const double h = 1e-3;
  int checked = 0;
  for (size_t i = 0; i < in.size(); i += 7) {
    auto up = in, dn = in;
    up[i] += (float)h;
    dn[i] -= (float)h;
    const double fd = (loss(up, wt, bias) - loss(dn, wt, bias)) / (2 * h);
    CHECK(gin[i] == doctest::Approx(fd).epsilon(2e-2));
    ++checked;
  }
  for (size_t i = 0; i < wt.size(); i += 11) {
    auto up = wt, dn = wt;
    up[i] += (float)h;
    dn[i] -= (float)h;
    const double fd = (loss(in, up, bias) - loss(in, dn, bias)) / (2 * h);
    CHECK(gw[i] == doctest::Approx(fd).epsilon(2e-2));
    ++checked;
  }
  for (size_t i = 0; i < bias.size(); ++i) {
    auto up = bias, dn = bias;
    up[i] += (float)h;
    dn[i] -= (float)h;
    const double fd = (loss(in, wt, up) - loss(in, wt, dn)) / (2 * h);
    CHECK(gb[i] == doctest::Approx(fd).epsilon(2e-2));
    ++checked;
  }
  CHECK(checked > 30);
}

TEST_CASE("convt3d forward matches the naive scatter oracle") {
  struct TCase {
    int ci, co, d, h, w, k, stride;
  };
  const TCase cases[] = {
      {4, 2, 3, 3, 3, 2, 2}, {2, 5, 2, 3, 4, 2, 2}, {3, 3, 4, 4, 4, 3, 1},
  };
  int idx = 0;
  for (const auto& c : cases) {
    const auto g = ConvT3dDims::make(c.ci, c.co, c.d, c.h, c.w, c.k, c.stride);
    const auto in = randv((size_t)g.ci * g.d * g.h * g.w, 400 + idx);
    const auto wt = randv((size_t)g.ci * g.co * g.k * g.k * g.k, 500 + idx);
    const auto bias = randv((size_t)g.co, 600 + idx);
    std::vector<float> out((size_t)g.co * g.od * g.oh * g.ow);

    kernels::serial::convt3d_fwd(in.data(), wt.data(), bias.data(), out.data(),
                                 g);
    CHECK(max_abs_diff(out, oracle_convt3d(in, wt, bias.data(), g)) < 1e-3);

    kernels::serial::convt3d_fwd<float>(in.data(), wt.data(), nullptr,
                                        out.data(), g);
    CHECK(max_abs_diff(out, oracle_convt3d(in, wt, nullptr, g)) < 1e-3);
    ++idx;
  }
}

TEST_CASE("convt3d backward matches finite differences of the forward") {
  const auto g = ConvT3dDims::make(3, 2, 3, 3, 3, 2, 2);
  const auto in = randv((size_t)g.ci * g.d * g.h * g.w, 21);
  const auto wt = randv((size_t)g.ci * g.co * g.k * g.k * g.k, 22);
  const auto bias = randv((size_t)g.co, 23);
  const size_t on = (size_t)g.co * g.od * g.oh * g.ow;
  const auto gout = randv(on, 24);

  auto loss = [&](const std::vector<float>& inv, const std::vector<float>& wtv,
                  const std::vector<float>& bv) {
    const auto out = oracle_convt3d(inv, wtv, bv.data(), g);
    double s = 0;
    for (size_t i = 0; i < on; ++i) s += out[i] * (double)gout[i];
    return s;
  };

  std::vector<float> gin(in.size(), 0.0f), gw(wt.size(), 0.0f),
      gb(bias.size(), 0.0f);
  kernels::serial::convt3d_bwd_input(gout.data(), wt.data(), gin.data(), g);
  kernels::serial::convt3d_bwd_weight(gout.data(), in.data(), gw.data(),
                                      gb.data(), g);

  const double h = 1e-3;
  for (size_t i = 0; i < in.size(); i += 5) {
    auto up = in, dn = in;
    up[i] += (float)h;
    dn[i] -= (float)h;
    const double fd = (loss(up, wt, bias) - loss(dn, wt, bias)) / (2 * h);
    CHECK(gin[i] == doctest::Approx(fd).epsilon(2e-2));
  }
  for (size_t i = 0; i < wt.size(); i += 7) {
    auto up = wt, dn = wt;
    up[i] += (float)h;
    dn[i] -= (float)h;
    const double fd = (loss(in, up, bias) - loss(in, dn, bias)) / (2 * h);
    CHECK(gw[i] == doctest::Approx(fd).epsilon(2e-2));
  }
  for (size_t i = 0; i < bias.size(); ++i) {
    auto up = bias, dn = bias;
    up[i] += (float)h;
    dn[i] -= (float)h;
    const double fd = (loss(in, wt, up) - loss(in, wt, dn)) / (2 * h);
    CHECK(gb[i] == doctest::Approx(fd).epsilon(2e-2));
  }
}

TEST_CASE("matmul variants match a naive triple loop") {
  const int m = 9, k = 13, n = 7;
  const auto a = randv((size_t)m * k, 31);
  const auto b = randv((size_t)k * n, 32);
  std::vector<double> ref((size_t)m * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0;
      for (int kk = 0; kk < k; ++kk)
        s += (double)a[(size_t)i * k + kk] * (double)b[(size_t)kk * n + j];
      ref[(size_t)i * n + j] = s;
    }

  std::vector<float> c((size_t)m * n, 0.0f);
  kernels::serial::matmul_nn(a.data(), b.data(), c.data(), m, k, n, false);
  CHECK(max_abs_diff(c, ref) < 1e-4);

  // accumulate=true adds on top of existing contents.
  auto c2 = c;
  kernels::serial::matmul_nn(a.data(), b.data(), c2.data(), m, k, n, true);
  for (size_t i = 0; i < c.size(); ++i)
    CHECK(c2[i] == doctest::Approx(2.0 * c[i]).epsilon(1e-5));

  // nt: b given as [n][k].
  std::vector<float> btr((size_t)n * k);
  for (int kk = 0; kk < k; ++kk)
    for (int j = 0; j < n; ++j)
      btr[(size_t)j * k + kk] = b[(size_t)kk * n + j];
  kernels::serial::matmul_nt(a.data(), btr.data(), c.data(), m, k, n, false);
  CHECK(max_abs_diff(c, ref) < 1e-4);

  // tn: a given as [k][m].
  std::vector<float> atr((size_t)k * m);
  for (int i = 0; i < m; ++i)
    for (int kk = 0; kk < k; ++kk)
      atr[(size_t)kk * m + i] = a[(size_t)i * k + kk];
  kernels::serial::matmul_tn(atr.data(), b.data(), c.data(), m, k, n, false);
  CHECK(max_abs_diff(c, ref) < 1e-4);
}

TEST_CASE("linear forward and backward match naive oracles") {
  const int rows = 11, din = 9, dout = 6;
  const auto x = randv((size_t)rows * din, 41);
  const auto w = randv((size_t)din * dout, 42);
  const auto b = randv((size_t)dout, 43);
  std::vector<float> y((size_t)rows * dout);
  kernels::serial::linear_fwd(x.data(), w.data(), b.data(), y.data(), rows,
                              din, dout);
  for (int s = 0; s < rows; ++s)
    for (int o = 0; o < dout; ++o) {
      double acc = b[o];
      for (int i = 0; i < din; ++i)
        acc += (double)x[(size_t)s * din + i] * (double)w[(size_t)i * dout + o];
      CHECK(y[(size_t)s * dout + o] == doctest::Approx(acc).epsilon(1e-4));
    }

  const auto gy = randv((size_t)rows * dout, 44);
  std::vector<float> gx((size_t)rows * din, 0.0f),
      gw((size_t)din * dout, 0.0f), gb((size_t)dout, 0.0f);
  kernels::serial::linear_bwd_input(gy.data(), w.data(), gx.data(), rows, din,
                                    dout);
  kernels::serial::linear_bwd_weight(gy.data(), x.data(), gw.data(), gb.data(),
                                     rows, din, dout);
  for (int s = 0; s < rows; ++s)
    for (int i = 0; i < din; ++i) {
      double acc = 0;
      for (int o = 0; o < dout; ++o)
        acc +=
            (double)gy[(size_t)s * dout + o] * (double)w[(size_t)i * dout + o];
      CHECK(gx[(size_t)s * din + i] == doctest::Approx(acc).epsilon(1e-4));
    }
  for (int i = 0; i < din; ++i)
    for (int o = 0; o < dout; ++o) {
      double acc = 0;
      for (int s = 0; s < rows; ++s)
        acc +=
            (double)gy[(size_t)s * dout + o] * (double)x[(size_t)s * din + i];
      CHECK(gw[(size_t)i * dout + o] == doctest::Approx(acc).epsilon(1e-4));
    }
  for (int o = 0; o < dout; ++o) {
    double acc = 0;
    for (int s = 0; s < rows; ++s) acc += (double)gy[(size_t)s * dout + o];
    CHECK(gb[o] == doctest::Approx(acc).epsilon(1e-4));
  }
}

TEST_CASE("omp route equals serial route") {
  // Bitwise everywhere except the conv3d weight-grad k3/s1/p1 fast path.
  const ConvCase cases[] = {
      {3, 5, 8, 8, 8, 3, 1, 1},   // k3 fast path
      {16, 16, 12, 12, 12, 3, 1, 1},
      {2, 4, 7, 5, 6, 3, 2, 1},   // generic
      {4, 8, 16, 16, 16, 8, 8, 0},
      {5, 3, 5, 6, 7, 2, 2, 0},
  };
  int idx = 0;
  for (const auto& c : cases) {
    const auto g =
        Conv3dDims::make(c.ci, c.co, c.d, c.h, c.w, c.k, c.stride, c.pad);
    const auto in = randv((size_t)g.ci * g.d * g.h * g.w, 700 + idx);
    const auto wt = randv((size_t)g.co * g.ci * g.k * g.k * g.k, 800 + idx);
    const auto bias = randv((size_t)g.co, 900 + idx);
    const size_t on = (size_t)g.co * g.od * g.oh * g.ow;
    const auto gout = randv(on, 1000 + idx);

    std::vector<float> oa(on), ob(on);
    kernels::serial::conv3d_fwd(in.data(), wt.data(), bias.data(), oa.data(),
                                g);
    kernels::omp::conv3d_fwd(in.data(), wt.data(), bias.data(), ob.data(), g);
    CHECK(bitwise_equal(oa, ob));

    std::vector<float> gia(in.size(), 0.0f), gib(in.size(), 0.0f);
    kernels::serial::conv3d_bwd_input(gout.data(), wt.data(), gia.data(), g);
    kernels::omp::conv3d_bwd_input(gout.data(), wt.data(), gib.data(), g);
    CHECK(bitwise_equal(gia, gib));

    std::vector<float> gwa(wt.size(), 0.0f), gwb(wt.size(), 0.0f),
        gba(bias.size(), 0.0f), gbb(bias.size(), 0.0f);
    kernels::serial::conv3d_bwd_weight(gout.data(), in.data(), gwa.data(),
                                       gba.data(), g);
    kernels::omp::conv3d_bwd_weight(gout.data(), in.data(), gwb.data(),
                                    gbb.data(), g);
    CHECK(bitwise_equal(gba, gbb));
    if (g.k == 3 && g.stride == 1 && g.pad == 1) {
      CHECK(max_rel_diff(gwa, gwb) < 1e-3);
    } else {
      CHECK(bitwise_equal(gwa, gwb));
    }
    ++idx;
  }
}

TEST_CASE("omp route equals serial route for convt3d, matmul, linear") {
  const auto g = ConvT3dDims::make(6, 4, 4, 4, 4, 2, 2);
  const auto in = randv((size_t)g.ci * g.d * g.h * g.w, 51);
  const auto wt = randv((size_t)g.ci * g.co * g.k * g.k * g.k, 52);
  const auto bias = randv((size_t)g.co, 53);
  const size_t on = (size_t)g.co * g.od * g.oh * g.ow;
  const auto gout = randv(on, 54);

  std::vector<float> oa(on), ob(on);
  kernels::serial::convt3d_fwd(in.data(), wt.data(), bias.data(), oa.data(),
                               g);
  kernels::omp::convt3d_fwd(in.data(), wt.data(), bias.data(), ob.data(), g);
  CHECK(bitwise_equal(oa, ob));

  std::vector<float> gia(in.size(), 0.0f), gib(in.size(), 0.0f);
  kernels::serial::convt3d_bwd_input(gout.data(), wt.data(), gia.data(), g);
  kernels::omp::convt3d_bwd_input(gout.data(), wt.data(), gib.data(), g);
  CHECK(bitwise_equal(gia, gib));

  std::vector<float> gwa(wt.size(), 0.0f), gwb(wt.size(), 0.0f),
      gba(bias.size(), 0.0f), gbb(bias.size(), 0.0f);
  kernels::serial::convt3d_bwd_weight(gout.data(), in.data(), gwa.data(),
                                      gba.data(), g);
  kernels::omp::convt3d_bwd_weight(gout.data(), in.data(), gwb.data(),
                                   gbb.data(), g);
  CHECK(bitwise_equal(gwa, gwb));
  CHECK(bitwise_equal(gba, gbb));

  const int m = 33, k = 17, n = 29;
  const auto a = randv((size_t)m * k, 61);
  const auto b = randv((size_t)k * n, 62);
  std::vector<float> ca((size_t)m * n, 0.0f), cb((size_t)m * n, 0.0f);
  kernels::serial::matmul_nn(a.data(), b.data(), ca.data(), m, k, n, false);
  kernels::omp::matmul_nn(a.data(), b.data(), cb.data(), m, k, n, false);
  CHECK(bitwise_equal(ca, cb));
  // nt: reuse b as a [n][k] matrix (same element count), a stays [m][k].
  kernels::serial::matmul_nt(a.data(), b.data(), ca.data(), m, k, n, false);
  kernels::omp::matmul_nt(a.data(), b.data(), cb.data(), m, k, n, false);
  CHECK(bitwise_equal(ca, cb));
  // tn: reuse a as a [k][m] matrix.
  kernels::serial::matmul_tn(a.data(), b.data(), ca.data(), m, k, n, false);
  kernels::omp::matmul_tn(a.data(), b.data(), cb.data(), m, k, n, false);
  CHECK(bitwise_equal(ca, cb));

  const int rows = 19, din = 21, dout = 15;
  const auto x = randv((size_t)rows * din, 71);
  const auto w = randv((size_t)din * dout, 72);
  const auto lb = randv((size_t)dout, 73);
  std::vector<float> ya((size_t)rows * dout), yb((size_t)rows * dout);
  kernels::serial::linear_fwd(x.data(), w.data(), lb.data(), ya.data(), rows,
                              din, dout);
  kernels::omp::linear_fwd(x.data(), w.data(), lb.data(), yb.data(), rows, din,
                           dout);
  CHECK(bitwise_equal(ya, yb));

  const auto gy = randv((size_t)rows * dout, 74);
  std::vector<float> gxa((size_t)rows * din, 0.0f),
      gxb((size_t)rows * din, 0.0f);
  kernels::serial::linear_bwd_input(gy.data(), w.data(), gxa.data(), rows, din,
                                    dout);
  kernels::omp::linear_bwd_input(gy.data(), w.data(), gxb.data(), rows, din,
                                 dout);
  CHECK(bitwise_equal(gxa, gxb));

  std::vector<float> gwa2((size_t)din * dout, 0.0f),
      gwb2((size_t)din * dout, 0.0f), gba2((size_t)dout, 0.0f),
      gbb2((size_t)dout, 0.0f);
  kernels::serial::linear_bwd_weight(gy.data(), x.data(), gwa2.data(),
                                     gba2.data(), rows, din, dout);
  kernels::omp::linear_bwd_weight(gy.data(), x.data(), gwb2.data(),
                                  gbb2.data(), rows, din, dout);
  CHECK(bitwise_equal(gwa2, gwb2));
  CHECK(bitwise_equal(gba2, gbb2));
}

TEST_CASE("dispatcher obeys par::set_enabled") {
  // With parallelism disabled the dispatcher must take the serial route,
  // which is bitwise-distinguishable on the conv3d weight grad fast path
  // only by construction; instead verify via outputs on a generic case
  // (bitwise equal either way) plus direct equality with each route.
  const auto g = Conv3dDims::make(3, 4, 6, 6, 6, 3, 1, 1);
  const auto in = randv((size_t)g.ci * g.d * g.h * g.w, 81);
  const auto wt = randv((size_t)g.co * g.ci * g.k * g.k * g.k, 82);
  const size_t on = (size_t)g.co * g.od * g.oh * g.ow;

  const bool saved = par::enabled();
  std::vector<float> o_serial(on), o_omp(on), o_dispatch(on);
  kernels::serial::conv3d_fwd<float>(in.data(), wt.data(), nullptr,
                                     o_serial.data(), g);
  kernels::omp::conv3d_fwd<float>(in.data(), wt.data(), nullptr, o_omp.data(),
                                  g);

  par::set_enabled(false);
  kernels::conv3d_fwd<float>(in.data(), wt.data(), nullptr, o_dispatch.data(),
                             g);
  CHECK(bitwise_equal(o_dispatch, o_serial));

  par::set_enabled(true);
  kernels::conv3d_fwd<float>(in.data(), wt.data(), nullptr, o_dispatch.data(),
                             g);
  CHECK(bitwise_equal(o_dispatch, o_omp));
  par::set_enabled(saved);

  // Both routes agree here anyway.
  CHECK(bitwise_equal(o_serial, o_omp));
}

TEST_CASE("block_sum and block_sum_sq match double accumulation") {
  Rng rng(1234);
  std::vector<float> v(100001);
  for (auto& x : v) x = (float)rng.normal();
  double s = 0, s2 = 0;
  for (float x : v) {
    s += (double)x;
    s2 += (double)x * (double)x;
  }
  CHECK(par::block_sum(v.data(), (int64_t)v.size()) ==
        doctest::Approx(s).epsilon(1e-9));
  CHECK(par::block_sum_sq(v.data(), (int64_t)v.size()) ==
        doctest::Approx(s2).epsilon(1e-9));

  // Deterministic across the enabled flag (fixed block decomposition).
  const bool saved = par::enabled();
  par::set_enabled(true);
  const double a = par::block_sum(v.data(), (int64_t)v.size());
  par::set_enabled(false);
  const double b = par::block_sum(v.data(), (int64_t)v.size());
  par::set_enabled(saved);
  CHECK(a == b);

  CHECK(par::block_sum(v.data(), 0) == 0.0);
}
