// OpenMP kernels against the serial reference kernels on random geometries.

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cmgan/kernels.hpp"
#include "cmgan/random.hpp"

using namespace cmgan;
using namespace cmgan::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, int64_t n) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = uniform(rng, -1.0, 1.0);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

int64_t pick(Rng& rng, int64_t lo, int64_t hi) { return lo + static_cast<int64_t>(uniform_index(rng, hi - lo + 1)); }

}  // namespace

TEST_CASE("gemm matches the reference for every transpose combination") {
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const int64_t m = pick(rng, 1, 17), n = pick(rng, 1, 19), k = pick(rng, 1, 13);
    const bool ta = trial % 2, tb = (trial / 2) % 2, acc = (trial / 4) % 2;
    const auto a = random_vec(rng, m * k), b = random_vec(rng, k * n);
    auto c1 = random_vec(rng, m * n);
    auto c2 = c1;
    gemm<double>(ta, tb, m, n, k, a, b, c1, acc);
    reference::gemm<double>(ta, tb, m, n, k, a, b, c2, acc);
    CHECK(max_abs_diff(c1, c2) < 1e-12);
  }
}

TEST_CASE("conv2d forward and both adjoints match the reference") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    Conv2dGeometry g;
    g.batch = pick(rng, 1, 2);
    g.in_channels = pick(rng, 1, 4);
    g.out_channels = pick(rng, 1, 4);
    g.in_h = pick(rng, 3, 9);
    g.in_w = pick(rng, 3, 11);
    g.kernel_h = pick(rng, 1, 3);
    g.kernel_w = pick(rng, 1, 4);
    g.stride_h = pick(rng, 1, 2);
    g.stride_w = pick(rng, 1, 2);
    g.dilation_h = pick(rng, 1, 3);
    g.dilation_w = pick(rng, 1, 2);
    g.pad_top = pick(rng, 0, 3);
    g.pad_bottom = pick(rng, 0, 2);
    g.pad_left = pick(rng, 0, 2);
    g.pad_right = pick(rng, 0, 3);
    if (g.out_h() <= 0 || g.out_w() <= 0) continue;
    const auto x = random_vec(rng, g.input_size());
    const auto w = random_vec(rng, g.weight_size());
    const auto b = random_vec(rng, g.out_channels);
    std::vector<double> y1(static_cast<size_t>(g.output_size())), y2 = y1;
    conv2d_forward<double>(g, x, w, b, y1);
    reference::conv2d_forward<double>(g, x, w, b, y2);
    CHECK(max_abs_diff(y1, y2) < 1e-12);

    const auto gy = random_vec(rng, g.output_size());
    std::vector<double> gx1(static_cast<size_t>(g.input_size()), 0.0), gx2 = gx1;
    conv2d_backward_input<double>(g, gy, w, gx1);
    reference::conv2d_backward_input<double>(g, gy, w, gx2);
    CHECK(max_abs_diff(gx1, gx2) < 1e-12);

    std::vector<double> gw1(static_cast<size_t>(g.weight_size()), 0.0), gw2 = gw1;
    std::vector<double> gb1(static_cast<size_t>(g.out_channels), 0.0), gb2 = gb1;
    conv2d_backward_weight<double>(g, gy, x, gw1, gb1);
    reference::conv2d_backward_weight<double>(g, gy, x, gw2, gb2);
    CHECK(max_abs_diff(gw1, gw2) < 1e-12);
    CHECK(max_abs_diff(gb1, gb2) < 1e-12);
  }
}

TEST_CASE("depthwise conv1d matches the reference") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Depthwise1dGeometry g{pick(rng, 1, 3), pick(rng, 1, 12), pick(rng, 1, 6), 2 * pick(rng, 0, 4) + 1};
    const int64_t n = g.batch * g.length * g.channels;
    const auto x = random_vec(rng, n), w = random_vec(rng, g.channels * g.kernel), b = random_vec(rng, g.channels);
    std::vector<double> y1(static_cast<size_t>(n)), y2 = y1;
    depthwise1d_forward<double>(g, x, w, b, y1);
    reference::depthwise1d_forward<double>(g, x, w, b, y2);
    CHECK(max_abs_diff(y1, y2) < 1e-12);
    const auto gy = random_vec(rng, n);
    std::vector<double> gx1(static_cast<size_t>(n), 0.0), gx2 = gx1;
    std::vector<double> gw1(w.size(), 0.0), gw2 = gw1, gb1(b.size(), 0.0), gb2 = gb1;
    depthwise1d_backward<double>(g, gy, x, w, gx1, gw1, gb1);
    reference::depthwise1d_backward<double>(g, gy, x, w, gx2, gw2, gb2);
    CHECK(max_abs_diff(gx1, gx2) < 1e-12);
    CHECK(max_abs_diff(gw1, gw2) < 1e-12);
    CHECK(max_abs_diff(gb1, gb2) < 1e-12);
  }
}

TEST_CASE("attention matches the reference") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t S = pick(rng, 1, 4), L = pick(rng, 1, 9), D = pick(rng, 1, 5);
    const double scale = 1.0 / std::sqrt(static_cast<double>(D));
    const int64_t n = S * L * D;
    const auto q = random_vec(rng, n), k = random_vec(rng, n), v = random_vec(rng, n);
    std::vector<double> o1(static_cast<size_t>(n)), o2 = o1, l1(static_cast<size_t>(S * L)), l2 = l1;
    attention_forward<double>(S, L, D, scale, q, k, v, o1, l1);
    reference::attention_forward<double>(S, L, D, scale, q, k, v, o2, l2);
    CHECK(max_abs_diff(o1, o2) < 1e-12);
    CHECK(max_abs_diff(l1, l2) < 1e-12);
    const auto go = random_vec(rng, n);
    std::vector<double> gq1(static_cast<size_t>(n), 0.0), gk1 = gq1, gv1 = gq1, gq2 = gq1, gk2 = gq1, gv2 = gq1;
    attention_backward<double>(S, L, D, scale, q, k, v, o1, l1, go, gq1, gk1, gv1);
    reference::attention_backward<double>(S, L, D, scale, q, k, v, o2, l2, go, gq2, gk2, gv2);
    CHECK(max_abs_diff(gq1, gq2) < 1e-12);
    CHECK(max_abs_diff(gk1, gk2) < 1e-12);
    CHECK(max_abs_diff(gv1, gv2) < 1e-12);
  }
}

TEST_CASE("fixed-order kernels are bitwise repeatable") {
  Rng rng(3);
  Conv2dGeometry g;
  g.batch = 2;
  g.in_channels = 3;
  g.out_channels = 5;
  g.in_h = 12;
  g.in_w = 10;
  g.kernel_h = g.kernel_w = 3;
  g.pad_top = g.pad_bottom = g.pad_left = g.pad_right = 1;
  std::vector<float> x(static_cast<size_t>(g.input_size())), w(static_cast<size_t>(g.weight_size()));
  for (auto& v : x) v = static_cast<float>(uniform(rng, -1, 1));
  for (auto& v : w) v = static_cast<float>(uniform(rng, -1, 1));
  std::vector<float> y1(static_cast<size_t>(g.output_size())), y2 = y1;
  conv2d_forward<float>(g, x, w, {}, y1);
  conv2d_forward<float>(g, x, w, {}, y2);
  CHECK(y1 == y2);
}
