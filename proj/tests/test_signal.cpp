#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "cmgan/gradcheck.hpp"
#include "cmgan/random.hpp"
#include "cmgan/signal.hpp"

using namespace cmgan;

namespace {

template <typename T>
std::vector<T> white_noise(Rng& rng, int64_t n) {
  std::vector<T> x(static_cast<size_t>(n));
  for (auto& v : x) v = static_cast<T>(uniform(rng, -1.0, 1.0));
  return x;
}

template <typename T>
double relative_l2(const std::vector<T>& ref, const std::vector<T>& est) {
  double num = 0, den = 0;
  for (size_t i = 0; i < ref.size(); ++i) {
    num += (double(ref[i]) - double(est[i])) * (double(ref[i]) - double(est[i]));
    den += double(ref[i]) * double(ref[i]);
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("stft geometry") {
  StftConfig cfg;
  std::vector<double> x(32000, 0.1);
  const auto s = stft<double>(x, cfg);
  CHECK(s.frames == 321);
  CHECK(s.bins == 200);
  CHECK(s.magnitude.size() == 321u * 200u);

  for (int64_t L = 100; L <= 40000; L += 997) {
    std::vector<double> y(static_cast<size_t>(L), 0.0);
    CHECK(stft<double>(y, cfg).frames == L / 100 + 1);
  }
}

TEST_CASE("stft of silence is silent") {
  StftConfig cfg;
  std::vector<double> x(3000, 0.0);
  const auto s = stft<double>(x, cfg);
  for (size_t i = 0; i < s.magnitude.size(); ++i) {
    CHECK(s.magnitude[i] == 0.0);
    CHECK(s.real[i] == 0.0);
    CHECK(s.imag[i] == 0.0);
  }
}

TEST_CASE("1 kHz sine peaks at bin 25") {
  StftConfig cfg;
  std::vector<double> x(16000);
  for (size_t n = 0; n < x.size(); ++n) x[n] = std::sin(2.0 * std::numbers::pi * 1000.0 * n / 16000.0);
  const auto s = stft<double>(x, cfg);
  for (int64_t t = 2; t < s.frames - 2; ++t) {
    int64_t best = 0;
    for (int64_t k = 1; k < s.bins; ++k)
      if (s.magnitude[t * s.bins + k] > s.magnitude[t * s.bins + best]) best = k;
    CHECK(best == 25);
  }
}

TEST_CASE("compressed spectrogram invariants") {
  Rng rng(4);
  StftConfig cfg;
  const auto x = white_noise<double>(rng, 4000);
  const auto s = stft<double>(x, cfg);
  for (size_t i = 0; i < s.magnitude.size(); ++i) {
    CHECK(s.magnitude[i] >= 0.0);
    CHECK(s.phase[i] > -std::numbers::pi);
    CHECK(s.phase[i] <= std::numbers::pi);
    const double m = std::hypot(s.real[i], s.imag[i]);
    CHECK(std::abs(m - s.magnitude[i]) <= 1e-5 * std::max(1.0, s.magnitude[i]));
    CHECK(std::abs(s.real[i] - s.magnitude[i] * std::cos(s.phase[i])) <= 1e-5 * std::max(1.0, s.magnitude[i]));
    CHECK(std::abs(s.imag[i] - s.magnitude[i] * std::sin(s.phase[i])) <= 1e-5 * std::max(1.0, s.magnitude[i]));
  }
}

TEST_CASE("raw stft is linear in amplitude") {
  Rng rng(8);
  StftConfig cfg;
  const auto x = white_noise<double>(rng, 2500);
  std::vector<double> ax(x);
  const double a = 3.7;
  for (auto& v : ax) v *= a;
  const auto r1 = stft_raw<double>(x, cfg);
  const auto r2 = stft_raw<double>(ax, cfg);
  double worst = 0;
  for (size_t i = 0; i < r1.real.size(); ++i) {
    worst = std::max(worst, std::abs(std::hypot(r2.real[i], r2.imag[i]) - a * std::hypot(r1.real[i], r1.imag[i])));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("perfect reconstruction") {
  StftConfig cfg;
  Rng rng(21);
  SUBCASE("white noise, 64-bit") {
    const auto x = white_noise<double>(rng, 16000);
    CHECK(relative_l2(x, istft(stft<double>(x, cfg), cfg, 16000)) < 1e-6);
  }
  SUBCASE("random clips in both precisions") {
    for (int i = 0; i < 5; ++i) {
      const int64_t L = 100 * (20 + static_cast<int64_t>(uniform_index(rng, 80)));
      const auto xd = white_noise<double>(rng, L);
      CHECK(relative_l2(xd, istft(stft<double>(xd, cfg), cfg, L)) < 1e-6);
      std::vector<float> xf(xd.begin(), xd.end());
      CHECK(relative_l2(xf, istft(stft<float>(xf, cfg), cfg, L)) < 1e-3);
    }
  }
  SUBCASE("lengths that are not hop multiples and very short clips") {
    for (int64_t L : {1234, 150, 101}) {
      const auto x = white_noise<double>(rng, L);
      CHECK(relative_l2(x, istft(stft<double>(x, cfg), cfg, L)) < 1e-6);
    }
  }
}

TEST_CASE("istft of a zero spectrogram is silent") {
  StftConfig cfg;
  const auto s = CompressedSpectrogram<double>::from_polar(11, 200, std::vector<double>(2200, 0.0),
                                                           std::vector<double>(2200, 0.0));
  for (double v : istft(s, cfg, 1000)) CHECK(v == 0.0);
}

TEST_CASE("istft follows the compression power law") {
  StftConfig cfg;
  Rng rng(6);
  const auto x = white_noise<double>(rng, 3000);
  const auto s = stft<double>(x, cfg);
  const double a = 1.8;
  std::vector<double> scaled(s.magnitude);
  for (auto& m : scaled) m *= a;
  const auto base = CompressedSpectrogram<double>::from_polar(s.frames, s.bins, s.magnitude, s.phase);
  const auto big = CompressedSpectrogram<double>::from_polar(s.frames, s.bins, scaled, s.phase);
  const auto y0 = istft(base, cfg, 3000);
  const auto y1 = istft(big, cfg, 3000);
  std::vector<double> expect(y0);
  for (auto& v : expect) v *= std::pow(a, 1.0 / cfg.compression);
  CHECK(relative_l2(expect, y1) < 1e-6);
}

TEST_CASE("power compression") {
  const std::vector<double> in{1.0, 0.0, 4.0};
  const auto c = power_compress<double>(in, 0.3);
  CHECK(c[0] == 1.0);
  CHECK(c[1] == 0.0);
  CHECK(c[2] == doctest::Approx(1.51572).epsilon(1e-5));
  const std::vector<double> back{1.0, 1.51572};
  const auto d = power_decompress<double>(back, 0.3);
  CHECK(d[0] == 1.0);
  CHECK(std::abs(d[1] - 4.0) < 1e-4);

  Rng rng(2);
  std::vector<double> r(500);
  for (auto& v : r) v = uniform(rng, 0.0, 10.0);
  const auto rt = power_decompress<double>(power_compress<double>(r, 0.3), 0.3);
  for (size_t i = 0; i < r.size(); ++i) CHECK(std::abs(rt[i] - r[i]) <= 1e-6 * std::max(r[i], 1e-12));

  const std::vector<double> neg{-0.1};
  CHECK_THROWS_AS(power_compress<double>(neg, 0.3), std::invalid_argument);
  CHECK_THROWS_AS(power_decompress<double>(neg, 0.3), std::invalid_argument);
}

TEST_CASE("stft argument errors") {
  StftConfig cfg;
  std::vector<double> empty;
  CHECK_THROWS_AS(stft<double>(empty, cfg), std::invalid_argument);
  std::vector<double> x(500, 0.1);
  cfg.compression = 1.5;
  CHECK_THROWS_AS(stft<double>(x, cfg), std::invalid_argument);
  cfg.compression = 0.0;
  CHECK_THROWS_AS(stft<double>(x, cfg), std::invalid_argument);
  StftConfig bad_hop;
  bad_hop.hop = 150;
  CHECK_THROWS_AS(stft<double>(x, bad_hop), std::invalid_argument);
}

TEST_CASE("differentiable istft matches the array path and its adjoint") {
  StftConfig cfg;
  Rng rng(12);
  const int64_t frames = 4, F = 200, L = 300;
  std::vector<double> re(frames * F), im(frames * F);
  for (auto& v : re) v = uniform(rng, -1, 1);
  for (auto& v : im) v = uniform(rng, -1, 1);
  RawSpectrogram<double> raw{frames, F, re, im, {}};
  const auto expect = istft_raw(raw, cfg, L);
  const auto tr = ag::Tensor<double>::parameter({1, frames, F}, re);
  const auto ti = ag::Tensor<double>::parameter({1, frames, F}, im);
  const auto y = istft_tensor(tr, ti, cfg, L);
  double worst = 0;
  for (int64_t j = 0; j < L; ++j) worst = std::max(worst, std::abs(y.values()[j] - expect[j]));
  CHECK(worst < 1e-12);

  std::vector<double> w(L);
  for (auto& v : w) v = uniform(rng, -1, 1);
  const auto wt = ag::Tensor<double>::constant({1, L}, w);
  auto loss = [&] {
    auto [r2, i2] = decompress_tensor(tr, ti, cfg.compression);
    return ag::sum(ag::mul(istft_tensor(r2, i2, cfg, L), wt));
  };
  const auto res = ag::grad_check(loss, {{"real", tr}, {"imag", ti}}, {1e-5, 64});
  CHECK(res.max_relative_error < 1e-5);
}
