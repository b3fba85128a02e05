#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "cmgan/metrics.hpp"
#include "cmgan/random.hpp"

using namespace cmgan;

namespace {

std::vector<double> tone(int64_t n, double freq, double amp = 0.5) {
  std::vector<double> x(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    x[static_cast<size_t>(i)] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / kSampleRate);
  }
  return x;
}

std::vector<double> noise(Rng& rng, int64_t n, double amp) {
  std::vector<double> x(static_cast<size_t>(n));
  for (auto& v : x) v = amp * standard_normal(rng);
  return x;
}

AudioClip clip(std::vector<double> s, std::string id = {}) { return {std::move(s), kSampleRate, std::move(id)}; }

}  // namespace

TEST_CASE("ssnr examples") {
  const auto x = tone(512 * 8, 440.0);
  CHECK(ssnr(x, x) == 35.0);
  CHECK(ssnr(x, std::vector<double>(x.size(), 0.0)) == 0.0);

  SUBCASE("per-frame noise at a tenth of the clean energy gives 10 dB") {
    Rng rng(2);
    std::vector<double> est = x;
    for (size_t f = 0; f < 8; ++f) {
      double ec = 0.0, en = 0.0;
      auto n = noise(rng, 512, 1.0);
      for (size_t i = 0; i < 512; ++i) {
        ec += x[f * 512 + i] * x[f * 512 + i];
        en += n[i] * n[i];
      }
      const double g = std::sqrt(0.1 * ec / en);
      for (size_t i = 0; i < 512; ++i) est[f * 512 + i] += g * n[i];
    }
    CHECK(std::abs(ssnr(x, est) - 10.0) < 0.1);
  }
  SUBCASE("clamping") {
    std::vector<double> huge(x.size());
    for (size_t i = 0; i < x.size(); ++i) huge[i] = -1000.0 * x[i];
    CHECK(ssnr(x, huge) == -10.0);
  }
}

TEST_CASE("ssnr skips silent frames and the partial tail") {
  auto x = tone(512 * 4 + 100, 300.0);
  std::fill(x.begin(), x.begin() + 512, 0.0);
  std::vector<double> est = x;
  for (size_t i = 512; i < 1024; ++i) est[i] = 0.0;  // frame 1 at 0 dB, frames 2 and 3 at 35 dB
  for (size_t i = 2048; i < x.size(); ++i) est[i] = 5.0;
  CHECK(ssnr(x, est) == doctest::Approx(70.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("ssnr errors") {
  const std::vector<double> a(1024, 0.1), b(1000, 0.1), silent(1024, 0.0), shortv(511, 0.1);
  CHECK_THROWS_AS((void)ssnr(a, b), std::invalid_argument);
  CHECK_THROWS_AS((void)ssnr(silent, silent), std::invalid_argument);
  CHECK_THROWS_AS((void)ssnr(shortv, shortv), std::invalid_argument);
}

TEST_CASE("ssnr of identical nonsilent clips is the ceiling") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = static_cast<int64_t>(512 + uniform_index(rng, 8000));
    const auto x = noise(rng, n, uniform(rng, 1e-3, 1.0));
    CHECK(ssnr(x, x) == 35.0);
  }
}

TEST_CASE("ssnr is invariant to joint positive scaling") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = noise(rng, 4096, 0.3);
    auto e = x;
    const auto n = noise(rng, 4096, uniform(rng, 0.01, 0.5));
    for (size_t i = 0; i < e.size(); ++i) e[i] += n[i];
    const double a = uniform(rng, 0.1, 10.0);
    std::vector<double> xs(x.size()), es(e.size());
    for (size_t i = 0; i < x.size(); ++i) {
      xs[i] = a * x[i];
      es[i] = a * e[i];
    }
    CHECK(std::abs(ssnr(x, e) - ssnr(xs, es)) < 1e-9);
  }
}

TEST_CASE("snr reaches the cap for a perfect estimate") {
  const auto x = tone(2000, 200.0);
  CHECK(snr(x, x) == 100.0);
  CHECK(snr(x, x, 60.0) == 60.0);
  std::vector<double> half(x.size());
  for (size_t i = 0; i < x.size(); ++i) half[i] = 0.5 * x[i];
  CHECK(snr(x, half) == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-12));
}

TEST_CASE("normalize_quality examples") {
  CHECK(normalize_quality(4.5, kPesqMin, kPesqMax) == 1.0);
  CHECK(normalize_quality(-0.5, kPesqMin, kPesqMax) == 0.0);
  CHECK(normalize_quality(2.0, kPesqMin, kPesqMax) == 0.5);
  CHECK(normalize_quality(9.0, kPesqMin, kPesqMax) == 1.0);
  CHECK(normalize_quality(-3.0, kPesqMin, kPesqMax) == 0.0);
  CHECK_THROWS_AS((void)normalize_quality(1.0, 2.0, 2.0), std::invalid_argument);
  CHECK_THROWS_AS((void)normalize_quality(1.0, 3.0, 2.0), std::invalid_argument);
}

TEST_CASE("normalize_quality is monotone and stays in [0, 1]") {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const double a = uniform(rng, -5, 10), b = uniform(rng, -5, 10);
    const double na = normalize_quality(a, kPesqMin, kPesqMax), nb = normalize_quality(b, kPesqMin, kPesqMax);
    CHECK(na >= 0.0);
    CHECK(na <= 1.0);
    if (a <= b) CHECK(na <= nb);
  }
}

TEST_CASE("evaluate on identical clips") {
  const auto x = clip(tone(4000, 500.0), "a.wav");
  const SsnrQuality q;
  const auto r = evaluate(x, x, {&q});
  CHECK(r.at("ssnr") == 35.0);
  CHECK(r.at("snr") == 100.0);
  CHECK(r.at("ssnr.raw") == 35.0);
  CHECK(r.at("ssnr.normalized") == 1.0);
  CHECK(r.size() == 4);
  CHECK_THROWS_AS((void)evaluate(x, clip(tone(3000, 500.0)), {&q}), std::invalid_argument);
}

TEST_CASE("report serialization is sorted and reproducible") {
  Rng rng(3);
  const auto c = clip(noise(rng, 3000, 0.2));
  const auto e = clip(noise(rng, 3000, 0.2));
  const SsnrQuality q;
  const auto a = report_json(evaluate(c, e, {&q}));
  const auto b = report_json(evaluate(c, e, {&q}));
  CHECK(a == b);
  CHECK(a.find("\"snr\"") < a.find("\"ssnr\""));
  CHECK(a.find("\"ssnr\"") < a.find("\"ssnr.normalized\""));
  CHECK(a.find("\"ssnr.normalized\"") < a.find("\"ssnr.raw\""));
}

TEST_CASE("sidecar plugin reads precomputed scores") {
  const auto path = std::filesystem::temp_directory_path() / "cmgan_sidecar_scores.txt";
  {
    std::ofstream out(path);
    out << "# comment\np232_001.wav\t3.2\nsub/p232_002.wav\t-1.0\n";
  }
  const auto plugin = make_quality_metric("sidecar:" + path.string());
  const auto ref = clip(tone(1000, 100.0));
  const auto s = plugin->score(ref, clip(tone(1000, 100.0), "p232_001.wav"));
  CHECK(s.metric == "sidecar");
  CHECK(s.raw == 3.2);
  CHECK(s.normalized == doctest::Approx(0.74).epsilon(1e-12));
  CHECK(plugin->score(ref, clip(tone(1000, 100.0), "sub/p232_002.wav")).normalized == 0.0);
  CHECK_THROWS_AS((void)plugin->score(ref, clip(tone(1000, 100.0), "missing.wav")), std::out_of_range);

  {
    std::ofstream out(path);
    out << "a.wav 3.0\n";
  }
  CHECK_THROWS_AS((void)SidecarQuality::from_file(path.string()), std::runtime_error);
  std::filesystem::remove(path);
  CHECK_THROWS_AS((void)make_quality_metric("pesq"), std::invalid_argument);
  CHECK(make_quality_metric("ssnr")->name() == "ssnr");
}

TEST_CASE("aggregate and spearman") {
  const MetricReport a{{"ssnr", 10.0}, {"snr", 4.0}}, b{{"ssnr", 20.0}, {"snr", 8.0}};
  const auto m = aggregate({a, b});
  CHECK(m.at("ssnr") == 15.0);
  CHECK(m.at("snr") == 6.0);
  CHECK_THROWS_AS((void)aggregate({a, MetricReport{{"ssnr", 1.0}}}), std::invalid_argument);

  const std::vector<double> x{1, 2, 3, 4, 5};
  CHECK(spearman(x, std::vector<double>{10, 20, 30, 40, 50}) == doctest::Approx(1.0));
  CHECK(spearman(x, std::vector<double>{5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman(x, std::vector<double>{1, 4, 9, 16, 25}) == doctest::Approx(1.0));
  // Ranks with ties: (1, 2.5, 2.5, 4) against (1, 2, 3, 4).
  CHECK(spearman(std::vector<double>{1, 2, 2, 3}, std::vector<double>{1, 2, 3, 4}) ==
        doctest::Approx(4.5 / std::sqrt(4.5 * 5.0)).epsilon(1e-12));
}
