#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "cmgan/data.hpp"

using namespace cmgan;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Hand-built header with the given format fields and int16 payload.
std::vector<uint8_t> wav_bytes(uint16_t channels, uint32_t rate, uint16_t bits, std::vector<int16_t> data,
                               bool extra_chunk = false) {
  std::vector<uint8_t> b;
  auto u32 = [&](uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
  };
  auto u16 = [&](uint16_t v) {
    b.push_back(static_cast<uint8_t>(v));
    b.push_back(static_cast<uint8_t>(v >> 8));
  };
  auto tag = [&](const char* t) { b.insert(b.end(), t, t + 4); };
  tag("RIFF");
  u32(0);
  tag("WAVE");
  if (extra_chunk) {
    tag("LIST");
    u32(3);
    b.insert(b.end(), {'a', 'b', 'c', 0});
  }
  tag("fmt ");
  u32(16);
  u16(1);
  u16(channels);
  u32(rate);
  u32(rate * channels * bits / 8);
  u16(static_cast<uint16_t>(channels * bits / 8));
  u16(bits);
  tag("data");
  u32(static_cast<uint32_t>(data.size() * 2));
  for (int16_t v : data) u16(static_cast<uint16_t>(v));
  return b;
}

AudioClip clip(std::vector<double> s, std::string id = {}) { return {std::move(s), kSampleRate, std::move(id)}; }

std::vector<double> ramp(int64_t n) {
  std::vector<double> x(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) x[static_cast<size_t>(i)] = 0.5 * std::sin(0.01 * static_cast<double>(i)) + 1e-4;
  return x;
}

}  // namespace

TEST_CASE("load_audio scales int16 by 1/32768") {
  const auto c = decode_wav(wav_bytes(1, 16000, 16, {32767, 0, -32768, 1}));
  REQUIRE(c.size() == 4);
  CHECK(c.samples[0] == 0.999969482421875);
  CHECK(c.samples[1] == 0.0);
  CHECK(c.samples[2] == -1.0);
  CHECK(c.samples[3] == 1.0 / 32768.0);
  CHECK(c.sample_rate == 16000);
  CHECK(decode_wav(wav_bytes(1, 16000, 16, {5}, true)).samples[0] == 5.0 / 32768.0);
}

TEST_CASE("unsupported formats are named") {
  auto message = [](const std::vector<uint8_t>& b) {
    try {
      (void)decode_wav(b, "x.wav");
    } catch (const AudioFormatError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message(wav_bytes(1, 8000, 16, {0})).find("unsupported sample rate") != std::string::npos);
  CHECK(message(wav_bytes(2, 16000, 16, {0, 0})).find("unsupported channel count") != std::string::npos);
  CHECK(message(wav_bytes(1, 16000, 8, {0})).find("unsupported bit depth") != std::string::npos);
  auto truncated = wav_bytes(1, 16000, 16, {1, 2, 3});
  truncated.resize(truncated.size() - 2);
  CHECK(message(truncated).find("truncated") != std::string::npos);
  CHECK(message({'n', 'o', 'p', 'e'}).find("RIFF") != std::string::npos);
}

TEST_CASE("save then load is sample exact on the 16-bit grid") {
  TempDir dir("cmgan_test_wav");
  Rng rng(1);
  std::vector<double> x(5001);
  for (auto& v : x) v = static_cast<double>(static_cast<int64_t>(uniform_index(rng, 65536)) - 32768) / 32768.0;
  x[0] = -1.0;
  x[1] = 32767.0 / 32768.0;
  const fs::path p = dir.path / "sub" / "a.wav";
  save_audio(p, clip(x));
  const auto y = load_audio(p);
  CHECK(y.samples == x);
  CHECK(y.source_id == p.string());
  CHECK(fs::file_size(p) == 44 + 2 * x.size());

  save_audio(p, clip({2.0, -3.0}));
  CHECK(load_audio(p).samples == std::vector<double>{32767.0 / 32768.0, -1.0});
  CHECK_THROWS_AS(load_audio(dir.path / "missing.wav"), std::runtime_error);
}

TEST_CASE("mix_at_snr examples") {
  const auto c = clip(ramp(4000));
  Rng rng(2);
  std::vector<double> nz(1500);
  for (auto& v : nz) v = standard_normal(rng);
  const auto n = clip(nz);

  const auto p0 = mix_at_snr(c, n, 0.0);
  std::vector<double> scaled(c.size());
  for (size_t i = 0; i < c.size(); ++i) scaled[i] = p0.noisy.samples[i] - p0.clean.samples[i];
  CHECK(std::abs(energy(scaled) / energy(c.samples) - 1.0) < 1e-9);
  CHECK(p0.noisy.size() == c.size());
  CHECK(*p0.snr_db == 0.0);

  const auto p10 = mix_at_snr(c, n, 10.0);
  for (size_t i = 0; i < c.size(); ++i) scaled[i] = p10.noisy.samples[i] - p10.clean.samples[i];
  CHECK(std::abs(energy(c.samples) / energy(scaled) - 10.0) < 1e-6);
  // Tiled: the scaled noise repeats with the noise period.
  CHECK(std::abs(scaled[1500 + 7] - scaled[7]) < 1e-15);

  CHECK_THROWS_AS((void)mix_at_snr(c, n, 101.0), std::invalid_argument);
  CHECK_THROWS_AS((void)mix_at_snr(c, clip(std::vector<double>(10, 0.0)), 5.0), std::invalid_argument);
  CHECK_THROWS_AS((void)mix_at_snr(clip(std::vector<double>(10, 0.0)), n, 5.0), std::invalid_argument);
}

TEST_CASE("mix_at_snr achieves the requested SNR on random triples") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto len = static_cast<int64_t>(100 + uniform_index(rng, 5000));
    std::vector<double> c(static_cast<size_t>(len)), n(static_cast<size_t>(100 + uniform_index(rng, 5000)));
    for (auto& v : c) v = uniform(rng, -1, 1);
    for (auto& v : n) v = uniform(rng, -1, 1);
    const double snr = uniform(rng, -10.0, 40.0);
    const auto p = mix_at_snr(clip(c), clip(n), snr);
    std::vector<double> d(c.size());
    for (size_t i = 0; i < c.size(); ++i) d[i] = p.noisy.samples[i] - c[i];
    const double achieved = 10.0 * std::log10(energy(c) / energy(d));
    CHECK(std::abs(achieved - snr) < 1e-6);
  }
}

TEST_CASE("train batches crop with a shared offset") {
  const auto long_c = ramp(5 * kSampleRate);
  auto long_n = long_c;
  for (size_t i = 0; i < long_n.size(); ++i) long_n[i] += 1.0;
  const std::vector<PairedExample> pairs{{clip(long_c), clip(long_n), {}, {}}};
  Rng rng(4);
  const auto b = make_batch(std::span<const PairedExample>(pairs), {}, rng);
  CHECK(b.batch == 1);
  CHECK(b.length == 32000);
  const int64_t off = b.offsets[0];
  CHECK(off >= 0);
  CHECK(off <= 5 * kSampleRate - 32000);
  for (int64_t i = 0; i < 32000; i += 997) {
    CHECK(b.clean[static_cast<size_t>(i)] == long_c[static_cast<size_t>(off + i)]);
    CHECK(b.noisy[static_cast<size_t>(i)] == long_n[static_cast<size_t>(off + i)]);
  }
}

TEST_CASE("short clips wrap cyclically") {
  const auto c = ramp(20000);
  const std::vector<PairedExample> pairs{{clip(c), clip(c), {}, {}}};
  Rng rng(5);
  const auto b = make_batch(std::span<const PairedExample>(pairs), {}, rng);
  REQUIRE(b.length == 32000);
  CHECK(b.offsets[0] == 0);
  for (size_t i = 0; i < 12000; ++i) REQUIRE(b.clean[20000 + i] == b.clean[i]);
  for (size_t i = 0; i < 20000; ++i) REQUIRE(b.clean[i] == c[i]);
}

TEST_CASE("eval batches pad to a hop multiple and record the length") {
  const std::vector<PairedExample> pairs{{clip(ramp(32001)), clip(ramp(32001), "n.wav"), {}, {}}};
  Rng rng(6);
  BatchOptions opt;
  opt.mode = BatchMode::Eval;
  const auto b = make_batch(std::span<const PairedExample>(pairs), opt, rng);
  CHECK(b.length == 32100);
  CHECK(b.valid_lengths[0] == 32001);
  CHECK(b.source_ids[0] == "n.wav");
  CHECK(b.noisy[32050] == 0.0);

  const std::vector<PairedExample> two{pairs[0], pairs[0]};
  CHECK_THROWS_AS((void)make_batch(std::span<const PairedExample>(two), opt, rng), std::invalid_argument);
  CHECK_THROWS_AS((void)make_batch(std::span<const PairedExample>(), BatchOptions{}, rng), std::invalid_argument);
  const std::vector<PairedExample> bad{{clip(ramp(10)), clip(ramp(11)), {}, {}}};
  CHECK_THROWS_AS((void)make_batch(std::span<const PairedExample>(bad), BatchOptions{}, rng), std::invalid_argument);
}

TEST_CASE("batch order is a seeded permutation") {
  Rng a(9), b(9), c(10);
  const auto ea = epoch_batches(10, 4, a), eb = epoch_batches(10, 4, b), ec = epoch_batches(10, 4, c);
  CHECK(ea == eb);
  CHECK(ea != ec);
  REQUIRE(ea.size() == 3);
  CHECK(ea[2].size() == 2);
  std::vector<size_t> all;
  for (const auto& g : ea) all.insert(all.end(), g.begin(), g.end());
  std::sort(all.begin(), all.end());
  for (size_t i = 0; i < 10; ++i) CHECK(all[i] == i);

  const auto corpus = synth_corpus({4, 2.5, 1, {0, 5}});
  Rng r1(3), r2(3);
  for (int k = 0; k < 3; ++k) {
    const auto b1 = make_batch(std::span<const PairedExample>(corpus), {}, r1);
    const auto b2 = make_batch(std::span<const PairedExample>(corpus), {}, r2);
    CHECK(b1.noisy == b2.noisy);
    CHECK(b1.offsets == b2.offsets);
  }
}

TEST_CASE("synthetic corpus") {
  const auto a = synth_corpus({4, 1.0, 7, {0, 5, 10, 15}});
  const auto b = synth_corpus({4, 1.0, 7, {0, 5, 10, 15}});
  REQUIRE(a.size() == 4);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].clean.samples == b[i].clean.samples);
    CHECK(a[i].noisy.samples == b[i].noisy.samples);
    CHECK(a[i].clean.size() == 16000);
    double peak = 0.0;
    for (double v : a[i].noisy.samples) peak = std::max(peak, std::abs(v));
    CHECK(peak <= 0.9 + 1e-4);
    std::vector<double> d(a[i].clean.size());
    for (size_t k = 0; k < d.size(); ++k) d[k] = a[i].noisy.samples[k] - a[i].clean.samples[k];
    CHECK(std::abs(10.0 * std::log10(energy(a[i].clean.samples) / energy(d)) - *a[i].snr_db) < 0.05);
  }
  CHECK(a[0].clean.source_id == "synth_000.wav");
  CHECK(synth_corpus({4, 1.0, 8, {0}})[0].clean.samples != a[0].clean.samples);
  CHECK_THROWS_AS((void)synth_corpus({33, 1.0, 0, {0}}), std::invalid_argument);
}

TEST_CASE("dataset layouts") {
  TempDir dir("cmgan_test_dataset");
  const auto corpus = synth_corpus({3, 0.5, 2, {5}});

  SUBCASE("clean and noisy directories") {
    write_corpus(dir.path, corpus);
    const auto ds = load_dataset(dir.path);
    REQUIRE(ds.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
      CHECK(ds[i].clean.samples == corpus[i].clean.samples);
      CHECK(ds[i].noisy.samples == corpus[i].noisy.samples);
      CHECK(ds[i].noisy.source_id == corpus[i].clean.source_id);
    }
    fs::remove(dir.path / "noisy" / "synth_001.wav");
    CHECK_THROWS_AS((void)load_dataset(dir.path), std::runtime_error);
  }
  SUBCASE("manifest") {
    write_corpus(dir.path / "data", corpus);
    {
      std::ofstream m(dir.path / "list.txt");
      m << "data/clean/synth_002.wav\tdata/noisy/synth_002.wav\n\n# skipped\n";
      m << "data/clean/synth_000.wav\tdata/noisy/synth_000.wav\n";
    }
    const auto ds = load_dataset(dir.path / "list.txt");
    REQUIRE(ds.size() == 2);
    CHECK(ds[0].noisy.samples == corpus[2].noisy.samples);
    CHECK(ds[1].clean.samples == corpus[0].clean.samples);
  }
  SUBCASE("clean and noise directories mix on the fly") {
    for (const auto& p : corpus) save_audio(dir.path / "clean" / p.clean.source_id, p.clean);
    Rng rng(1);
    save_audio(dir.path / "noise" / "hum.wav", clip(synth_noise(rng, 3000)));
    DatasetOptions opt;
    opt.mix_snrs_db = {10.0};
    const auto ds = load_dataset(dir.path, opt);
    REQUIRE(ds.size() == 3);
    for (const auto& p : ds) {
      CHECK(*p.snr_db == 10.0);
      std::vector<double> d(p.clean.size());
      for (size_t k = 0; k < d.size(); ++k) d[k] = p.noisy.samples[k] - p.clean.samples[k];
      CHECK(std::abs(10.0 * std::log10(energy(p.clean.samples) / energy(d)) - 10.0) < 1e-6);
    }
  }
  SUBCASE("missing pieces") {
    CHECK_THROWS_AS((void)load_dataset(dir.path / "nothing"), std::runtime_error);
    fs::create_directories(dir.path / "clean");
    CHECK_THROWS_AS((void)load_dataset(dir.path), std::runtime_error);
  }
}
