#include "cmgan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>

namespace cmgan {

namespace fs = std::filesystem;

namespace {

uint32_t read_u32(std::span<const uint8_t> b, size_t at) {
  return static_cast<uint32_t>(b[at]) | static_cast<uint32_t>(b[at + 1]) << 8 |
         static_cast<uint32_t>(b[at + 2]) << 16 | static_cast<uint32_t>(b[at + 3]) << 24;
}

uint16_t read_u16(std::span<const uint8_t> b, size_t at) {
  return static_cast<uint16_t>(b[at] | b[at + 1] << 8);
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_tag(std::vector<uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

bool tag_is(std::span<const uint8_t> b, size_t at, const char* tag) {
  return std::equal(tag, tag + 4, b.begin() + static_cast<std::ptrdiff_t>(at));
}

std::string where(const std::string& id) { return id.empty() ? std::string("wav") : id; }

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

std::vector<uint8_t> encode_wav(std::span<const double> samples, int sample_rate) {
  const auto data_bytes = static_cast<uint32_t>(samples.size() * 2);
  std::vector<uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<uint32_t>(sample_rate));
  put_u32(out, static_cast<uint32_t>(sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (double s : samples) {
    const double scaled = std::nearbyint(s * 32768.0);
    const auto v = static_cast<int16_t>(std::clamp(scaled, -32768.0, 32767.0));
    put_u16(out, static_cast<uint16_t>(v));
  }
  return out;
}

AudioClip decode_wav(std::span<const uint8_t> b, const std::string& source_id) {
  const std::string w = where(source_id);
  if (b.size() < 12 || !tag_is(b, 0, "RIFF") || !tag_is(b, 8, "WAVE")) {
    throw AudioFormatError(w + ": not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const uint32_t size = read_u32(b, pos + 4);
    const size_t body = pos + 8;
    if (tag_is(b, pos, "fmt ")) {
      if (size < 16 || body + size > b.size()) throw AudioFormatError(w + ": truncated fmt chunk");
      const uint16_t format = read_u16(b, body);
      const uint16_t channels = read_u16(b, body + 2);
      const uint32_t rate = read_u32(b, body + 4);
      const uint16_t bits = read_u16(b, body + 14);
      uint16_t effective = format;
      if (format == kFormatExtensible && size >= 26) effective = read_u16(b, body + 24);
      if (effective != kFormatPcm) {
        throw AudioFormatError(w + ": unsupported encoding (format tag " + std::to_string(effective) +
                               ", expected PCM)");
      }
      if (rate != static_cast<uint32_t>(kSampleRate)) {
        throw AudioFormatError(w + ": unsupported sample rate " + std::to_string(rate) + " Hz (expected 16000)");
      }
      if (channels != 1) {
        throw AudioFormatError(w + ": unsupported channel count " + std::to_string(channels) + " (expected 1)");
      }
      if (bits != 16) {
        throw AudioFormatError(w + ": unsupported bit depth " + std::to_string(bits) + " (expected 16)");
      }
      have_fmt = true;
    } else if (tag_is(b, pos, "data")) {
      if (!have_fmt) throw AudioFormatError(w + ": data chunk before fmt chunk");
      if (body + size > b.size()) throw AudioFormatError(w + ": truncated data chunk");
      AudioClip clip;
      clip.sample_rate = kSampleRate;
      clip.source_id = source_id;
      clip.samples.resize(size / 2);
      for (size_t i = 0; i < clip.samples.size(); ++i) {
        clip.samples[i] = static_cast<double>(static_cast<int16_t>(read_u16(b, body + 2 * i))) / 32768.0;
      }
      return clip;
    }
    pos = body + size + (size & 1u);
  }
  throw AudioFormatError(w + (have_fmt ? ": no data chunk" : ": no fmt chunk"));
}

AudioClip load_audio(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open audio file " + path.string());
  const std::vector<uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_wav(bytes, path.string());
}

void save_audio(const fs::path& path, const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate) {
    throw AudioFormatError(path.string() + ": unsupported sample rate " + std::to_string(clip.sample_rate) +
                           " Hz (expected 16000)");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto bytes = encode_wav(clip.samples, clip.sample_rate);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write audio file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

double energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

PairedExample mix_at_snr(const AudioClip& clean, const AudioClip& noise, double snr_db) {
  if (!std::isfinite(snr_db) || snr_db > 100.0) {
    throw std::invalid_argument("mix_at_snr: snr_db must be finite and at most 100 dB");
  }
  if (clean.samples.empty() || energy(clean.samples) == 0.0) {
    throw std::invalid_argument("mix_at_snr: silent clean signal");
  }
  if (noise.samples.empty()) throw std::invalid_argument("mix_at_snr: silent noise signal");
  const size_t n = clean.samples.size();
  std::vector<double> tiled(n);
  for (size_t i = 0; i < n; ++i) tiled[i] = noise.samples[i % noise.samples.size()];
  const double en = energy(tiled);
  if (en == 0.0) throw std::invalid_argument("mix_at_snr: silent noise signal");
  const double g = std::sqrt(energy(clean.samples) / (en * std::pow(10.0, snr_db / 10.0)));
  PairedExample p;
  p.clean = clean;
  p.noisy = clean;
  for (size_t i = 0; i < n; ++i) p.noisy.samples[i] += g * tiled[i];
  p.snr_db = snr_db;
  return p;
}

std::span<const double> Batch::clean_row(int64_t b) const {
  return std::span<const double>(clean).subspan(static_cast<size_t>(b * length), static_cast<size_t>(length));
}

std::span<const double> Batch::noisy_row(int64_t b) const {
  return std::span<const double>(noisy).subspan(static_cast<size_t>(b * length), static_cast<size_t>(length));
}

Batch make_batch(std::span<const PairedExample* const> pairs, const BatchOptions& opt, Rng& rng) {
  if (pairs.empty()) throw std::invalid_argument("make_batch: empty pair list");
  for (const auto* p : pairs) {
    if (p->clean.size() != p->noisy.size()) {
      throw std::invalid_argument("make_batch: clean and noisy lengths differ for '" + p->noisy.source_id + "'");
    }
    if (p->clean.size() == 0) throw std::invalid_argument("make_batch: empty clip '" + p->noisy.source_id + "'");
  }
  Batch b;
  b.batch = static_cast<int64_t>(pairs.size());
  if (opt.mode == BatchMode::Eval) {
    if (pairs.size() != 1) throw std::invalid_argument("make_batch: eval mode takes exactly one pair");
    if (opt.hop < 1) throw std::invalid_argument("make_batch: hop must be positive");
    const auto& p = *pairs[0];
    const auto n = static_cast<int64_t>(p.clean.size());
    b.length = (n + opt.hop - 1) / opt.hop * opt.hop;
    b.clean = p.clean.samples;
    b.noisy = p.noisy.samples;
    b.clean.resize(static_cast<size_t>(b.length), 0.0);
    b.noisy.resize(static_cast<size_t>(b.length), 0.0);
    b.offsets = {0};
    b.valid_lengths = {n};
    b.source_ids = {p.noisy.source_id};
    return b;
  }
  if (opt.slice_samples < 1) throw std::invalid_argument("make_batch: slice_samples must be positive");
  const int64_t len = opt.slice_samples;
  b.length = len;
  b.clean.resize(static_cast<size_t>(b.batch * len));
  b.noisy.resize(static_cast<size_t>(b.batch * len));
  for (int64_t r = 0; r < b.batch; ++r) {
    const auto& p = *pairs[static_cast<size_t>(r)];
    const auto n = static_cast<int64_t>(p.clean.size());
    const int64_t offset = n > len ? static_cast<int64_t>(uniform_index(rng, static_cast<uint64_t>(n - len + 1))) : 0;
    for (int64_t i = 0; i < len; ++i) {
      const auto src = static_cast<size_t>((offset + i) % n);
      b.clean[static_cast<size_t>(r * len + i)] = p.clean.samples[src];
      b.noisy[static_cast<size_t>(r * len + i)] = p.noisy.samples[src];
    }
    b.offsets.push_back(offset);
    b.valid_lengths.push_back(len);
    b.source_ids.push_back(p.noisy.source_id);
  }
  return b;
}

Batch make_batch(std::span<const PairedExample> pairs, const BatchOptions& opt, Rng& rng) {
  std::vector<const PairedExample*> ptrs;
  for (const auto& p : pairs) ptrs.push_back(&p);
  return make_batch(std::span<const PairedExample* const>(ptrs), opt, rng);
}

std::vector<std::vector<size_t>> epoch_batches(size_t n, size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw std::invalid_argument("epoch_batches: batch_size must be positive");
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<size_t>> out;
  for (size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

namespace {

std::vector<fs::path> wav_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".wav") out.push_back(fs::relative(e.path(), dir));
  }
  std::sort(out.begin(), out.end());
  return out;
}

PairedExample load_pair(const fs::path& clean, const fs::path& noisy, const std::string& id) {
  PairedExample p;
  p.clean = load_audio(clean);
  p.noisy = load_audio(noisy);
  if (p.clean.size() != p.noisy.size()) {
    throw std::runtime_error("length mismatch between " + clean.string() + " (" + std::to_string(p.clean.size()) +
                             ") and " + noisy.string() + " (" + std::to_string(p.noisy.size()) + ")");
  }
  p.clean.source_id = id;
  p.noisy.source_id = id;
  return p;
}

std::vector<PairedExample> load_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
  const fs::path base = manifest.parent_path();
  std::vector<PairedExample> out;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(manifest.string() + ":" + std::to_string(line_no) +
                               ": expected \"clean_path<TAB>noisy_path\"");
    }
    const fs::path c = line.substr(0, tab), n = line.substr(tab + 1);
    out.push_back(load_pair(c.is_absolute() ? c : base / c, n.is_absolute() ? n : base / n, n.string()));
  }
  return out;
}

}  // namespace

std::vector<PairedExample> load_dataset(const fs::path& source, const DatasetOptions& opt) {
  if (fs::is_regular_file(source)) return load_manifest(source);
  if (!fs::is_directory(source)) throw std::runtime_error("dataset not found: " + source.string());
  const fs::path clean_dir = source / "clean";
  if (!fs::is_directory(clean_dir)) throw std::runtime_error("dataset " + source.string() + " has no clean/ directory");
  const auto cleans = wav_files(clean_dir);
  if (cleans.empty()) throw std::runtime_error("no .wav files under " + clean_dir.string());
  std::vector<PairedExample> out;
  if (fs::is_directory(source / "noisy")) {
    for (const auto& rel : cleans) {
      const fs::path noisy = source / "noisy" / rel;
      if (!fs::exists(noisy)) throw std::runtime_error("missing noisy counterpart " + noisy.string());
      out.push_back(load_pair(clean_dir / rel, noisy, rel.generic_string()));
    }
    return out;
  }
  if (fs::is_directory(source / "noise")) {
    const auto noises = wav_files(source / "noise");
    if (noises.empty()) throw std::runtime_error("no .wav files under " + (source / "noise").string());
    if (opt.mix_snrs_db.empty()) throw std::invalid_argument("load_dataset: no mixing SNRs configured");
    Rng rng(opt.mix_seed);
    for (size_t i = 0; i < cleans.size(); ++i) {
      AudioClip c = load_audio(clean_dir / cleans[i]);
      const AudioClip n = load_audio(source / "noise" / noises[i % noises.size()]);
      const double snr = opt.mix_snrs_db[uniform_index(rng, opt.mix_snrs_db.size())];
      c.source_id = cleans[i].generic_string();
      PairedExample p = mix_at_snr(c, n, snr);
      p.noisy.source_id = p.clean.source_id;
      out.push_back(std::move(p));
    }
    return out;
  }
  throw std::runtime_error("dataset " + source.string() + " needs a noisy/ or noise/ directory next to clean/");
}

std::vector<double> synth_speech(Rng& rng, int64_t samples) {
  const double fs_hz = kSampleRate;
  const double f0 = uniform(rng, 100.0, 250.0);
  const double vibrato_hz = uniform(rng, 3.0, 6.0);
  const double syllable_hz = uniform(rng, 2.5, 5.0);
  const double f1 = uniform(rng, 300.0, 900.0), f2 = uniform(rng, 1000.0, 2500.0);
  const double env_phase = uniform01(rng);
  std::vector<double> x(static_cast<size_t>(samples));
  double phase = 0.0;
  for (int64_t n = 0; n < samples; ++n) {
    const double t = static_cast<double>(n) / fs_hz;
    const double f = f0 * (1.0 + 0.03 * std::sin(2.0 * std::numbers::pi * vibrato_hz * t));
    phase += 2.0 * std::numbers::pi * f / fs_hz;
    double v = 0.0;
    for (int h = 1; h * f < 4000.0; ++h) {
      const double fh = h * f;
      const double formant = std::exp(-0.5 * std::pow((fh - f1) / 200.0, 2)) +
                             0.5 * std::exp(-0.5 * std::pow((fh - f2) / 300.0, 2)) + 0.05;
      v += formant / h * std::sin(h * phase);
    }
    const double cycle = std::fmod(t * syllable_hz + env_phase, 1.0);
    const double env = cycle < 0.7 ? std::pow(std::sin(std::numbers::pi * cycle / 0.7), 2) : 0.0;
    x[static_cast<size_t>(n)] = env * v;
  }
  const double rms = std::sqrt(energy(x) / static_cast<double>(std::max<int64_t>(samples, 1)));
  if (rms > 0.0) {
    for (auto& v : x) v *= 0.1 / rms;
  }
  return x;
}

std::vector<double> synth_noise(Rng& rng, int64_t samples) {
  const double a = uniform(rng, 0.0, 0.95);
  std::vector<double> x(static_cast<size_t>(samples));
  double prev = 0.0;
  for (auto& v : x) {
    prev = a * prev + standard_normal(rng);
    v = prev;
  }
  const double rms = std::sqrt(energy(x) / static_cast<double>(std::max<int64_t>(samples, 1)));
  if (rms > 0.0) {
    for (auto& v : x) v *= 0.1 / rms;
  }
  return x;
}

std::vector<PairedExample> synth_corpus(const SynthOptions& opt) {
  if (opt.pairs < 1 || opt.pairs > kMaxSynthPairs) {
    throw std::invalid_argument("synth_corpus: pairs must lie in [1, " + std::to_string(kMaxSynthPairs) + "]");
  }
  if (!(opt.seconds > 0.0)) throw std::invalid_argument("synth_corpus: seconds must be positive");
  if (opt.snrs_db.empty()) throw std::invalid_argument("synth_corpus: no SNRs configured");
  Rng rng(opt.seed);
  const auto n = static_cast<int64_t>(std::llround(opt.seconds * kSampleRate));
  std::vector<PairedExample> out;
  for (int i = 0; i < opt.pairs; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%03d.wav", i);
    const AudioClip clean{synth_speech(rng, n), kSampleRate, id};
    const AudioClip noise{synth_noise(rng, n), kSampleRate, id};
    PairedExample p = mix_at_snr(clean, noise, opt.snrs_db[static_cast<size_t>(i) % opt.snrs_db.size()]);
    double peak = 0.0;
    for (size_t k = 0; k < p.noisy.samples.size(); ++k) {
      peak = std::max({peak, std::abs(p.clean.samples[k]), std::abs(p.noisy.samples[k])});
    }
    const double scale = peak > 0.9 ? 0.9 / peak : 1.0;
    // Quantized to the 16-bit grid so a written corpus reloads bit for bit.
    for (auto* s : {&p.clean.samples, &p.noisy.samples}) {
      for (auto& v : *s) v = std::nearbyint(v * scale * 32768.0) / 32768.0;
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_corpus(const fs::path& root, const std::vector<PairedExample>& pairs) {
  for (const auto& p : pairs) {
    if (p.clean.source_id.empty()) throw std::invalid_argument("write_corpus: pair without source_id");
    save_audio(root / "clean" / p.clean.source_id, p.clean);
    save_audio(root / "noisy" / p.clean.source_id, p.noisy);
  }
}

}  // namespace cmgan
