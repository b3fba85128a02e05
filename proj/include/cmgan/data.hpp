#pragma once

// WAV input/output, noisy-mixture synthesis, batching, and dataset discovery.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmgan/audio.hpp"
#include "cmgan/random.hpp"

namespace cmgan {

class AudioFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mono 16-bit PCM at 16 kHz only; samples are value / 32768. Anything else
// throws AudioFormatError naming the offending property ("unsupported sample
// rate", "unsupported channel count", "unsupported bit depth").
AudioClip load_audio(const std::filesystem::path& path);

// Writes mono 16-bit PCM. Samples are scaled by 32768, rounded to nearest
// and saturated to the int16 range.
void save_audio(const std::filesystem::path& path, const AudioClip& clip);

// Little-endian RIFF/WAVE image of the clip, as save_audio writes it.
std::vector<uint8_t> encode_wav(std::span<const double> samples, int sample_rate = kSampleRate);
AudioClip decode_wav(std::span<const uint8_t> bytes, const std::string& source_id = {});

struct PairedExample {
  AudioClip clean;
  AudioClip noisy;
  std::optional<double> snr_db;
  std::optional<double> quality_label;
};

double energy(std::span<const double> x);

// noisy = clean + g * noise with g chosen so that the clean-to-scaled-noise
// energy ratio is 10^(snr_db / 10). The noise is tiled or trimmed to the
// clean length. Throws std::invalid_argument for silent inputs or
// snr_db > 100.
PairedExample mix_at_snr(const AudioClip& clean, const AudioClip& noise, double snr_db);

enum class BatchMode { Train, Eval };

struct BatchOptions {
  BatchMode mode = BatchMode::Train;
  int64_t slice_samples = 2 * kSampleRate;
  int64_t hop = 100;  // eval padding granularity
};

// Row-major [batch, length] waveforms.
struct Batch {
  int64_t batch = 0;
  int64_t length = 0;
  std::vector<double> clean;
  std::vector<double> noisy;
  std::vector<int64_t> offsets;        // train mode: crop offset per row
  std::vector<int64_t> valid_lengths;  // samples to keep after enhancement
  std::vector<std::string> source_ids;

  std::span<const double> clean_row(int64_t b) const;
  std::span<const double> noisy_row(int64_t b) const;
};

// Train mode: every pair becomes one row of exactly slice_samples. Longer
// clips are cropped at a uniform random offset shared by clean and noisy;
// shorter ones are wrapped cyclically. Eval mode: a single pair, zero padded
// at the end to the next hop multiple. Throws std::invalid_argument for an
// empty pair list, several pairs in eval mode, or mismatched pair lengths.
Batch make_batch(std::span<const PairedExample* const> pairs, const BatchOptions& opt, Rng& rng);
Batch make_batch(std::span<const PairedExample> pairs, const BatchOptions& opt, Rng& rng);

// Indices 0..n-1 shuffled with the engine and cut into groups of
// batch_size; the final group may be shorter.
std::vector<std::vector<size_t>> epoch_batches(size_t n, size_t batch_size, Rng& rng);

struct DatasetOptions {
  std::vector<double> mix_snrs_db{0.0, 5.0, 10.0, 15.0};  // clean/ + noise/ layout only
  uint64_t mix_seed = 0;
};

// A readable text file is a "clean_path<TAB>noisy_path" manifest, relative
// paths resolved against its directory. A directory holds either clean/ and
// noisy/ with identical file names, or clean/ and noise/, in which case every
// clean file is mixed with noise files in turn at seeded SNRs. source_id is
// the noisy file's path relative to the dataset root (the clean one for
// on-the-fly mixtures).
std::vector<PairedExample> load_dataset(const std::filesystem::path& source, const DatasetOptions& opt = {});

struct SynthOptions {
  int pairs = 4;
  double seconds = 1.0;
  uint64_t seed = 0;
  std::vector<double> snrs_db{0.0, 5.0, 10.0, 15.0};
};

inline constexpr int kMaxSynthPairs = 32;

// Harmonic voiced tone with a syllabic envelope and a vibrato-modulated
// pitch between 100 and 250 Hz.
std::vector<double> synth_speech(Rng& rng, int64_t samples);
// First-order autoregressive (coloured) Gaussian noise.
std::vector<double> synth_noise(Rng& rng, int64_t samples);

// Deterministic corpus of at most kMaxSynthPairs mixtures, peak-normalized
// jointly so both members stay inside [-0.9, 0.9] and the SNR is preserved.
std::vector<PairedExample> synth_corpus(const SynthOptions& opt);

// Writes root/clean/<id> and root/noisy/<id>, loadable by load_dataset.
void write_corpus(const std::filesystem::path& root, const std::vector<PairedExample>& pairs);

}  // namespace cmgan
