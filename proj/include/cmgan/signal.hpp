#pragma once

// Short-time Fourier analysis/synthesis and power-law magnitude compression.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "cmgan/autograd.hpp"

namespace cmgan {

struct StftConfig {
  int sample_rate = 16000;
  int window_length = 400;  // 25 ms, periodic Hamming
  int hop = 100;            // 6.25 ms
  int fft_size = 400;
  bool centered = true;      // reflect-pad window_length / 2 on both sides
  double compression = 0.3;  // magnitude exponent c

  // Bins handed to the network: the one-sided transform minus the Nyquist bin.
  int bins() const { return fft_size / 2; }
  int64_t frame_count(int64_t length) const;
  void validate() const;  // throws std::invalid_argument
};

// One-sided spectrum without the Nyquist bin, row-major [frames][bins].
template <typename T>
struct RawSpectrogram {
  int64_t frames = 0;
  int64_t bins = 0;
  std::vector<T> real;
  std::vector<T> imag;
  std::vector<T> nyquist;  // [frames]; the Nyquist bin of a real frame is real
};

// Compressed spectrogram: magnitude |Y|^c with the phase of Y. `nyquist`
// holds the compressed Nyquist bin kept aside by analysis; empty means zero.
template <typename T>
struct CompressedSpectrogram {
  int64_t frames = 0;
  int64_t bins = 0;
  std::vector<T> magnitude;
  std::vector<T> phase;  // (-pi, pi]
  std::vector<T> real;
  std::vector<T> imag;
  std::vector<T> nyquist;

  // Builds real/imag from a magnitude and phase map.
  static CompressedSpectrogram from_polar(int64_t frames, int64_t bins, std::vector<T> magnitude,
                                          std::vector<T> phase);
  // Builds magnitude/phase from a real/imag map.
  static CompressedSpectrogram from_cartesian(int64_t frames, int64_t bins, std::vector<T> real,
                                              std::vector<T> imag);
};

template <typename T>
std::vector<T> hamming_window(int length);  // periodic

template <typename T>
std::vector<T> power_compress(std::span<const T> magnitude, double c);
template <typename T>
std::vector<T> power_decompress(std::span<const T> magnitude, double c);

template <typename T>
RawSpectrogram<T> stft_raw(std::span<const T> samples, const StftConfig& cfg);
template <typename T>
CompressedSpectrogram<T> compress(const RawSpectrogram<T>& raw, double c);
template <typename T>
RawSpectrogram<T> decompress(const CompressedSpectrogram<T>& spec, double c);

template <typename T>
CompressedSpectrogram<T> stft(std::span<const T> samples, const StftConfig& cfg);
template <typename T>
std::vector<T> istft_raw(const RawSpectrogram<T>& raw, const StftConfig& cfg, int64_t target_length);
template <typename T>
std::vector<T> istft(const CompressedSpectrogram<T>& spec, const StftConfig& cfg, int64_t target_length);

// ---- differentiable synthesis ------------------------------------------------

// Inverse transform of raw (uncompressed) spectra [B, frames, bins] with a zero
// Nyquist bin; returns waveforms [B, target_length].
template <typename T>
ag::Tensor<T> istft_tensor(const ag::Tensor<T>& real, const ag::Tensor<T>& imag, const StftConfig& cfg,
                           int64_t target_length);

// Raises the magnitude of (real, imag) to 1/c, keeping the phase. `eps`
// regularizes the magnitude at the origin.
template <typename T>
std::pair<ag::Tensor<T>, ag::Tensor<T>> decompress_tensor(const ag::Tensor<T>& real, const ag::Tensor<T>& imag,
                                                        double c, T eps = T(1e-12));

}  // namespace cmgan
