#pragma once

// The conformer-based metric GAN generator: encoder, two-stage conformer
// blocks, mask and complex decoders, and the magnitude/complex recombination.
//
// Spectral tensors are [B, T, F] in the compressed domain. Feature maps
// exchanged between stages are channels-last [B, T, F', C].

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmgan/modules.hpp"
#include "cmgan/signal.hpp"

namespace cmgan {

enum class ConformerOrder { TimeThenFreq, FreqThenTime, Parallel };
enum class DecoderMode { Both, MagnitudeOnly, ComplexOnly };

std::string to_string(ConformerOrder order);
std::string to_string(DecoderMode mode);
// Throw std::invalid_argument on unknown names.
ConformerOrder parse_conformer_order(const std::string& name);
DecoderMode parse_decoder_mode(const std::string& name);

struct GeneratorConfig {
  int channels = 64;
  int blocks = 4;
  int heads = 4;
  std::vector<int> dilations{1, 2, 4, 8};
  int freq_bins = 200;
  ConformerOrder order = ConformerOrder::TimeThenFreq;
  DecoderMode decoder_mode = DecoderMode::Both;
  int ffn_expansion = 4;
  int depthwise_kernel = 31;
  double dropout = 0.1;
  double prelu_init = 0.2;

  int reduced_bins() const { return freq_bins / 2; }
  // Network input channels: (Y_m, Y_r, Y_i), Y_m alone, or (Y_r, Y_i).
  int input_channels() const;
  void validate() const;  // throws std::invalid_argument
};

// Compressed noisy spectrum, each [B, T, F].
template <typename T>
struct SpectralInput {
  ag::Tensor<T> magnitude, real, imag, phase;

  static SpectralInput from_spectrograms(const std::vector<CompressedSpectrogram<T>>& specs);
};

template <typename T>
struct GeneratorOutput {
  ag::Tensor<T> mask;                     // [B, T, F]; undefined for ComplexOnly
  ag::Tensor<T> complex_real, complex_imag;  // [B, T, F]; undefined for MagnitudeOnly
  ag::Tensor<T> real, imag;               // final estimate, [B, T, F]
  ag::Tensor<T> magnitude;                // sqrt(real^2 + imag^2 + eps)
};

// One two-stage conformer block on [B, T, F', C].
template <typename T>
struct TwoStageBlock {
  ConformerOrder order = ConformerOrder::TimeThenFreq;
  nn::ConformerSubBlock<T> time_block, freq_block;

  // Attention along time; frequency is folded into the batch.
  ag::Tensor<T> time_stage(const ag::Tensor<T>& x, const ForwardContext& ctx) const;
  // Attention along frequency; time is folded into the batch.
  ag::Tensor<T> freq_stage(const ag::Tensor<T>& x, const ForwardContext& ctx) const;
  ag::Tensor<T> operator()(const ag::Tensor<T>& x, const ForwardContext& ctx) const;
};

template <typename T>
class Generator {
 public:
  Generator(const GeneratorConfig& cfg, uint64_t seed);

  const GeneratorConfig& config() const { return cfg_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  const TwoStageBlock<T>& block(size_t i) const { return blocks_.at(i); }

  // [B, T, F, input_channels()] network input for the configured decoder mode.
  ag::Tensor<T> input_features(const SpectralInput<T>& in) const;
  // [B, T, F, Cin] -> [B, T, F', C]
  ag::Tensor<T> encode(const ag::Tensor<T>& features, const ForwardContext& ctx) const;
  // All conformer blocks, shape preserving.
  ag::Tensor<T> conformer(const ag::Tensor<T>& x, const ForwardContext& ctx) const;
  // [B, T, F', C] -> [B, T, F, 1]
  ag::Tensor<T> decode_mask(const ag::Tensor<T>& x, const ForwardContext& ctx) const;
  // [B, T, F', C] -> [B, T, F, 2]
  ag::Tensor<T> decode_complex(const ag::Tensor<T>& x, const ForwardContext& ctx) const;

  GeneratorOutput<T> forward(const SpectralInput<T>& in, const ForwardContext& ctx) const;

  // Final output layers of the decoders, exposed for tests.
  nn::Conv2d<T>& mask_output_conv() { return mask_out_; }
  ag::Tensor<T>& mask_output_slope() { return mask_slope_; }
  nn::Conv2d<T>& complex_output_conv() { return complex_out_; }

 private:
  struct DecoderTrunk {
    nn::DenseNet<T> dense;
    nn::Conv2d<T> subpixel;
    nn::ConvBlock<T> squeeze;
  };
  ag::Tensor<T> decoder_trunk(const DecoderTrunk& d, const ag::Tensor<T>& x, const ForwardContext& ctx) const;

  GeneratorConfig cfg_;
  ParameterSet<T> params_;
  nn::ConvBlock<T> input_block_;
  nn::DenseNet<T> encoder_dense_;
  nn::ConvBlock<T> halve_block_;
  std::vector<TwoStageBlock<T>> blocks_;
  DecoderTrunk mask_trunk_, complex_trunk_;
  nn::Conv2d<T> mask_out_, complex_out_;
  ag::Tensor<T> mask_slope_;  // one slope per frequency bin
};

// X_r = X_m cos(Y_p) + X'_r, X_i = X_m sin(Y_p) + X'_i. Either compensation
// may be undefined, meaning zero.
template <typename T>
std::pair<ag::Tensor<T>, ag::Tensor<T>> reconstruct(const ag::Tensor<T>& magnitude, const ag::Tensor<T>& noisy_phase,
                                                    const ag::Tensor<T>& comp_real, const ag::Tensor<T>& comp_imag);

// sqrt(real^2 + imag^2 + eps)
template <typename T>
ag::Tensor<T> complex_magnitude(const ag::Tensor<T>& real, const ag::Tensor<T>& imag, T eps = T(1e-12));

// Waveform in, waveform out, same length. Eval mode, no gradient recording.
template <typename T>
std::vector<T> enhance(const Generator<T>& g, std::span<const T> noisy, const StftConfig& stft_cfg);

}  // namespace cmgan
