#include "cmgan/generator.hpp"

#include <cmath>
#include <stdexcept>

namespace cmgan {

using ag::Tensor;

std::string to_string(ConformerOrder order) {
  switch (order) {
    case ConformerOrder::TimeThenFreq: return "TimeThenFreq";
    case ConformerOrder::FreqThenTime: return "FreqThenTime";
    case ConformerOrder::Parallel: return "Parallel";
  }
  return "?";
}

std::string to_string(DecoderMode mode) {
  switch (mode) {
    case DecoderMode::Both: return "Both";
    case DecoderMode::MagnitudeOnly: return "MagnitudeOnly";
    case DecoderMode::ComplexOnly: return "ComplexOnly";
  }
  return "?";
}

ConformerOrder parse_conformer_order(const std::string& name) {
  for (auto o : {ConformerOrder::TimeThenFreq, ConformerOrder::FreqThenTime, ConformerOrder::Parallel})
    if (to_string(o) == name) return o;
  throw std::invalid_argument("unknown conformer order '" + name + "' (TimeThenFreq, FreqThenTime, Parallel)");
}

DecoderMode parse_decoder_mode(const std::string& name) {
  for (auto m : {DecoderMode::Both, DecoderMode::MagnitudeOnly, DecoderMode::ComplexOnly})
    if (to_string(m) == name) return m;
  throw std::invalid_argument("unknown decoder mode '" + name + "' (Both, MagnitudeOnly, ComplexOnly)");
}

int GeneratorConfig::input_channels() const {
  switch (decoder_mode) {
    case DecoderMode::MagnitudeOnly: return 1;
    case DecoderMode::ComplexOnly: return 2;
    default: return 3;
  }
}

void GeneratorConfig::validate() const {
  if (channels <= 0 || channels % 2 != 0) throw std::invalid_argument("generator.channels must be positive and even");
  if (blocks < 0) throw std::invalid_argument("generator.blocks must be non-negative");
  if (heads <= 0 || channels % heads != 0) throw std::invalid_argument("generator.heads must divide generator.channels");
  if (freq_bins <= 0 || freq_bins % 2 != 0) {
    throw std::invalid_argument("generator.freq_bins must be even to halve the frequency axis, got " +
                                std::to_string(freq_bins));
  }
  if (dilations.empty()) throw std::invalid_argument("generator.dilations must not be empty");
  for (int d : dilations)
    if (d <= 0) throw std::invalid_argument("generator.dilations must be positive");
  if (ffn_expansion <= 0) throw std::invalid_argument("generator.ffn_expansion must be positive");
  if (depthwise_kernel <= 0 || depthwise_kernel % 2 == 0) {
    throw std::invalid_argument("generator.depthwise_kernel must be odd");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("generator.dropout must be in [0, 1)");
}

template <typename T>
SpectralInput<T> SpectralInput<T>::from_spectrograms(const std::vector<CompressedSpectrogram<T>>& specs) {
  if (specs.empty()) throw std::invalid_argument("spectral input needs at least one spectrogram");
  const int64_t B = static_cast<int64_t>(specs.size()), Tn = specs[0].frames, F = specs[0].bins;
  std::vector<T> m, r, i, p;
  for (const auto& s : specs) {
    if (s.frames != Tn || s.bins != F) throw ag::ShapeError("spectral input: spectrograms differ in shape");
    m.insert(m.end(), s.magnitude.begin(), s.magnitude.end());
    r.insert(r.end(), s.real.begin(), s.real.end());
    i.insert(i.end(), s.imag.begin(), s.imag.end());
    p.insert(p.end(), s.phase.begin(), s.phase.end());
  }
  const ag::Shape shape{B, Tn, F};
  return {Tensor<T>::constant(shape, std::move(m)), Tensor<T>::constant(shape, std::move(r)),
          Tensor<T>::constant(shape, std::move(i)), Tensor<T>::constant(shape, std::move(p))};
}

// ---- two-stage block ---------------------------------------------------------

template <typename T>
Tensor<T> TwoStageBlock<T>::time_stage(const Tensor<T>& x, const ForwardContext& ctx) const {
  const int64_t B = x.dim(0), Tn = x.dim(1), F = x.dim(2), C = x.dim(3);
  const Tensor<T> seq = ag::reshape(ag::permute(x, {0, 2, 1, 3}), {B * F, Tn, C});
  const Tensor<T> y = ag::add(seq, time_block(seq, ctx));
  return ag::permute(ag::reshape(y, {B, F, Tn, C}), {0, 2, 1, 3});
}

template <typename T>
Tensor<T> TwoStageBlock<T>::freq_stage(const Tensor<T>& x, const ForwardContext& ctx) const {
  const int64_t B = x.dim(0), Tn = x.dim(1), F = x.dim(2), C = x.dim(3);
  const Tensor<T> seq = ag::reshape(x, {B * Tn, F, C});
  const Tensor<T> y = ag::add(seq, freq_block(seq, ctx));
  return ag::reshape(y, {B, Tn, F, C});
}

template <typename T>
Tensor<T> TwoStageBlock<T>::operator()(const Tensor<T>& x, const ForwardContext& ctx) const {
  switch (order) {
    case ConformerOrder::TimeThenFreq: return freq_stage(time_stage(x, ctx), ctx);
    case ConformerOrder::FreqThenTime: return time_stage(freq_stage(x, ctx), ctx);
    case ConformerOrder::Parallel: {
      // x + sub_t(x) + sub_f(x)
      return ag::sub(ag::add(time_stage(x, ctx), freq_stage(x, ctx)), x);
    }
  }
  throw std::logic_error("unreachable conformer order");
}

// ---- generator ---------------------------------------------------------------

namespace {

ag::Conv2dOptions same_freq_pad_right() {
  ag::Conv2dOptions o;
  o.pad_right = 1;  // 1x2 kernel keeps the frequency length
  return o;
}

}  // namespace

template <typename T>
Generator<T>::Generator(const GeneratorConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int64_t C = cfg_.channels, Ch = C / 2, F = cfg_.freq_bins;
  const double a = cfg_.prelu_init;

  input_block_ = nn::ConvBlock<T>(params_, "encoder.input", cfg_.input_channels(), C, 1, 1, {}, a, rng);
  encoder_dense_ = nn::DenseNet<T>(params_, "encoder.dense", C, cfg_.dilations, a, rng);
  ag::Conv2dOptions halve;
  halve.stride_w = 2;
  halve.pad_left = halve.pad_right = 1;
  halve_block_ = nn::ConvBlock<T>(params_, "encoder.halve", C, C, 1, 3, halve, a, rng);

  nn::ConformerDims dims{C, cfg_.heads, cfg_.ffn_expansion, cfg_.depthwise_kernel, cfg_.dropout};
  for (int b = 0; b < cfg_.blocks; ++b) {
    const std::string name = "conformer" + std::to_string(b);
    TwoStageBlock<T> block;
    block.order = cfg_.order;
    block.time_block = nn::ConformerSubBlock<T>(params_, name + ".time", dims, rng);
    block.freq_block = nn::ConformerSubBlock<T>(params_, name + ".freq", dims, rng);
    blocks_.push_back(std::move(block));
  }

  auto make_trunk = [&](const std::string& name, int64_t out_channels) {
    DecoderTrunk d;
    d.dense = nn::DenseNet<T>(params_, name + ".dense", C, cfg_.dilations, a, rng);
    d.subpixel = nn::Conv2d<T>(params_, name + ".subpixel", C, 2 * Ch, 1, 1, {}, true, rng);
    d.squeeze = nn::ConvBlock<T>(params_, name + ".squeeze", Ch, out_channels, 1, 2, same_freq_pad_right(), a, rng);
    return d;
  };
  if (cfg_.decoder_mode != DecoderMode::ComplexOnly) {
    mask_trunk_ = make_trunk("mask_decoder", 1);
    mask_out_ = nn::Conv2d<T>(params_, "mask_decoder.output", 1, 1, 1, 2, same_freq_pad_right(), true, rng);
    mask_slope_ = params_.add_constant("mask_decoder.output_prelu", {F}, static_cast<T>(a));
  }
  if (cfg_.decoder_mode != DecoderMode::MagnitudeOnly) {
    complex_trunk_ = make_trunk("complex_decoder", 2);
    complex_out_ = nn::Conv2d<T>(params_, "complex_decoder.output", 2, 2, 1, 2, same_freq_pad_right(), true, rng);
  }
}

template <typename T>
Tensor<T> Generator<T>::input_features(const SpectralInput<T>& in) const {
  const auto& s = in.magnitude.shape();
  auto channel = [&](const Tensor<T>& t) {
    if (t.shape() != s) throw ag::ShapeError("generator input: mismatched spectral shapes");
    return ag::reshape(t, {s[0], s[1], s[2], 1});
  };
  switch (cfg_.decoder_mode) {
    case DecoderMode::MagnitudeOnly: return channel(in.magnitude);
    case DecoderMode::ComplexOnly: return ag::concat<T>({channel(in.real), channel(in.imag)}, 3);
    default: return ag::concat<T>({channel(in.magnitude), channel(in.real), channel(in.imag)}, 3);
  }
}

template <typename T>
Tensor<T> Generator<T>::encode(const Tensor<T>& features, const ForwardContext& ctx) const {
  if (features.rank() != 4 || features.dim(3) != cfg_.input_channels()) {
    throw ag::ShapeError("encode: expected [B, T, F, " + std::to_string(cfg_.input_channels()) + "], got " +
                         ag::shape_str(features.shape()));
  }
  if (features.dim(2) % 2 != 0) {
    throw ag::ShapeError("encode: odd frequency axis " + std::to_string(features.dim(2)) + " cannot be halved");
  }
  Tensor<T> x = ag::permute(features, {0, 3, 1, 2});
  x = input_block_(x, ctx);
  x = encoder_dense_(x, ctx);
  x = halve_block_(x, ctx);
  return ag::permute(x, {0, 2, 3, 1});
}

template <typename T>
Tensor<T> Generator<T>::conformer(const Tensor<T>& x, const ForwardContext& ctx) const {
  Tensor<T> y = x;
  for (const auto& b : blocks_) y = b(y, ctx);
  return y;
}

template <typename T>
Tensor<T> Generator<T>::decoder_trunk(const DecoderTrunk& d, const Tensor<T>& x, const ForwardContext& ctx) const {
  if (x.rank() != 4 || x.dim(3) != cfg_.channels) {
    throw ag::ShapeError("decoder: expected [B, T, F', " + std::to_string(cfg_.channels) + "], got " +
                         ag::shape_str(x.shape()));
  }
  Tensor<T> h = ag::permute(x, {0, 3, 1, 2});
  h = d.dense(h, ctx);
  h = nn::frequency_shuffle(d.subpixel(h));
  return d.squeeze(h, ctx);
}

template <typename T>
Tensor<T> Generator<T>::decode_mask(const Tensor<T>& x, const ForwardContext& ctx) const {
  if (cfg_.decoder_mode == DecoderMode::ComplexOnly) throw std::logic_error("mask decoder removed in ComplexOnly mode");
  Tensor<T> h = mask_out_(decoder_trunk(mask_trunk_, x, ctx));  // [B, 1, T, F]
  if (h.dim(3) != cfg_.freq_bins) {
    throw ag::ShapeError("decode_mask: feature map does not match " + std::to_string(cfg_.freq_bins) + " bins");
  }
  h = ag::prelu(h, mask_slope_, 3);
  return ag::permute(h, {0, 2, 3, 1});
}

template <typename T>
Tensor<T> Generator<T>::decode_complex(const Tensor<T>& x, const ForwardContext& ctx) const {
  if (cfg_.decoder_mode == DecoderMode::MagnitudeOnly) {
    throw std::logic_error("complex decoder removed in MagnitudeOnly mode");
  }
  const Tensor<T> h = complex_out_(decoder_trunk(complex_trunk_, x, ctx));  // [B, 2, T, F]
  return ag::permute(h, {0, 2, 3, 1});
}

template <typename T>
GeneratorOutput<T> Generator<T>::forward(const SpectralInput<T>& in, const ForwardContext& ctx) const {
  const auto& s = in.magnitude.shape();
  const Tensor<T> features = conformer(encode(input_features(in), ctx), ctx);
  GeneratorOutput<T> out;
  auto last_channel = [&](const Tensor<T>& t, int64_t c) { return ag::reshape(ag::slice(t, 3, c, 1), s); };
  if (cfg_.decoder_mode != DecoderMode::ComplexOnly) out.mask = ag::reshape(decode_mask(features, ctx), s);
  if (cfg_.decoder_mode != DecoderMode::MagnitudeOnly) {
    const Tensor<T> c = decode_complex(features, ctx);
    out.complex_real = last_channel(c, 0);
    out.complex_imag = last_channel(c, 1);
  }
  if (cfg_.decoder_mode == DecoderMode::ComplexOnly) {
    out.real = out.complex_real;
    out.imag = out.complex_imag;
  } else {
    std::tie(out.real, out.imag) = reconstruct(ag::mul(out.mask, in.magnitude), in.phase, out.complex_real,
                                               out.complex_imag);
  }
  out.magnitude = complex_magnitude(out.real, out.imag);
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> reconstruct(const Tensor<T>& magnitude, const Tensor<T>& noisy_phase,
                                            const Tensor<T>& comp_real, const Tensor<T>& comp_imag) {
  if (magnitude.shape() != noisy_phase.shape() || (comp_real.defined() && comp_real.shape() != magnitude.shape()) ||
      (comp_imag.defined() && comp_imag.shape() != magnitude.shape())) {
    throw ag::ShapeError("reconstruct: shape mismatch " + ag::shape_str(magnitude.shape()) + " vs " +
                         ag::shape_str(noisy_phase.shape()));
  }
  Tensor<T> re = ag::mul(magnitude, ag::cos(noisy_phase));
  Tensor<T> im = ag::mul(magnitude, ag::sin(noisy_phase));
  if (comp_real.defined()) re = ag::add(re, comp_real);
  if (comp_imag.defined()) im = ag::add(im, comp_imag);
  return {re, im};
}

template <typename T>
Tensor<T> complex_magnitude(const Tensor<T>& real, const Tensor<T>& imag, T eps) {
  return ag::pow_scalar(ag::add_scalar(ag::add(ag::square(real), ag::square(imag)), eps), T(0.5));
}

template <typename T>
std::vector<T> enhance(const Generator<T>& g, std::span<const T> noisy, const StftConfig& stft_cfg) {
  if (static_cast<int64_t>(noisy.size()) < stft_cfg.hop) {
    throw std::invalid_argument("enhance: clip shorter than one hop");
  }
  ag::NoGradGuard no_grad;
  const auto spec = stft<T>(noisy, stft_cfg);
  if (spec.bins != g.config().freq_bins) throw std::invalid_argument("enhance: STFT bins do not match the generator");
  const auto in = SpectralInput<T>::from_spectrograms({spec});
  const auto out = g.forward(in, ForwardContext{});
  const auto est = CompressedSpectrogram<T>::from_cartesian(spec.frames, spec.bins,
                                                            {out.real.values().begin(), out.real.values().end()},
                                                            {out.imag.values().begin(), out.imag.values().end()});
  return istft(est, stft_cfg, static_cast<int64_t>(noisy.size()));
}

#define CMGAN_INSTANTIATE_GENERATOR(T)                                                                      \
  template struct SpectralInput<T>;                                                                         \
  template struct TwoStageBlock<T>;                                                                         \
  template class Generator<T>;                                                                              \
  template std::pair<Tensor<T>, Tensor<T>> reconstruct<T>(const Tensor<T>&, const Tensor<T>&,               \
                                                          const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> complex_magnitude<T>(const Tensor<T>&, const Tensor<T>&, T);                           \
  template std::vector<T> enhance<T>(const Generator<T>&, std::span<const T>, const StftConfig&);

CMGAN_INSTANTIATE_GENERATOR(float)
CMGAN_INSTANTIATE_GENERATOR(double)

}  // namespace cmgan
