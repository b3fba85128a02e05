#include "cmgan/signal.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "cmgan/kernels.hpp"

namespace cmgan {

int64_t StftConfig::frame_count(int64_t length) const {
  if (centered) return length / hop + 1;
  if (length < fft_size) return 0;
  return (length - fft_size) / hop + 1;
}

void StftConfig::validate() const {
  if (window_length <= 0 || hop <= 0 || fft_size <= 0) throw std::invalid_argument("stft: sizes must be positive");
  if (window_length != fft_size) throw std::invalid_argument("stft: window_length must equal fft_size");
  if (fft_size % 2 != 0) throw std::invalid_argument("stft: fft_size must be even");
  if (window_length % hop != 0) throw std::invalid_argument("stft: hop must divide window_length");
  if (!(compression > 0.0 && compression <= 1.0)) {
    throw std::invalid_argument("stft: compression exponent must lie in (0, 1], got " + std::to_string(compression));
  }
}

template <typename T>
std::vector<T> hamming_window(int length) {
  std::vector<T> w(static_cast<size_t>(length));
  for (int n = 0; n < length; ++n) {
    w[n] = static_cast<T>(0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / length));
  }
  return w;
}

template <typename T>
std::vector<T> power_compress(std::span<const T> magnitude, double c) {
  std::vector<T> out(magnitude.size());
  for (size_t i = 0; i < out.size(); ++i) {
    if (magnitude[i] < T(0)) throw std::invalid_argument("power_compress: negative magnitude");
    out[i] = static_cast<T>(std::pow(magnitude[i], static_cast<T>(c)));
  }
  return out;
}

template <typename T>
std::vector<T> power_decompress(std::span<const T> magnitude, double c) {
  std::vector<T> out(magnitude.size());
  for (size_t i = 0; i < out.size(); ++i) {
    if (magnitude[i] < T(0)) throw std::invalid_argument("power_decompress: negative magnitude");
    out[i] = static_cast<T>(std::pow(magnitude[i], static_cast<T>(1.0 / c)));
  }
  return out;
}

namespace {

// Transform bases and window for one configuration.
template <typename T>
struct Plan {
  int64_t n = 0;     // fft size
  int64_t bins = 0;  // n / 2
  int64_t hop = 0;
  int64_t pad = 0;
  std::vector<T> window;
  std::vector<T> fwd_cos, fwd_sin;  // [n][bins]: cos(2 pi k m / n), -sin(...)
  std::vector<T> inv_cos, inv_sin;  // [bins][n]: c_k cos / n, -c_k sin / n

  explicit Plan(const StftConfig& cfg) {
    cfg.validate();
    n = cfg.fft_size;
    bins = cfg.bins();
    hop = cfg.hop;
    pad = cfg.centered ? cfg.window_length / 2 : 0;
    window = hamming_window<T>(cfg.window_length);
    fwd_cos.resize(static_cast<size_t>(n * bins));
    fwd_sin.resize(fwd_cos.size());
    inv_cos.resize(fwd_cos.size());
    inv_sin.resize(fwd_cos.size());
    for (int64_t m = 0; m < n; ++m)
      for (int64_t k = 0; k < bins; ++k) {
        const double ang = 2.0 * std::numbers::pi * static_cast<double>((k * m) % n) / static_cast<double>(n);
        const double weight = (k == 0 ? 1.0 : 2.0) / static_cast<double>(n);
        fwd_cos[m * bins + k] = static_cast<T>(std::cos(ang));
        fwd_sin[m * bins + k] = static_cast<T>(-std::sin(ang));
        inv_cos[k * n + m] = static_cast<T>(weight * std::cos(ang));
        inv_sin[k * n + m] = static_cast<T>(-weight * std::sin(ang));
      }
  }

  int64_t padded_length(int64_t frames) const { return (frames - 1) * hop + n; }

  // Squared-window overlap sum over the padded timeline.
  std::vector<T> window_energy(int64_t frames) const {
    std::vector<T> norm(static_cast<size_t>(padded_length(frames)), T(0));
    for (int64_t t = 0; t < frames; ++t)
      for (int64_t m = 0; m < n; ++m) norm[t * hop + m] += window[m] * window[m];
    return norm;
  }
};

// Reflection about the end samples, repeated for short signals.
int64_t reflect_index(int64_t i, int64_t length) {
  if (length == 1) return 0;
  const int64_t period = 2 * (length - 1);
  i %= period;
  if (i < 0) i += period;
  return i < length ? i : period - i;
}

template <typename T>
void check_target(const Plan<T>& plan, int64_t frames, int64_t target_length) {
  if (target_length < 0 || target_length + plan.pad > plan.padded_length(frames)) {
    throw std::invalid_argument("istft: target length " + std::to_string(target_length) + " exceeds the " +
                                std::to_string(frames) + "-frame span");
  }
}

// Window-normalized overlap-add of frames [frames][n] into target_length
// samples of the unpadded timeline.
template <typename T>
std::vector<T> overlap_add(const Plan<T>& plan, const std::vector<T>& frame_data, int64_t frames,
                           int64_t target_length) {
  check_target(plan, frames, target_length);
  std::vector<T> acc(static_cast<size_t>(plan.padded_length(frames)), T(0));
  for (int64_t t = 0; t < frames; ++t)
    for (int64_t m = 0; m < plan.n; ++m) acc[t * plan.hop + m] += plan.window[m] * frame_data[t * plan.n + m];
  const auto norm = plan.window_energy(frames);
  std::vector<T> out(static_cast<size_t>(target_length));
  for (int64_t j = 0; j < target_length; ++j) {
    const T d = norm[j + plan.pad];
    if (!(d > T(1e-11))) throw std::runtime_error("istft: zero overlap-add normalizer (degenerate window configuration)");
    out[j] = acc[j + plan.pad] / d;
  }
  return out;
}

template <typename T>
std::vector<T> synthesize_frames(const Plan<T>& plan, int64_t frames, std::span<const T> real,
                                 std::span<const T> imag, std::span<const T> nyquist) {
  std::vector<T> frame_data(static_cast<size_t>(frames * plan.n));
  kernels::gemm<T>(false, false, frames, plan.n, plan.bins, real, plan.inv_cos, frame_data, false);
  kernels::gemm<T>(false, false, frames, plan.n, plan.bins, imag, plan.inv_sin, frame_data, true);
  if (!nyquist.empty()) {
    for (int64_t t = 0; t < frames; ++t)
      for (int64_t m = 0; m < plan.n; ++m)
        frame_data[t * plan.n + m] += (m % 2 == 0 ? nyquist[t] : -nyquist[t]) / static_cast<T>(plan.n);
  }
  return frame_data;
}

}  // namespace

template <typename T>
RawSpectrogram<T> stft_raw(std::span<const T> samples, const StftConfig& cfg) {
  const Plan<T> plan(cfg);
  const int64_t L = static_cast<int64_t>(samples.size());
  if (L < 1) throw std::invalid_argument("stft: empty clip");
  const int64_t frames = cfg.frame_count(L);
  if (frames < 1) throw std::invalid_argument("stft: clip shorter than one window");
  std::vector<T> frame_data(static_cast<size_t>(frames * plan.n));
  for (int64_t t = 0; t < frames; ++t)
    for (int64_t m = 0; m < plan.n; ++m) {
      const int64_t src = t * plan.hop + m - plan.pad;
      const T x = cfg.centered ? samples[reflect_index(src, L)] : samples[src];
      frame_data[t * plan.n + m] = plan.window[m] * x;
    }
  RawSpectrogram<T> raw;
  raw.frames = frames;
  raw.bins = plan.bins;
  raw.real.resize(static_cast<size_t>(frames * plan.bins));
  raw.imag.resize(raw.real.size());
  kernels::gemm<T>(false, false, frames, plan.bins, plan.n, frame_data, plan.fwd_cos, raw.real, false);
  kernels::gemm<T>(false, false, frames, plan.bins, plan.n, frame_data, plan.fwd_sin, raw.imag, false);
  raw.nyquist.resize(static_cast<size_t>(frames));
  for (int64_t t = 0; t < frames; ++t) {
    T s = 0;
    for (int64_t m = 0; m < plan.n; ++m) s += (m % 2 == 0 ? T(1) : T(-1)) * frame_data[t * plan.n + m];
    raw.nyquist[t] = s;
  }
  return raw;
}

template <typename T>
CompressedSpectrogram<T> CompressedSpectrogram<T>::from_polar(int64_t frames, int64_t bins, std::vector<T> magnitude,
                                                              std::vector<T> phase) {
  CompressedSpectrogram s;
  s.frames = frames;
  s.bins = bins;
  s.real.resize(magnitude.size());
  s.imag.resize(magnitude.size());
  for (size_t i = 0; i < magnitude.size(); ++i) {
    if (magnitude[i] < T(0)) throw std::invalid_argument("spectrogram: negative magnitude");
    s.real[i] = magnitude[i] * std::cos(phase[i]);
    s.imag[i] = magnitude[i] * std::sin(phase[i]);
  }
  s.magnitude = std::move(magnitude);
  s.phase = std::move(phase);
  return s;
}

template <typename T>
CompressedSpectrogram<T> CompressedSpectrogram<T>::from_cartesian(int64_t frames, int64_t bins, std::vector<T> real,
                                                                  std::vector<T> imag) {
  CompressedSpectrogram s;
  s.frames = frames;
  s.bins = bins;
  s.magnitude.resize(real.size());
  s.phase.resize(real.size());
  for (size_t i = 0; i < real.size(); ++i) {
    s.magnitude[i] = std::sqrt(real[i] * real[i] + imag[i] * imag[i]);
    T p = std::atan2(imag[i], real[i]);
    if (p <= -std::numbers::pi_v<T>) p = std::numbers::pi_v<T>;
    s.phase[i] = p;
  }
  s.real = std::move(real);
  s.imag = std::move(imag);
  return s;
}

template <typename T>
CompressedSpectrogram<T> compress(const RawSpectrogram<T>& raw, double c) {
  if (!(c > 0.0 && c <= 1.0)) throw std::invalid_argument("compress: exponent must lie in (0, 1]");
  CompressedSpectrogram<T> s;
  s.frames = raw.frames;
  s.bins = raw.bins;
  const size_t n = raw.real.size();
  s.magnitude.resize(n);
  s.phase.resize(n);
  s.real.resize(n);
  s.imag.resize(n);
  const T ct = static_cast<T>(c);
  for (size_t i = 0; i < n; ++i) {
    const T mag = std::sqrt(raw.real[i] * raw.real[i] + raw.imag[i] * raw.imag[i]);
    T p = std::atan2(raw.imag[i], raw.real[i]);
    if (p <= -std::numbers::pi_v<T>) p = std::numbers::pi_v<T>;
    const T cm = std::pow(mag, ct);
    s.magnitude[i] = cm;
    s.phase[i] = p;
    // Scaling the raw components keeps cos/sin of the phase exact.
    const T scale = mag > T(0) ? cm / mag : T(0);
    s.real[i] = raw.real[i] * scale;
    s.imag[i] = raw.imag[i] * scale;
  }
  s.nyquist.resize(raw.nyquist.size());
  for (size_t t = 0; t < raw.nyquist.size(); ++t) {
    const T v = raw.nyquist[t];
    s.nyquist[t] = std::copysign(std::pow(std::abs(v), ct), v);
  }
  return s;
}

template <typename T>
RawSpectrogram<T> decompress(const CompressedSpectrogram<T>& spec, double c) {
  if (!(c > 0.0 && c <= 1.0)) throw std::invalid_argument("decompress: exponent must lie in (0, 1]");
  RawSpectrogram<T> raw;
  raw.frames = spec.frames;
  raw.bins = spec.bins;
  const size_t n = spec.real.size();
  raw.real.resize(n);
  raw.imag.resize(n);
  const T inv = static_cast<T>(1.0 / c);
  for (size_t i = 0; i < n; ++i) {
    const T mag = std::sqrt(spec.real[i] * spec.real[i] + spec.imag[i] * spec.imag[i]);
    const T scale = mag > T(0) ? std::pow(mag, inv - T(1)) : T(0);
    raw.real[i] = spec.real[i] * scale;
    raw.imag[i] = spec.imag[i] * scale;
  }
  raw.nyquist.resize(spec.nyquist.size());
  for (size_t t = 0; t < spec.nyquist.size(); ++t) {
    const T v = spec.nyquist[t];
    raw.nyquist[t] = std::copysign(std::pow(std::abs(v), inv), v);
  }
  return raw;
}

template <typename T>
CompressedSpectrogram<T> stft(std::span<const T> samples, const StftConfig& cfg) {
  return compress(stft_raw(samples, cfg), cfg.compression);
}

template <typename T>
std::vector<T> istft_raw(const RawSpectrogram<T>& raw, const StftConfig& cfg, int64_t target_length) {
  const Plan<T> plan(cfg);
  if (raw.bins != plan.bins || static_cast<int64_t>(raw.real.size()) != raw.frames * raw.bins ||
      raw.imag.size() != raw.real.size()) {
    throw std::invalid_argument("istft: spectrogram shape does not match the configuration");
  }
  const auto frame_data = synthesize_frames<T>(plan, raw.frames, raw.real, raw.imag, raw.nyquist);
  return overlap_add(plan, frame_data, raw.frames, target_length);
}

template <typename T>
std::vector<T> istft(const CompressedSpectrogram<T>& spec, const StftConfig& cfg, int64_t target_length) {
  return istft_raw(decompress(spec, cfg.compression), cfg, target_length);
}

template <typename T>
ag::Tensor<T> istft_tensor(const ag::Tensor<T>& real, const ag::Tensor<T>& imag, const StftConfig& cfg,
                           int64_t target_length) {
  auto plan = std::make_shared<Plan<T>>(cfg);
  if (real.rank() != 3 || real.shape() != imag.shape() || real.dim(2) != plan->bins) {
    throw ag::ShapeError("istft: spectra " + ag::shape_str(real.shape()) + " / " + ag::shape_str(imag.shape()) +
                         " do not match " + std::to_string(plan->bins) + " bins");
  }
  const int64_t B = real.dim(0), frames = real.dim(1), F = plan->bins;
  check_target(*plan, frames, target_length);
  std::vector<T> out(static_cast<size_t>(B * target_length));
  for (int64_t b = 0; b < B; ++b) {
    const auto fr = synthesize_frames<T>(*plan, frames, real.values().subspan(b * frames * F, frames * F),
                                         imag.values().subspan(b * frames * F, frames * F), {});
    const auto y = overlap_add(*plan, fr, frames, target_length);
    std::copy(y.begin(), y.end(), out.begin() + b * target_length);
  }
  return ag::make_result<T>("istft", {B, target_length}, std::move(out), {real, imag},
                            [plan, B, frames, F, target_length](ag::Node<T>& self) {
    auto* rp = self.parents[0].get();
    auto* ip = self.parents[1].get();
    T* gr = rp->requires_grad ? rp->ensure_grad().data() : nullptr;
    T* gi = ip->requires_grad ? ip->ensure_grad().data() : nullptr;
    const auto norm = plan->window_energy(frames);
    std::vector<T> gpad(static_cast<size_t>(plan->padded_length(frames)));
    std::vector<T> gframes(static_cast<size_t>(frames * plan->n));
    for (int64_t b = 0; b < B; ++b) {
      std::fill(gpad.begin(), gpad.end(), T(0));
      for (int64_t j = 0; j < target_length; ++j)
        gpad[j + plan->pad] = self.grad[b * target_length + j] / norm[j + plan->pad];
      for (int64_t t = 0; t < frames; ++t)
        for (int64_t m = 0; m < plan->n; ++m) gframes[t * plan->n + m] = plan->window[m] * gpad[t * plan->hop + m];
      if (gr) {
        kernels::gemm<T>(false, true, frames, F, plan->n, gframes, plan->inv_cos,
                         std::span<T>(gr + b * frames * F, frames * F), true);
      }
      if (gi) {
        kernels::gemm<T>(false, true, frames, F, plan->n, gframes, plan->inv_sin,
                         std::span<T>(gi + b * frames * F, frames * F), true);
      }
    }
  });
}

template <typename T>
std::pair<ag::Tensor<T>, ag::Tensor<T>> decompress_tensor(const ag::Tensor<T>& real, const ag::Tensor<T>& imag,
                                                        double c, T eps) {
  const auto mag2 = ag::add_scalar(ag::add(ag::square(real), ag::square(imag)), eps);
  const auto scale = ag::pow_scalar(mag2, static_cast<T>((1.0 / c - 1.0) / 2.0));
  return {ag::mul(real, scale), ag::mul(imag, scale)};
}

#define CMGAN_INSTANTIATE_SIGNAL(T)                                                                        \
  template std::vector<T> hamming_window<T>(int);                                                          \
  template std::vector<T> power_compress<T>(std::span<const T>, double);                                   \
  template std::vector<T> power_decompress<T>(std::span<const T>, double);                                 \
  template struct CompressedSpectrogram<T>;                                                                \
  template RawSpectrogram<T> stft_raw<T>(std::span<const T>, const StftConfig&);                           \
  template CompressedSpectrogram<T> compress<T>(const RawSpectrogram<T>&, double);                         \
  template RawSpectrogram<T> decompress<T>(const CompressedSpectrogram<T>&, double);                       \
  template CompressedSpectrogram<T> stft<T>(std::span<const T>, const StftConfig&);                        \
  template std::vector<T> istft_raw<T>(const RawSpectrogram<T>&, const StftConfig&, int64_t);              \
  template std::vector<T> istft<T>(const CompressedSpectrogram<T>&, const StftConfig&, int64_t);           \
  template ag::Tensor<T> istft_tensor<T>(const ag::Tensor<T>&, const ag::Tensor<T>&, const StftConfig&,    \
                                         int64_t);                                                         \
  template std::pair<ag::Tensor<T>, ag::Tensor<T>> decompress_tensor<T>(const ag::Tensor<T>&,              \
                                                                       const ag::Tensor<T>&, double, T);

CMGAN_INSTANTIATE_SIGNAL(float)
CMGAN_INSTANTIATE_SIGNAL(double)

}  // namespace cmgan
