#pragma once

// Adversarial training: D step then G step per batch, AdamW updates, and the
// versioned checkpoint container.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmgan/config.hpp"
#include "cmgan/data.hpp"
#include "cmgan/discriminator.hpp"
#include "cmgan/generator.hpp"
#include "cmgan/metrics.hpp"
#include "cmgan/random.hpp"

namespace cmgan {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// One decoupled-decay Adam update of a tensor at 1-based step t:
//   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2,
//   theta -= lr (m / (1 - b1^t) / (sqrt(v / (1 - b2^t)) + eps) + wd theta).
// Throws ag::ShapeError when the spans differ in length.
void adamw_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                  const AdamWConfig& cfg, int64_t step);

// Moments for every tensor of a parameter set, in entry order.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParameterSet<float>& params, AdamWConfig cfg);

  // Applies one update from the accumulated gradients (missing ones count as
  // zero) and advances the step counter.
  void step(ParameterSet<float>& params);

  const AdamWConfig& config() const { return cfg_; }
  void set_config(const AdamWConfig& cfg) { cfg_ = cfg; }
  int64_t steps() const { return steps_; }
  void set_steps(int64_t s) { steps_ = s; }
  std::vector<std::vector<float>>& first_moments() { return m_; }
  std::vector<std::vector<float>>& second_moments() { return v_; }
  const std::vector<std::vector<float>>& first_moments() const { return m_; }
  const std::vector<std::vector<float>>& second_moments() const { return v_; }

 private:
  AdamWConfig cfg_;
  int64_t steps_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// Global L2 norm of all gradients; rescales them to max_norm when larger and
// max_norm > 0. Returns the norm before clipping.
double clip_grad_norm(ParameterSet<float>& params, double max_norm);

struct StepReport {
  int64_t step = 0;  // 1-based index of the completed step
  int64_t epoch = 0;
  double l_tf = 0, l_mag = 0, l_ri = 0, l_gan = 0, l_time = 0, l_g = 0;
  double l_d = 0;                       // 0 when discriminator updates are off
  double d_clean = 0, d_est = 0;        // mean D scores seen by the D step
  double quality = 0;                   // mean normalized label
  double grad_norm_g = 0, grad_norm_d = 0;

  std::string to_json() const;  // one NDJSON line, sorted keys
};

struct NamedTensor {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> values;
};

inline constexpr int kCheckpointVersion = 1;

// "CMG1", u64 metadata length, UTF-8 JSON metadata, then per tensor: u64 name
// length, name, u64 rank, rank x i64 dims, float32 values (all little endian).
struct Checkpoint {
  int version = kCheckpointVersion;
  std::string metadata_json;  // config snapshot, counters, RNG state
  std::vector<NamedTensor> tensors;
};

std::vector<uint8_t> encode_checkpoint(const Checkpoint& c);
// Throws std::runtime_error on a bad magic, version mismatch, or truncation.
Checkpoint decode_checkpoint(std::span<const uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Spectral view of waveform batch rows, each [B, T, F].
struct SpectralBatch {
  SpectralInput<float> noisy;
  ag::Tensor<float> clean_mag, clean_real, clean_imag;
  ag::Tensor<float> clean_wave;  // [B, L]
};
SpectralBatch spectral_batch(const Batch& batch, const StftConfig& cfg);

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  Generator<float>& generator() { return *gen_; }
  Discriminator<float>& discriminator() { return *disc_; }
  AdamW& generator_optimizer() { return opt_g_; }
  AdamW& discriminator_optimizer() { return opt_d_; }
  Rng& rng() { return rng_; }
  int64_t step() const { return step_; }
  void set_quality_metric(std::unique_ptr<QualityMetric> metric) { quality_ = std::move(metric); }

  // One D update (labels from the quality metric on the current estimate,
  // estimate detached) followed by one G update on the total loss with
  // fresh D scores. Throws ag::NumericError naming the first non-finite
  // tensor when a loss is not finite.
  StepReport train_step(const Batch& batch);

  // Regresses D(clean, estimate) onto labels and applies one D update.
  // Returns the discriminator loss.
  double discriminator_step(const ag::Tensor<float>& clean_mag, const ag::Tensor<float>& est_mag,
                            const ag::Tensor<float>& labels);

  // Runs epochs (or max_steps) from the current step over the pairs, logs
  // NDJSON reports and writes checkpoints as configured.
  void fit(const std::vector<PairedExample>& pairs, const std::function<void(const StepReport&)>& on_step = {});

  Checkpoint checkpoint() const;
  void save(const std::filesystem::path& path) const;
  // Restores a trainer. With `requested`, architecture fields must match the
  // stored snapshot (ConfigError naming each differing key) and the other
  // fields are taken from `requested`.
  static Trainer restore(const Checkpoint& c, const TrainConfig* requested = nullptr);
  static Trainer load(const std::filesystem::path& path, const TrainConfig* requested = nullptr);

 private:
  TrainConfig cfg_;
  std::unique_ptr<Generator<float>> gen_;
  std::unique_ptr<Discriminator<float>> disc_;
  AdamW opt_g_, opt_d_;
  std::unique_ptr<QualityMetric> quality_;
  Rng rng_;
  int64_t step_ = 0;
  double last_grad_norm_d_ = 0.0;
};

// Normalized quality of each row's estimate against its clean row.
std::vector<float> quality_labels(const QualityMetric& metric, const Batch& batch,
                                  std::span<const float> estimates);

}  // namespace cmgan
