#include "cmgan/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <optional>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "cmgan/losses.hpp"
#include "cmgan/signal.hpp"

namespace cmgan {

using nlohmann::json;
using Tensor = ag::Tensor<float>;

// ---- AdamW -------------------------------------------------------------------

void adamw_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                  const AdamWConfig& cfg, int64_t step) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw ag::ShapeError("adamw_update: parameter has " + std::to_string(param.size()) + " elements, gradient " +
                         std::to_string(grad.size()) + ", moments " + std::to_string(m.size()) + "/" +
                         std::to_string(v.size()));
  }
  if (step < 1) throw std::invalid_argument("adamw_update: step is 1-based");
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = b1 * m[i] + (1.0 - b1) * g;
    const double vi = b2 * v[i] + (1.0 - b2) * g * g;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double theta = param[i];
    const double update = (mi / c1) / (std::sqrt(vi / c2) + cfg.eps) + cfg.weight_decay * theta;
    param[i] = static_cast<float>(theta - cfg.lr * update);
  }
}

AdamW::AdamW(const ParameterSet<float>& params, AdamWConfig cfg) : cfg_(cfg) {
  for (const auto& [name, t] : params.entries()) {
    m_.emplace_back(static_cast<size_t>(t.numel()), 0.0f);
    v_.emplace_back(static_cast<size_t>(t.numel()), 0.0f);
  }
}

void AdamW::step(ParameterSet<float>& params) {
  const auto& entries = params.entries();
  if (entries.size() != m_.size()) throw std::logic_error("AdamW: parameter set changed after construction");
  ++steps_;
  std::vector<float> zeros;
  for (size_t k = 0; k < entries.size(); ++k) {
    Tensor t = entries[k].second;
    std::span<const float> g = t.grad();
    if (g.empty()) {
      zeros.assign(static_cast<size_t>(t.numel()), 0.0f);
      g = zeros;
    }
    adamw_update(t.mutable_values(), g, m_[k], v_[k], cfg_, steps_);
  }
}

double clip_grad_norm(ParameterSet<float>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, t] : params.entries()) {
    for (float g : t.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto scale = static_cast<float>(max_norm / norm);
    for (const auto& [name, t] : params.entries()) {
      Tensor h = t;
      if (h.grad().empty()) continue;
      for (auto& g : h.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

std::string StepReport::to_json() const {
  json j = {{"step", step},      {"epoch", epoch},   {"l_tf", l_tf},     {"l_mag", l_mag},
            {"l_ri", l_ri},      {"l_gan", l_gan},   {"l_time", l_time}, {"l_g", l_g},
            {"l_d", l_d},        {"d_clean", d_clean}, {"d_est", d_est}, {"quality", quality},
            {"grad_norm_g", grad_norm_g}, {"grad_norm_d", grad_norm_d}};
  return j.dump();
}

// ---- checkpoint container ----------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'M', 'G', '1'};

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_bytes(std::vector<uint8_t>& out, const void* p, size_t n) {
  const auto* b = static_cast<const uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> b) : b_(b) {}

  void need(uint64_t n, const char* what) const {
    if (n > b_.size() - pos_) throw std::runtime_error(std::string("truncated checkpoint: ") + what);
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string text(uint64_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void copy(void* dst, uint64_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, b_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const uint8_t> b_;
  size_t pos_ = 0;
};

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

}  // namespace

std::vector<uint8_t> encode_checkpoint(const Checkpoint& c) {
  json meta = json::parse(c.metadata_json.empty() ? "{}" : c.metadata_json);
  meta["format_version"] = c.version;
  meta["tensor_count"] = c.tensors.size();
  const std::string m = meta.dump();
  std::vector<uint8_t> out;
  put_bytes(out, kMagic, 4);
  put_u64(out, m.size());
  put_bytes(out, m.data(), m.size());
  for (const auto& t : c.tensors) {
    if (static_cast<int64_t>(t.values.size()) != ag::numel(t.shape)) {
      throw ag::ShapeError("checkpoint tensor " + t.name + ": shape " + ag::shape_str(t.shape) + " holds " +
                           std::to_string(ag::numel(t.shape)) + " values, got " + std::to_string(t.values.size()));
    }
    put_u64(out, t.name.size());
    put_bytes(out, t.name.data(), t.name.size());
    put_u64(out, t.shape.size());
    for (int64_t d : t.shape) put_u64(out, static_cast<uint64_t>(d));
    put_bytes(out, t.values.data(), t.values.size() * sizeof(float));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const uint8_t> bytes) {
  Reader r(bytes);
  const std::string magic = r.text(4, "magic");
  if (magic != std::string(kMagic, 4)) throw std::runtime_error("not a checkpoint (bad magic bytes)");
  const uint64_t meta_len = r.u64("metadata length");
  Checkpoint c;
  c.metadata_json = r.text(meta_len, "metadata");
  json meta;
  try {
    meta = json::parse(c.metadata_json);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("corrupt checkpoint metadata: ") + e.what());
  }
  c.version = meta.value("format_version", -1);
  if (c.version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(c.version) + " (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = meta.value("tensor_count", uint64_t{0});
  for (uint64_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = r.text(r.u64("tensor name length"), "tensor name");
    const uint64_t rank = r.u64("tensor rank");
    if (rank > 8) throw std::runtime_error("corrupt checkpoint: tensor " + t.name + " has rank " + std::to_string(rank));
    uint64_t n = 1;
    for (uint64_t i = 0; i < rank; ++i) {
      const auto d = static_cast<int64_t>(r.u64("tensor dims"));
      if (d < 0) throw std::runtime_error("corrupt checkpoint: negative dimension in " + t.name);
      t.shape.push_back(d);
      n *= static_cast<uint64_t>(d);
    }
    r.need(n * sizeof(float), "tensor values");
    t.values.resize(n);
    r.copy(t.values.data(), n * sizeof(float), "tensor values");
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw std::runtime_error("corrupt checkpoint: trailing bytes after the last tensor");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto bytes = encode_checkpoint(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::vector<uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return decode_checkpoint(bytes);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

// ---- batches -----------------------------------------------------------------

SpectralBatch spectral_batch(const Batch& batch, const StftConfig& cfg) {
  std::vector<CompressedSpectrogram<float>> noisy, clean;
  std::vector<float> wave(batch.clean.begin(), batch.clean.end());
  for (int64_t b = 0; b < batch.batch; ++b) {
    const auto n = batch.noisy_row(b);
    const std::vector<float> nf(n.begin(), n.end());
    noisy.push_back(stft<float>(nf, cfg));
    clean.push_back(stft<float>(std::span<const float>(wave).subspan(static_cast<size_t>(b * batch.length),
                                                                     static_cast<size_t>(batch.length)),
                                cfg));
  }
  const auto c = SpectralInput<float>::from_spectrograms(clean);
  return {SpectralInput<float>::from_spectrograms(noisy), c.magnitude, c.real, c.imag,
          Tensor::constant({batch.batch, batch.length}, std::move(wave))};
}

std::vector<float> quality_labels(const QualityMetric& metric, const Batch& batch, std::span<const float> estimates) {
  if (estimates.size() != batch.clean.size()) throw ag::ShapeError("quality_labels: estimate size mismatch");
  std::vector<float> q;
  for (int64_t b = 0; b < batch.batch; ++b) {
    const auto keep = static_cast<size_t>(batch.valid_lengths[static_cast<size_t>(b)]);
    const auto c = batch.clean_row(b);
    const auto e = estimates.subspan(static_cast<size_t>(b * batch.length), keep);
    const AudioClip clean{{c.begin(), c.begin() + static_cast<std::ptrdiff_t>(keep)}, kSampleRate,
                          batch.source_ids[static_cast<size_t>(b)]};
    const AudioClip est{{e.begin(), e.end()}, kSampleRate, batch.source_ids[static_cast<size_t>(b)]};
    q.push_back(static_cast<float>(metric.score(clean, est).normalized));
  }
  return q;
}

// ---- trainer -----------------------------------------------------------------

namespace {

void require_finite(const Tensor& loss, const char* what, int64_t step) {
  if (std::isfinite(loss.item())) return;
  const auto first = ag::find_nonfinite(loss);
  throw ag::NumericError(std::string("non-finite ") + what + " at step " + std::to_string(step) +
                         "; first non-finite tensor: " + first.value_or("unknown"));
}

double mean_of(const Tensor& t) {
  double s = 0.0;
  for (float v : t.values()) s += v;
  return s / static_cast<double>(t.numel());
}

AdamWConfig adam_config(const TrainConfig& c, double lr) {
  return {lr, c.beta1, c.beta2, c.epsilon, c.weight_decay};
}

uint64_t epoch_seed(uint64_t seed, int64_t epoch) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ull * static_cast<uint64_t>(epoch + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  gen_ = std::make_unique<Generator<float>>(cfg_.generator, cfg_.seed);
  disc_ = std::make_unique<Discriminator<float>>(cfg_.discriminator, cfg_.seed + 1);
  opt_g_ = AdamW(gen_->params(), adam_config(cfg_, cfg_.generator_lr));
  opt_d_ = AdamW(disc_->params(), adam_config(cfg_, cfg_.discriminator_lr));
  quality_ = make_quality_metric(cfg_.quality_metric);
  rng_ = Rng(epoch_seed(cfg_.seed, -1));
}

double Trainer::discriminator_step(const Tensor& clean_mag, const Tensor& est_mag, const Tensor& labels) {
  disc_->params().zero_grad();
  const Tensor score_cc = disc_->score(clean_mag, clean_mag);
  const Tensor score_ce = disc_->score(clean_mag, est_mag);
  const Tensor l_d = loss_discriminator(score_cc, score_ce, labels);
  require_finite(l_d, "l_d", step_ + 1);
  ag::backward(l_d);
  last_grad_norm_d_ = clip_grad_norm(disc_->params(), cfg_.clip_grad_norm);
  opt_d_.step(disc_->params());
  return l_d.item();
}

StepReport Trainer::train_step(const Batch& batch) {
  StepReport rep;
  rep.step = step_ + 1;
  const auto sb = spectral_batch(batch, cfg_.stft);
  const ForwardContext train_ctx{true, &rng_, false};

  gen_->params().zero_grad();
  const GeneratorOutput<float> out = gen_->forward(sb.noisy, train_ctx);

  const bool use_time = cfg_.loss.gamma_time > 0.0;
  const bool use_disc = cfg_.discriminator_updates;
  Tensor est_wave;
  if (use_time || use_disc) {
    std::optional<ag::NoGradGuard> off;
    if (!use_time) off.emplace();
    const auto [r, i] = decompress_tensor(out.real, out.imag, cfg_.stft.compression);
    est_wave = istft_tensor(r, i, cfg_.stft, batch.length);
  }

  // (1) discriminator update on the detached estimate
  if (use_disc) {
    const auto q = quality_labels(*quality_, batch, est_wave.values());
    rep.quality = 0.0;
    for (float v : q) rep.quality += v;
    rep.quality /= static_cast<double>(q.size());
    const Tensor labels = Tensor::constant({batch.batch, 1}, q);
    const Tensor est_mag = out.magnitude.detach();
    {
      ag::NoGradGuard probe;
      rep.d_clean = mean_of(disc_->score(sb.clean_mag, sb.clean_mag));
      rep.d_est = mean_of(disc_->score(sb.clean_mag, est_mag));
    }
    rep.l_d = discriminator_step(sb.clean_mag, est_mag, labels);
    rep.grad_norm_d = last_grad_norm_d_;
  }

  // (2) generator update with fresh scores
  const Tensor l_mag = loss_magnitude(sb.clean_mag, out.magnitude);
  const Tensor l_ri = loss_complex(sb.clean_real, out.real, sb.clean_imag, out.imag);
  const Tensor l_tf = ag::add(ag::mul_scalar(l_mag, static_cast<float>(cfg_.loss.alpha)),
                              ag::mul_scalar(l_ri, static_cast<float>(1.0 - cfg_.loss.alpha)));
  Tensor l_gan, l_time;
  if (cfg_.loss.gamma_gan > 0.0) l_gan = loss_adversarial_g(disc_->score(sb.clean_mag, out.magnitude));
  if (use_time) l_time = loss_time(sb.clean_wave, est_wave);
  const Tensor l_g = loss_generator_total(l_tf, l_gan, l_time, cfg_.loss);
  require_finite(l_tf, "l_tf", rep.step);
  if (l_gan.defined()) require_finite(l_gan, "l_gan", rep.step);
  if (l_time.defined()) require_finite(l_time, "l_time", rep.step);
  require_finite(l_g, "l_g", rep.step);

  gen_->params().zero_grad();
  ag::backward(l_g);
  rep.grad_norm_g = clip_grad_norm(gen_->params(), cfg_.clip_grad_norm);
  opt_g_.step(gen_->params());
  disc_->params().zero_grad();

  rep.l_mag = l_mag.item();
  rep.l_ri = l_ri.item();
  rep.l_tf = l_tf.item();
  rep.l_gan = l_gan.defined() ? l_gan.item() : 0.0;
  rep.l_time = l_time.defined() ? l_time.item() : 0.0;
  rep.l_g = l_g.item();
  ++step_;
  return rep;
}

void Trainer::fit(const std::vector<PairedExample>& pairs, const std::function<void(const StepReport&)>& on_step) {
  if (pairs.empty()) throw std::invalid_argument("fit: empty training set");
  const auto n = pairs.size();
  const auto per_epoch = static_cast<int64_t>((n + static_cast<size_t>(cfg_.batch_size) - 1) /
                                              static_cast<size_t>(cfg_.batch_size));
  int64_t total = per_epoch * cfg_.epochs;
  if (cfg_.max_steps > 0) total = std::min(total, cfg_.max_steps);
  BatchOptions opt;
  opt.slice_samples = static_cast<int64_t>(std::llround(cfg_.slice_seconds * kSampleRate));
  std::ofstream log;
  if (!cfg_.log_path.empty()) {
    const std::filesystem::path lp(cfg_.log_path);
    if (lp.has_parent_path()) std::filesystem::create_directories(lp.parent_path());
    log.open(lp, std::ios::app);
    if (!log) throw std::runtime_error("cannot open log file " + cfg_.log_path);
  }
  const std::filesystem::path ckpt_dir(cfg_.checkpoint_dir);
  while (step_ < total) {
    const int64_t epoch = step_ / per_epoch;
    Rng order_rng(epoch_seed(cfg_.seed, epoch));
    const auto groups = epoch_batches(n, static_cast<size_t>(cfg_.batch_size), order_rng);
    const auto& group = groups[static_cast<size_t>(step_ % per_epoch)];
    std::vector<const PairedExample*> members;
    for (size_t i : group) members.push_back(&pairs[i]);
    const Batch batch = make_batch(std::span<const PairedExample* const>(members), opt, rng_);
    StepReport rep = train_step(batch);
    rep.epoch = epoch;
    if (log.is_open()) log << rep.to_json() << '\n' << std::flush;
    if (on_step) on_step(rep);
    if (!cfg_.checkpoint_dir.empty() && cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0) {
      save(ckpt_dir / ("step_" + std::to_string(step_) + ".cmg"));
    }
  }
  if (!cfg_.checkpoint_dir.empty()) save(ckpt_dir / "last.cmg");
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  std::ostringstream rng_state;
  rng_state << rng_;
  json meta = {{"step", step_},
               {"optimizer.generator.steps", opt_g_.steps()},
               {"optimizer.discriminator.steps", opt_d_.steps()},
               {"rng", rng_state.str()},
               {"config", json::parse(config_to_json(cfg_))}};
  c.metadata_json = meta.dump();
  auto add_set = [&](const std::string& prefix, const ParameterSet<float>& ps, const AdamW& opt) {
    const auto& e = ps.entries();
    for (size_t k = 0; k < e.size(); ++k) {
      const auto& [name, t] = e[k];
      c.tensors.push_back({prefix + "/" + name, t.shape(), {t.values().begin(), t.values().end()}});
      c.tensors.push_back({prefix + ".adam_m/" + name, t.shape(), opt.first_moments()[k]});
      c.tensors.push_back({prefix + ".adam_v/" + name, t.shape(), opt.second_moments()[k]});
    }
  };
  add_set("generator", gen_->params(), opt_g_);
  add_set("discriminator", disc_->params(), opt_d_);
  return c;
}

void Trainer::save(const std::filesystem::path& path) const { save_checkpoint(path, checkpoint()); }

Trainer Trainer::restore(const Checkpoint& c, const TrainConfig* requested) {
  const json meta = json::parse(c.metadata_json);
  if (!meta.contains("config")) throw std::runtime_error("checkpoint has no config snapshot");
  const TrainConfig stored = config_from_json(meta["config"].dump());
  TrainConfig cfg = stored;
  if (requested) {
    const auto diff = architecture_mismatches(stored, *requested);
    if (!diff.empty()) {
      std::string msg = "checkpoint does not match the configuration:";
      for (const auto& d : diff) msg += " " + d + ";";
      msg.pop_back();
      throw ConfigError(msg);
    }
    cfg = *requested;
  }
  Trainer t(cfg);
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& nt : c.tensors) by_name[nt.name] = &nt;
  auto fetch = [&](const std::string& name, const Tensor& like) -> const std::vector<float>& {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint is missing tensor " + name);
    if (it->second->shape != like.shape()) {
      throw std::runtime_error("checkpoint tensor " + name + " has shape " + ag::shape_str(it->second->shape) +
                               ", model expects " + ag::shape_str(like.shape()));
    }
    return it->second->values;
  };
  auto load_set = [&](const std::string& prefix, ParameterSet<float>& ps, AdamW& opt) {
    const auto& e = ps.entries();
    for (size_t k = 0; k < e.size(); ++k) {
      Tensor h = e[k].second;
      h.mutable_values() = fetch(prefix + "/" + e[k].first, h);
      opt.first_moments()[k] = fetch(prefix + ".adam_m/" + e[k].first, h);
      opt.second_moments()[k] = fetch(prefix + ".adam_v/" + e[k].first, h);
    }
  };
  load_set("generator", t.gen_->params(), t.opt_g_);
  load_set("discriminator", t.disc_->params(), t.opt_d_);
  t.step_ = meta.at("step").get<int64_t>();
  t.opt_g_.set_steps(meta.at("optimizer.generator.steps").get<int64_t>());
  t.opt_d_.set_steps(meta.at("optimizer.discriminator.steps").get<int64_t>());
  std::istringstream rng_state(meta.at("rng").get<std::string>());
  rng_state >> t.rng_;
  if (!rng_state) throw std::runtime_error("checkpoint has a corrupt RNG state");
  return t;
}

Trainer Trainer::load(const std::filesystem::path& path, const TrainConfig* requested) {
  return restore(load_checkpoint(path), requested);
}

}  // namespace cmgan
