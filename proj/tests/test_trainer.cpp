#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "cmgan/trainer.hpp"

using namespace cmgan;
using Tensor = ag::Tensor<float>;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.generator.channels = 4;
  cfg.generator.blocks = 1;
  cfg.generator.heads = 2;
  cfg.generator.dilations = {1, 2};
  cfg.generator.ffn_expansion = 2;
  cfg.generator.depthwise_kernel = 3;
  cfg.discriminator.channels = {4, 4, 4, 4};
  cfg.discriminator.hidden = 8;
  cfg.batch_size = 2;
  cfg.slice_seconds = 0.125;
  cfg.epochs = 100;
  cfg.seed = 11;
  return cfg;
}

std::vector<PairedExample> tiny_corpus(int pairs = 4) {
  SynthOptions opt;
  opt.pairs = pairs;
  opt.seconds = 0.15;
  opt.seed = 5;
  return synth_corpus(opt);
}

Batch first_batch(const std::vector<PairedExample>& corpus, const TrainConfig& cfg) {
  std::vector<const PairedExample*> members{&corpus[0], &corpus[1]};
  BatchOptions opt;
  opt.slice_samples = static_cast<int64_t>(std::llround(cfg.slice_seconds * kSampleRate));
  Rng rng(3);
  return make_batch(std::span<const PairedExample* const>(members), opt, rng);
}

std::vector<std::vector<float>> snapshot(const ParameterSet<float>& ps) {
  std::vector<std::vector<float>> out;
  for (const auto& [name, t] : ps.entries()) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("cmgan_trainer_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("AdamW worked examples") {
  SUBCASE("zero gradient applies only the decoupled decay") {
    std::vector<float> p{1.0f}, g{0.0f}, m{0.0f}, v{0.0f};
    adamw_update(p, g, m, v, {0.1, 0.9, 0.999, 1e-8, 0.01}, 1);
    CHECK(p[0] == doctest::Approx(0.999).epsilon(1e-7));
    CHECK(m[0] == 0.0f);
    CHECK(v[0] == 0.0f);
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    std::vector<float> p{0.5f, -0.5f}, g{3.0f, -0.02f}, m(2, 0.0f), v(2, 0.0f);
    adamw_update(p, g, m, v, {0.01, 0.9, 0.999, 1e-8, 0.0}, 1);
    CHECK(p[0] == doctest::Approx(0.49).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(-0.49).epsilon(1e-6));
    CHECK(m[0] == doctest::Approx(0.3));
    CHECK(v[0] == doctest::Approx(0.009));
  }
  SUBCASE("zero learning rate leaves the parameter bitwise unchanged") {
    std::vector<float> p{0.123f}, g{7.0f}, m{0.0f}, v{0.0f};
    adamw_update(p, g, m, v, {0.0, 0.9, 0.999, 1e-8, 0.01}, 1);
    CHECK(p[0] == 0.123f);
  }
  SUBCASE("second step uses bias-corrected moments") {
    std::vector<float> p{0.0f}, g{1.0f}, m{0.0f}, v{0.0f};
    const AdamWConfig cfg{0.1, 0.9, 0.999, 0.0, 0.0};
    adamw_update(p, g, m, v, cfg, 1);
    g[0] = -1.0f;
    adamw_update(p, g, m, v, cfg, 2);
    const double m2 = 0.9 * 0.1 - 0.1, v2 = 0.999 * 0.001 + 0.001;
    const double expected = -0.1 - 0.1 * (m2 / (1 - 0.81)) / std::sqrt(v2 / (1 - 0.999 * 0.999));
    CHECK(p[0] == doctest::Approx(expected).epsilon(1e-6));
  }
  SUBCASE("size mismatch and bad step") {
    std::vector<float> p(2), g(3), m(2), v(2);
    CHECK_THROWS_AS(adamw_update(p, g, m, v, {}, 1), ag::ShapeError);
    g.resize(2);
    CHECK_THROWS_AS(adamw_update(p, g, m, v, {}, 0), std::invalid_argument);
  }
}

TEST_CASE("AdamW minimizes a quadratic") {
  ParameterSet<float> ps;
  Rng rng(1);
  Tensor w = ps.add_uniform("w", {3}, 1.0, rng);
  AdamW opt(ps, {0.05, 0.9, 0.999, 1e-8, 0.0});
  const std::vector<float> target{0.3f, -0.7f, 0.1f};
  for (int s = 0; s < 400; ++s) {
    ps.zero_grad();
    auto& g = w.mutable_grad();
    for (size_t i = 0; i < 3; ++i) g[i] = 2.0f * (w.values()[i] - target[i]);
    opt.step(ps);
  }
  for (size_t i = 0; i < 3; ++i) CHECK(w.values()[i] == doctest::Approx(target[i]).epsilon(1e-2));
  CHECK(opt.steps() == 400);
}

TEST_CASE("gradient clipping rescales to the max norm") {
  ParameterSet<float> ps;
  Rng rng(2);
  Tensor a = ps.add_uniform("a", {2}, 1.0, rng);
  Tensor b = ps.add_uniform("b", {1}, 1.0, rng);
  a.mutable_grad() = {3.0f, 0.0f};
  b.mutable_grad() = {4.0f};
  CHECK(clip_grad_norm(ps, 0.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == 3.0f);
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()[0] == doctest::Approx(0.6f));
  CHECK(b.grad()[0] == doctest::Approx(0.8f));
  CHECK(clip_grad_norm(ps, 10.0) == doctest::Approx(1.0));
}

TEST_CASE("step report is a sorted single-line JSON object") {
  StepReport r;
  r.step = 3;
  r.l_tf = 0.25;
  const std::string line = r.to_json();
  CHECK(line.find('\n') == std::string::npos);
  CHECK(line.find("\"d_clean\"") < line.find("\"l_tf\""));
  CHECK(line.find("\"step\":3") != std::string::npos);
}

TEST_CASE("checkpoint container round trip and corruption") {
  Checkpoint c;
  c.metadata_json = R"({"step":2})";
  c.tensors.push_back({"g/w", {2, 3}, {1, 2, 3, 4, 5, 6}});
  c.tensors.push_back({"g/b", {1}, {-0.5f}});
  const auto bytes = encode_checkpoint(c);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "CMG1");
  const Checkpoint back = decode_checkpoint(bytes);
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.tensors[0].name == "g/w");
  CHECK(back.tensors[0].shape == std::vector<int64_t>{2, 3});
  CHECK(back.tensors[1].values == std::vector<float>{-0.5f});
  CHECK(encode_checkpoint(back) == bytes);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), std::runtime_error);
  for (size_t cut : {size_t{3}, size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(decode_checkpoint(truncated), std::runtime_error);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), std::runtime_error);

  Checkpoint future = c;
  future.version = 99;
  CHECK_THROWS_WITH_AS(decode_checkpoint(encode_checkpoint(future)), doctest::Contains("version"),
                       std::runtime_error);
}

TEST_CASE("discriminator step only touches the discriminator") {
  const TrainConfig cfg = tiny_config();
  const auto corpus = tiny_corpus();
  const Batch batch = first_batch(corpus, cfg);
  Trainer t(cfg);
  const auto sb = spectral_batch(batch, cfg.stft);
  const auto g_before = snapshot(t.generator().params());
  const auto d_before = snapshot(t.discriminator().params());
  const Tensor labels = Tensor::constant({batch.batch, 1}, std::vector<float>{0.2f, 0.6f});
  Tensor est;
  {
    ag::NoGradGuard off;
    est = t.generator().forward(sb.noisy, {false, nullptr, false}).magnitude;
  }
  const double l_d = t.discriminator_step(sb.clean_mag, est, labels);
  CHECK(std::isfinite(l_d));
  CHECK(snapshot(t.generator().params()) == g_before);
  CHECK(snapshot(t.discriminator().params()) != d_before);
  for (const auto& [name, p] : t.generator().params().entries()) {
    for (float g : p.grad()) CHECK(g == 0.0f);
  }
}

TEST_CASE("training step: D update on the detached estimate, then G update") {
  TrainConfig cfg = tiny_config();
  cfg.generator.dropout = 0.0;
  const auto corpus = tiny_corpus();
  const Batch batch = first_batch(corpus, cfg);

  Trainer full(cfg);
  const StepReport rep = full.train_step(batch);
  CHECK(rep.step == 1);
  CHECK(full.step() == 1);
  CHECK(full.generator_optimizer().steps() == 1);
  CHECK(full.discriminator_optimizer().steps() == 1);
  CHECK(rep.l_gan > 0.0);
  CHECK(rep.l_d > 0.0);
  CHECK(rep.l_g == doctest::Approx(rep.l_tf + rep.l_gan + rep.l_time).epsilon(1e-5));
  CHECK(rep.l_tf == doctest::Approx(0.7 * rep.l_mag + 0.3 * rep.l_ri).epsilon(1e-5));

  // The same D update by hand: the G step must not move D any further.
  Trainer manual(cfg);
  const auto g_before = snapshot(manual.generator().params());
  const auto sb = spectral_batch(batch, cfg.stft);
  const auto out = manual.generator().forward(sb.noisy, {true, &manual.rng(), false});
  const auto [r, i] = decompress_tensor(out.real, out.imag, cfg.stft.compression);
  const Tensor wave = istft_tensor(r, i, cfg.stft, batch.length);
  const auto metric = make_quality_metric("ssnr");
  const auto q = quality_labels(*metric, batch, wave.values());
  const double l_d = manual.discriminator_step(sb.clean_mag, out.magnitude.detach(),
                                               Tensor::constant({batch.batch, 1}, q));
  CHECK(l_d == rep.l_d);
  CHECK(snapshot(manual.discriminator().params()) == snapshot(full.discriminator().params()));
  CHECK(snapshot(manual.generator().params()) == g_before);
  CHECK(snapshot(full.generator().params()) != g_before);
}

TEST_CASE("without the discriminator: gamma_gan 0 and D frozen") {
  TrainConfig cfg = tiny_config();
  cfg.loss.gamma_gan = 0.0;
  cfg.discriminator_updates = false;
  cfg.max_steps = 3;
  const auto corpus = tiny_corpus();
  Trainer t(cfg);
  const auto d_before = snapshot(t.discriminator().params());
  std::vector<StepReport> reps;
  t.fit(corpus, [&](const StepReport& r) { reps.push_back(r); });
  REQUIRE(reps.size() == 3);
  for (const auto& r : reps) {
    CHECK(r.l_gan == 0.0);
    CHECK(r.l_d == 0.0);
    CHECK(r.l_g == doctest::Approx(r.l_tf + r.l_time).epsilon(1e-5));
  }
  CHECK(snapshot(t.discriminator().params()) == d_before);
  CHECK(t.discriminator_optimizer().steps() == 0);
}

TEST_CASE("zero learning rates leave every parameter bitwise unchanged") {
  TrainConfig cfg = tiny_config();
  cfg.generator_lr = 0.0;
  cfg.discriminator_lr = 0.0;
  cfg.max_steps = 2;
  Trainer t(cfg);
  const auto g_before = snapshot(t.generator().params());
  const auto d_before = snapshot(t.discriminator().params());
  t.fit(tiny_corpus());
  CHECK(snapshot(t.generator().params()) == g_before);
  CHECK(snapshot(t.discriminator().params()) == d_before);
}

TEST_CASE("non-finite loss names the first non-finite tensor") {
  TrainConfig cfg = tiny_config();
  cfg.discriminator_updates = false;
  cfg.loss.gamma_gan = 0.0;
  Trainer t(cfg);
  Tensor w = t.generator().params().entries().front().second;
  w.mutable_values()[0] = std::numeric_limits<float>::quiet_NaN();
  const auto corpus = tiny_corpus();
  try {
    t.train_step(first_batch(corpus, cfg));
    FAIL("expected NumericError");
  } catch (const ag::NumericError& e) {
    const std::string m = e.what();
    CHECK(m.find("non-finite l_tf at step 1") != std::string::npos);
    CHECK(m.find("first non-finite tensor: ") != std::string::npos);
    CHECK(m.find("unknown") == std::string::npos);
  }
}

TEST_CASE("discriminator alone learns the labels of a fixed batch") {
  TrainConfig cfg = tiny_config();
  cfg.discriminator = DiscriminatorConfig{};
  const auto corpus = tiny_corpus();
  const Batch batch = first_batch(corpus, cfg);
  Trainer t(cfg);
  const auto sb = spectral_batch(batch, cfg.stft);
  Tensor est;
  {
    ag::NoGradGuard off;
    est = t.generator().forward(sb.noisy, {false, nullptr, false}).magnitude;
  }
  const Tensor labels = Tensor::constant({batch.batch, 1}, std::vector<float>{0.15f, 0.65f});
  const double first = t.discriminator_step(sb.clean_mag, est, labels);
  double last = first;
  for (int s = 1; s < 200; ++s) last = t.discriminator_step(sb.clean_mag, est, labels);
  CHECK(last < 0.2 * first);
}

TEST_CASE("fixed seed reproduces the loss trajectory bitwise") {
  TrainConfig cfg = tiny_config();
  cfg.max_steps = 4;
  const auto corpus = tiny_corpus();
  auto run = [&] {
    Trainer t(cfg);
    std::vector<std::string> lines;
    t.fit(corpus, [&](const StepReport& r) { lines.push_back(r.to_json()); });
    return std::make_pair(lines, snapshot(t.generator().params()));
  };
  const auto a = run(), b = run();
  CHECK(a.first.size() == 4);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("checkpoint resume matches an uninterrupted run") {
  const auto dir = scratch("resume");
  TrainConfig cfg = tiny_config();
  cfg.max_steps = 6;
  const auto corpus = tiny_corpus(5);  // 3 batches per epoch, so resume lands mid-epoch

  Trainer straight(cfg);
  straight.fit(corpus);

  TrainConfig first = cfg;
  first.max_steps = 3;
  first.checkpoint_dir = dir.string();
  Trainer part(first);
  part.fit(corpus);
  const auto path = dir / "last.cmg";
  REQUIRE(std::filesystem::exists(path));

  Trainer resumed = Trainer::load(path, &cfg);
  CHECK(resumed.step() == 3);
  resumed.fit(corpus);
  CHECK(resumed.step() == 6);
  CHECK(snapshot(resumed.generator().params()) == snapshot(straight.generator().params()));
  CHECK(snapshot(resumed.discriminator().params()) == snapshot(straight.discriminator().params()));
  CHECK(resumed.generator_optimizer().first_moments() == straight.generator_optimizer().first_moments());
  std::filesystem::remove_all(dir);
}

TEST_CASE("save, load, save is byte identical") {
  const auto dir = scratch("bytes");
  TrainConfig cfg = tiny_config();
  cfg.max_steps = 1;
  Trainer t(cfg);
  t.fit(tiny_corpus());
  t.save(dir / "a.cmg");
  Trainer::load(dir / "a.cmg").save(dir / "b.cmg");
  CHECK(read_bytes(dir / "a.cmg") == read_bytes(dir / "b.cmg"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("loading under a different architecture names the field") {
  const auto dir = scratch("mismatch");
  const TrainConfig cfg = tiny_config();
  Trainer(cfg).save(dir / "c.cmg");
  TrainConfig other = cfg;
  other.generator.channels = 8;
  other.generator.heads = 2;
  try {
    Trainer::load(dir / "c.cmg", &other);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("generator.channels: stored 4, requested 8") != std::string::npos);
  }
  TrainConfig tuned = cfg;
  tuned.generator_lr = 1e-5;
  tuned.epochs = 3;
  CHECK(Trainer::load(dir / "c.cmg", &tuned).config().generator_lr == 1e-5);
  std::filesystem::remove_all(dir);
}

TEST_CASE("fit writes NDJSON logs and periodic checkpoints") {
  const auto dir = scratch("logs");
  TrainConfig cfg = tiny_config();
  cfg.max_steps = 4;
  cfg.checkpoint_dir = (dir / "ckpt").string();
  cfg.checkpoint_every = 2;
  cfg.log_path = (dir / "log.ndjson").string();
  Trainer t(cfg);
  t.fit(tiny_corpus());
  std::ifstream in(cfg.log_path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    CHECK(line.front() == '{');
    CHECK(line.find("\"step\":" + std::to_string(lines)) != std::string::npos);
  }
  CHECK(lines == 4);
  CHECK(std::filesystem::exists(dir / "ckpt" / "step_2.cmg"));
  CHECK(std::filesystem::exists(dir / "ckpt" / "step_4.cmg"));
  CHECK(std::filesystem::exists(dir / "ckpt" / "last.cmg"));
  std::filesystem::remove_all(dir);
}
