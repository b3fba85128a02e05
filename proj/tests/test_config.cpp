#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "cmgan/config.hpp"

using namespace cmgan;

TEST_CASE("defaults validate and match the reference setup") {
  const TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.epochs == 50);
  CHECK(cfg.batch_size == 4);
  CHECK(cfg.slice_seconds == 2.0);
  CHECK(cfg.beta1 == 0.9);
  CHECK(cfg.beta2 == 0.999);
  CHECK(cfg.epsilon == 1e-8);
  CHECK(cfg.clip_grad_norm == 0.0);
  CHECK(cfg.generator.channels == 64);
  CHECK(cfg.generator.blocks == 4);
  CHECK(cfg.stft.window_length == 400);
  CHECK(cfg.stft.hop == 100);
  CHECK(cfg.stft.fft_size == 400);
  CHECK(cfg.loss.alpha == 0.7);
  CHECK(cfg.loss.gamma_tf == 1.0);
  CHECK(cfg.loss.gamma_gan == 1.0);
  CHECK(cfg.loss.gamma_time == 1.0);
}

TEST_CASE("overrides set typed fields") {
  TrainConfig cfg;
  apply_override(cfg, "generator.decoder_mode=MagnitudeOnly");
  apply_override(cfg, "generator.order = FreqThenTime");
  apply_override(cfg, "loss.gamma_gan=0");
  apply_override(cfg, "train.discriminator_updates=false");
  apply_override(cfg, "generator.dilations=1,2,4");
  apply_override(cfg, "train.seed=42");
  apply_override(cfg, "train.generator_lr=2.5e-3");
  CHECK(cfg.generator.decoder_mode == DecoderMode::MagnitudeOnly);
  CHECK(cfg.generator.order == ConformerOrder::FreqThenTime);
  CHECK(cfg.loss.gamma_gan == 0.0);
  CHECK_FALSE(cfg.discriminator_updates);
  CHECK(cfg.generator.dilations == std::vector<int>{1, 2, 4});
  CHECK(cfg.seed == 42);
  CHECK(cfg.generator_lr == 2.5e-3);
}

TEST_CASE("unknown keys and malformed values are errors naming the key") {
  TrainConfig cfg;
  auto message = [&](const std::string& assignment) {
    try {
      apply_override(cfg, assignment);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("train.no_such_field=1").find("train.no_such_field") != std::string::npos);
  CHECK(message("train.epochs=ten").find("train.epochs") != std::string::npos);
  CHECK(message("train.epochs=3.5").find("train.epochs") != std::string::npos);
  CHECK(message("loss.alpha=nan").find("loss.alpha") != std::string::npos);
  CHECK(message("train.discriminator_updates=maybe").find("train.discriminator_updates") != std::string::npos);
  CHECK(message("generator.decoder_mode=Neither").find("generator.decoder_mode") != std::string::npos);
  CHECK_FALSE(message("missing_equals").empty());
  CHECK_FALSE(message("=1").empty());
}

TEST_CASE("INI text with sections, dotted keys and comments") {
  TrainConfig cfg;
  apply_config_text(cfg,
                    "# desk run\n"
                    "[train]\n"
                    "epochs = 3   ; short\n"
                    "batch_size=2\n"
                    "log_path = \"run.ndjson\"\n"
                    "\n"
                    "[generator]\n"
                    "channels = 16\n"
                    "loss.gamma_time = 0.5\n");
  CHECK(cfg.epochs == 3);
  CHECK(cfg.batch_size == 2);
  CHECK(cfg.log_path == "run.ndjson");
  CHECK(cfg.generator.channels == 16);
  CHECK(cfg.loss.gamma_time == 0.5);
}

TEST_CASE("INI errors carry origin and line") {
  TrainConfig cfg;
  try {
    apply_config_text(cfg, "[train]\nepochs = 2\nbogus = 1\n", "run.ini");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string m = e.what();
    CHECK(m.find("run.ini:3") != std::string::npos);
    CHECK(m.find("train.bogus") != std::string::npos);
  }
  CHECK_THROWS_AS(apply_config_text(cfg, "[train\n"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(cfg, "[train]\nepochs\n"), ConfigError);
}

TEST_CASE("file then overrides: later sources win") {
  const auto path = std::filesystem::temp_directory_path() / "cmgan_test_config.ini";
  {
    std::ofstream out(path);
    out << "[train]\nepochs = 7\nbatch_size = 3\n";
  }
  TrainConfig cfg;
  apply_config_file(cfg, path);
  apply_override(cfg, "train.epochs=9");
  CHECK(cfg.epochs == 9);
  CHECK(cfg.batch_size == 3);
  std::filesystem::remove(path);
  CHECK_THROWS(apply_config_file(cfg, path));
}

TEST_CASE("JSON snapshot round trips every field") {
  TrainConfig cfg;
  apply_override(cfg, "generator.order=Parallel");
  apply_override(cfg, "generator.dilations=1,3");
  apply_override(cfg, "train.weight_decay=0.0123456789012345");
  apply_override(cfg, "train.checkpoint_dir=ckpt dir");
  apply_override(cfg, "stft.centered=false");
  const std::string json = config_to_json(cfg);
  const TrainConfig back = config_from_json(json);
  CHECK(config_to_json(back) == json);
  CHECK(config_entries(back) == config_entries(cfg));
  CHECK(back.weight_decay == cfg.weight_decay);
  CHECK_THROWS_AS(config_from_json("{\"train.nope\": 1}"), ConfigError);
  CHECK_THROWS_AS(config_from_json("{\"train.epochs\": \"x\"}"), ConfigError);
  CHECK_THROWS_AS(config_from_json("[1, 2]"), ConfigError);
}

TEST_CASE("entries list every key once and re-apply to the same config") {
  TrainConfig cfg;
  apply_override(cfg, "train.batch_size=5");
  const auto entries = config_entries(cfg);
  TrainConfig copy;
  for (const auto& [k, v] : entries) set_config_value(copy, k, v);
  CHECK(config_to_json(copy) == config_to_json(cfg));
  for (size_t i = 0; i < entries.size(); ++i)
    for (size_t j = i + 1; j < entries.size(); ++j) CHECK(entries[i].first != entries[j].first);
}

TEST_CASE("validation rejects inconsistent settings") {
  TrainConfig cfg;
  cfg.stft.fft_size = 512;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.beta2 = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.loss.gamma_gan = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("architecture mismatches name each differing key") {
  TrainConfig a, b;
  CHECK(architecture_mismatches(a, b).empty());
  b.generator.channels = 32;
  b.stft.hop = 50;
  b.generator.dropout = 0.0;
  b.epochs = 1;
  const auto m = architecture_mismatches(a, b);
  REQUIRE(m.size() == 2);
  CHECK(m[0] == "generator.channels: stored 64, requested 32");
  CHECK(m[1] == "stft.hop: stored 100, requested 50");
}
