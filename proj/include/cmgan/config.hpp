#pragma once

// Training configuration and its dotted-key text form ("section.field").
// Precedence: built-in defaults < config file < explicit overrides.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cmgan/discriminator.hpp"
#include "cmgan/generator.hpp"
#include "cmgan/losses.hpp"
#include "cmgan/signal.hpp"

namespace cmgan {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 4;
  double slice_seconds = 2.0;
  double generator_lr = 5e-4;
  double discriminator_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  uint64_t seed = 0;
  double clip_grad_norm = 0.0;  // 0 disables clipping
  bool discriminator_updates = true;
  std::string quality_metric = "ssnr";  // "ssnr" or "sidecar:<path>"
  int64_t max_steps = 0;                // 0 = run every epoch
  std::string checkpoint_dir;           // empty disables checkpoints
  int64_t checkpoint_every = 0;         // steps; 0 = only at the end
  std::string log_path;                 // NDJSON step reports; empty disables

  LossConfig loss;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  StftConfig stft;

  void validate() const;  // throws ConfigError
};

// Sets one field from its text form. Throws ConfigError for an unknown key or
// a malformed value; the message names the key.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);

// Applies "key=value".
void apply_override(TrainConfig& cfg, const std::string& assignment);

// Every key with its current value, in registry order.
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& cfg);

// INI text: "[section]" headers prefix the following "field = value" lines;
// lines may also carry a full dotted key. '#' and ';' start comments.
void apply_config_text(TrainConfig& cfg, const std::string& text, const std::string& origin = "config");
void apply_config_file(TrainConfig& cfg, const std::filesystem::path& path);

// Canonical sorted JSON snapshot, and its inverse.
std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& json);

// Architecture keys ("generator.*", "discriminator.*", "stft.*") whose values
// differ, formatted as "key: stored X, requested Y".
std::vector<std::string> architecture_mismatches(const TrainConfig& stored, const TrainConfig& requested);

}  // namespace cmgan
