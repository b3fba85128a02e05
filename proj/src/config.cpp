#include "cmgan/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

namespace cmgan {

using nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (epochs < 1) fail("train.epochs must be at least 1");
  if (batch_size < 1) fail("train.batch_size must be at least 1");
  if (!(slice_seconds > 0.0)) fail("train.slice_seconds must be positive");
  if (!(generator_lr >= 0.0)) fail("train.generator_lr must be non-negative");
  if (!(discriminator_lr >= 0.0)) fail("train.discriminator_lr must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("train.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("train.beta2 must lie in [0, 1)");
  if (!(epsilon > 0.0)) fail("train.epsilon must be positive");
  if (!(weight_decay >= 0.0)) fail("train.weight_decay must be non-negative");
  if (!(clip_grad_norm >= 0.0)) fail("train.clip_grad_norm must be non-negative");
  if (max_steps < 0) fail("train.max_steps must be non-negative");
  if (checkpoint_every < 0) fail("train.checkpoint_every must be non-negative");
  try {
    loss.validate();
    generator.validate();
    discriminator.validate();
    stft.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (stft.bins() != generator.freq_bins) {
    fail("generator.freq_bins (" + std::to_string(generator.freq_bins) + ") must equal stft.fft_size / 2 (" +
         std::to_string(stft.bins()) + ")");
  }
}

namespace {

struct Field {
  std::string key;
  std::function<json(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const json&)> set;
  std::function<void(TrainConfig&, const std::string&)> parse;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("invalid value '" + value + "' for " + key + " (expected " + expected + ")");
}

template <typename I>
I parse_integer(const std::string& key, const std::string& s) {
  I v{};
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size() || s.empty()) bad_value(key, s, "an integer");
  return v;
}

double parse_real(const std::string& key, const std::string& s) {
  std::istringstream in(s);
  in.imbue(std::locale::classic());
  double v = 0.0;
  in >> v;
  if (s.empty() || in.fail() || !in.eof() || !std::isfinite(v)) bad_value(key, s, "a finite number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad_value(key, s, "true or false");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& s) {
  std::vector<int> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    const auto a = item.find_first_not_of(" \t"), b = item.find_last_not_of(" \t");
    if (a == std::string::npos) bad_value(key, s, "a comma-separated integer list");
    out.push_back(parse_integer<int>(key, item.substr(a, b - a + 1)));
  }
  if (out.empty()) bad_value(key, s, "a comma-separated integer list");
  return out;
}

template <typename Access>
Field integer_field(std::string key, Access access) {
  using V = std::remove_reference_t<decltype(access(std::declval<TrainConfig&>()))>;
  return {key, [access](const TrainConfig& c) { return json(access(const_cast<TrainConfig&>(c))); },
          [access](TrainConfig& c, const json& j) { access(c) = j.get<V>(); },
          [access, key](TrainConfig& c, const std::string& s) { access(c) = parse_integer<V>(key, s); }};
}

template <typename Access>
Field real_field(std::string key, Access access) {
  return {key, [access](const TrainConfig& c) { return json(access(const_cast<TrainConfig&>(c))); },
          [access](TrainConfig& c, const json& j) { access(c) = j.get<double>(); },
          [access, key](TrainConfig& c, const std::string& s) { access(c) = parse_real(key, s); }};
}

template <typename Access>
Field bool_field(std::string key, Access access) {
  return {key, [access](const TrainConfig& c) { return json(access(const_cast<TrainConfig&>(c))); },
          [access](TrainConfig& c, const json& j) { access(c) = j.get<bool>(); },
          [access, key](TrainConfig& c, const std::string& s) { access(c) = parse_bool(key, s); }};
}

template <typename Access>
Field string_field(std::string key, Access access) {
  return {key, [access](const TrainConfig& c) { return json(access(const_cast<TrainConfig&>(c))); },
          [access](TrainConfig& c, const json& j) { access(c) = j.get<std::string>(); },
          [access](TrainConfig& c, const std::string& s) { access(c) = s; }};
}

template <typename Access>
Field list_field(std::string key, Access access) {
  return {key, [access](const TrainConfig& c) { return json(access(const_cast<TrainConfig&>(c))); },
          [access](TrainConfig& c, const json& j) { access(c) = j.get<std::vector<int>>(); },
          [access, key](TrainConfig& c, const std::string& s) { access(c) = parse_int_list(key, s); }};
}

template <typename Access, typename Parse>
Field enum_field(std::string key, Access access, Parse parse) {
  auto set_text = [access, parse, key](TrainConfig& c, const std::string& s) {
    try {
      access(c) = parse(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(key + ": " + e.what());
    }
  };
  return {key, [access](const TrainConfig& c) { return json(to_string(access(const_cast<TrainConfig&>(c)))); },
          [set_text](TrainConfig& c, const json& j) { set_text(c, j.get<std::string>()); }, set_text};
}

#define CMGAN_FIELD(kind, key, member) kind##_field(key, [](TrainConfig& c) -> decltype(auto) { return (c.member); })

const std::vector<Field>& registry() {
  static const std::vector<Field> fields = {
      CMGAN_FIELD(integer, "train.epochs", epochs),
      CMGAN_FIELD(integer, "train.batch_size", batch_size),
      CMGAN_FIELD(real, "train.slice_seconds", slice_seconds),
      CMGAN_FIELD(real, "train.generator_lr", generator_lr),
      CMGAN_FIELD(real, "train.discriminator_lr", discriminator_lr),
      CMGAN_FIELD(real, "train.beta1", beta1),
      CMGAN_FIELD(real, "train.beta2", beta2),
      CMGAN_FIELD(real, "train.epsilon", epsilon),
      CMGAN_FIELD(real, "train.weight_decay", weight_decay),
      CMGAN_FIELD(integer, "train.seed", seed),
      CMGAN_FIELD(real, "train.clip_grad_norm", clip_grad_norm),
      CMGAN_FIELD(bool, "train.discriminator_updates", discriminator_updates),
      CMGAN_FIELD(string, "train.quality_metric", quality_metric),
      CMGAN_FIELD(integer, "train.max_steps", max_steps),
      CMGAN_FIELD(string, "train.checkpoint_dir", checkpoint_dir),
      CMGAN_FIELD(integer, "train.checkpoint_every", checkpoint_every),
      CMGAN_FIELD(string, "train.log_path", log_path),
      CMGAN_FIELD(real, "loss.alpha", loss.alpha),
      CMGAN_FIELD(real, "loss.gamma_tf", loss.gamma_tf),
      CMGAN_FIELD(real, "loss.gamma_gan", loss.gamma_gan),
      CMGAN_FIELD(real, "loss.gamma_time", loss.gamma_time),
      CMGAN_FIELD(integer, "generator.channels", generator.channels),
      CMGAN_FIELD(integer, "generator.blocks", generator.blocks),
      CMGAN_FIELD(integer, "generator.heads", generator.heads),
      CMGAN_FIELD(list, "generator.dilations", generator.dilations),
      CMGAN_FIELD(integer, "generator.freq_bins", generator.freq_bins),
      enum_field("generator.order", [](TrainConfig& c) -> auto& { return c.generator.order; }, parse_conformer_order),
      enum_field("generator.decoder_mode", [](TrainConfig& c) -> auto& { return c.generator.decoder_mode; },
                 parse_decoder_mode),
      CMGAN_FIELD(integer, "generator.ffn_expansion", generator.ffn_expansion),
      CMGAN_FIELD(integer, "generator.depthwise_kernel", generator.depthwise_kernel),
      CMGAN_FIELD(real, "generator.dropout", generator.dropout),
      CMGAN_FIELD(real, "generator.prelu_init", generator.prelu_init),
      CMGAN_FIELD(list, "discriminator.channels", discriminator.channels),
      CMGAN_FIELD(integer, "discriminator.hidden", discriminator.hidden),
      CMGAN_FIELD(integer, "discriminator.kernel", discriminator.kernel),
      CMGAN_FIELD(integer, "discriminator.stride", discriminator.stride),
      CMGAN_FIELD(real, "discriminator.prelu_init", discriminator.prelu_init),
      CMGAN_FIELD(integer, "stft.window_length", stft.window_length),
      CMGAN_FIELD(integer, "stft.hop", stft.hop),
      CMGAN_FIELD(integer, "stft.fft_size", stft.fft_size),
      CMGAN_FIELD(bool, "stft.centered", stft.centered),
      CMGAN_FIELD(real, "stft.compression", stft.compression),
  };
  return fields;
}

#undef CMGAN_FIELD

const Field& find_field(const std::string& key) {
  for (const auto& f : registry()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string text_of(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_array()) {
    std::string s;
    for (const auto& e : j) s += (s.empty() ? "" : ",") + e.dump();
    return s;
  }
  return j.dump();
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

}  // namespace

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).parse(cfg, value);
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  set_config_value(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : registry()) out.emplace_back(f.key, text_of(f.get(cfg)));
  return out;
}

void apply_config_text(TrainConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line, section;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    line = trim(comment == std::string::npos ? line : line.substr(0, comment));
    if (line.empty()) continue;
    const std::string at = origin + ":" + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(at + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(at + "expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(at + e.what());
    }
  }
}

void apply_config_file(TrainConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

std::string config_to_json(const TrainConfig& cfg) {
  json j = json::object();
  for (const auto& f : registry()) j[f.key] = f.get(cfg);
  return j.dump();
}

TrainConfig config_from_json(const std::string& text) {
  const json j = json::parse(text);
  if (!j.is_object()) throw ConfigError("config snapshot is not a JSON object");
  TrainConfig cfg;
  for (const auto& [key, value] : j.items()) {
    try {
      find_field(key).set(cfg, value);
    } catch (const json::exception& e) {
      throw ConfigError("config snapshot field " + key + ": " + e.what());
    }
  }
  return cfg;
}

std::vector<std::string> architecture_mismatches(const TrainConfig& stored, const TrainConfig& requested) {
  std::vector<std::string> out;
  for (const auto& f : registry()) {
    if (f.key.rfind("generator.", 0) != 0 && f.key.rfind("discriminator.", 0) != 0 && f.key.rfind("stft.", 0) != 0) {
      continue;
    }
    if (f.key == "generator.dropout") continue;
    const json a = f.get(stored), b = f.get(requested);
    if (a != b) out.push_back(f.key + ": stored " + text_of(a) + ", requested " + text_of(b));
  }
  return out;
}

}  // namespace cmgan
