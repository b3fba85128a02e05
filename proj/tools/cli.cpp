#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmgan/config.hpp"
#include "cmgan/data.hpp"
#include "cmgan/generator.hpp"
#include "cmgan/gradcheck_suite.hpp"
#include "cmgan/metrics.hpp"
#include "cmgan/trainer.hpp"

namespace cmgan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  TrainConfig build() const {
    TrainConfig cfg;
    if (!file.empty() && file != "default") {
      if (!fs::exists(file)) throw UsageError("config file not found: " + file);
      apply_config_file(cfg, file);
    }
    for (const auto& o : overrides) apply_override(cfg, o);
    cfg.validate();
    return cfg;
  }
};

void add_config_options(CLI::App& cmd, ConfigArgs& args) {
  cmd.add_option("-c,--config", args.file, "INI config file, or 'default' for built-in values");
  cmd.add_option("-o,--override", args.overrides, "key=value, applied after the config file")->take_all();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Sorted relative paths of the .wav files under dir.
std::vector<fs::path> wav_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".wav") out.push_back(fs::relative(e.path(), dir));
  }
  std::sort(out.begin(), out.end());
  return out;
}

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw std::runtime_error(what + " not found: " + p.string());
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  ConfigArgs config;
  std::string data, resume, out_dir;
  int synthetic = 0;
  double synthetic_seconds = 0.0;
  bool quiet = false;
};

int run_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig cfg = a.config.build();
  if (a.data.empty() == (a.synthetic == 0)) throw UsageError("train needs exactly one of --data or --synthetic");
  if (!a.out_dir.empty()) {
    if (cfg.checkpoint_dir.empty()) cfg.checkpoint_dir = a.out_dir;
    if (cfg.log_path.empty()) cfg.log_path = (fs::path(a.out_dir) / "train.ndjson").string();
  }
  std::vector<PairedExample> pairs;
  if (!a.data.empty()) {
    require_exists(a.data, "dataset");
    DatasetOptions opt;
    opt.mix_seed = cfg.seed;
    pairs = load_dataset(a.data, opt);
  } else {
    SynthOptions opt;
    opt.pairs = a.synthetic;
    opt.seconds = a.synthetic_seconds > 0.0 ? a.synthetic_seconds : cfg.slice_seconds;
    opt.seed = cfg.seed;
    pairs = synth_corpus(opt);
  }
  if (!a.resume.empty()) require_exists(a.resume, "checkpoint");
  auto make_trainer = [&] {
    if (a.resume.empty()) return Trainer(cfg);
    try {
      return Trainer::load(a.resume, &cfg);
    } catch (const ConfigError& e) {
      throw std::runtime_error(std::string(e.what()) + " (match these keys with --override or drop --resume)");
    }
  };
  Trainer t = make_trainer();
  out << "training on " << pairs.size() << " pairs, generator parameters " << t.generator().params().count()
      << (a.resume.empty() ? "" : ", resuming at step " + std::to_string(t.step())) << '\n';
  t.fit(pairs, [&](const StepReport& r) {
    if (a.quiet) return;
    out << "step " << r.step << " epoch " << r.epoch << " l_g " << fmt("%.5f", r.l_g) << " l_tf "
        << fmt("%.5f", r.l_tf) << " l_gan " << fmt("%.5f", r.l_gan) << " l_time " << fmt("%.5f", r.l_time)
        << " l_d " << fmt("%.5f", r.l_d) << '\n'
        << std::flush;
  });
  if (!cfg.checkpoint_dir.empty()) out << "checkpoint " << (fs::path(cfg.checkpoint_dir) / "last.cmg").string() << '\n';
  return kExitOk;
}

// ---- enhance -----------------------------------------------------------------

struct EnhanceArgs {
  std::string checkpoint, input, output;
};

AudioClip enhance_clip(const Generator<float>& g, const StftConfig& stft_cfg, const AudioClip& noisy) {
  const std::vector<float> x(noisy.samples.begin(), noisy.samples.end());
  const auto y = enhance<float>(g, x, stft_cfg);
  return {{y.begin(), y.end()}, noisy.sample_rate, noisy.source_id};
}

int run_enhance(const EnhanceArgs& a, std::ostream& out) {
  require_exists(a.checkpoint, "checkpoint");
  require_exists(a.input, "input");
  Trainer t = Trainer::load(a.checkpoint);
  const auto& g = t.generator();
  const auto& stft_cfg = t.config().stft;
  if (fs::is_directory(a.input)) {
    const auto files = wav_files(a.input);
    if (files.empty()) throw std::runtime_error("no .wav files under " + a.input);
    for (const auto& rel : files) {
      const fs::path dst = fs::path(a.output) / rel;
      fs::create_directories(dst.parent_path());
      save_audio(dst, enhance_clip(g, stft_cfg, load_audio(fs::path(a.input) / rel)));
    }
    out << "enhanced " << files.size() << " files into " << a.output << '\n';
  } else {
    const fs::path dst(a.output);
    if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
    save_audio(dst, enhance_clip(g, stft_cfg, load_audio(a.input)));
    out << "enhanced " << a.input << " -> " << a.output << '\n';
  }
  return kExitOk;
}

// ---- evaluate ----------------------------------------------------------------

struct EvaluateArgs {
  std::string clean, estimate, output;
  std::vector<std::string> metrics{"ssnr"};
};

int run_evaluate(const EvaluateArgs& a, std::ostream& out) {
  require_exists(a.clean, "clean input");
  require_exists(a.estimate, "estimate input");
  std::vector<std::unique_ptr<QualityMetric>> owned;
  std::vector<const QualityMetric*> plugins;
  for (const auto& m : a.metrics) {
    try {
      owned.push_back(make_quality_metric(m));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    plugins.push_back(owned.back().get());
  }
  std::vector<std::pair<fs::path, fs::path>> pairs;
  std::vector<std::string> ids;
  if (fs::is_directory(a.clean)) {
    if (!fs::is_directory(a.estimate)) throw UsageError("--clean is a directory, so --estimate must be one too");
    for (const auto& rel : wav_files(a.clean)) {
      const fs::path est = fs::path(a.estimate) / rel;
      require_exists(est, "estimate for " + rel.string());
      pairs.emplace_back(fs::path(a.clean) / rel, est);
      ids.push_back(rel.generic_string());
    }
    if (pairs.empty()) throw std::runtime_error("no .wav files under " + a.clean);
  } else {
    pairs.emplace_back(a.clean, a.estimate);
    ids.push_back(fs::path(a.estimate).filename().string());
  }
  json report = json::object();
  json per_pair = json::array();
  std::vector<MetricReport> all;
  for (size_t i = 0; i < pairs.size(); ++i) {
    const AudioClip clean = load_audio(pairs[i].first);
    AudioClip est = load_audio(pairs[i].second);
    est.source_id = ids[i];
    all.push_back(evaluate(clean, est, plugins));
    per_pair.push_back({{"id", ids[i]}, {"metrics", json::parse(report_json(all.back()))}});
  }
  report["pairs"] = per_pair;
  report["aggregate"] = json::parse(report_json(aggregate(all)));
  report["count"] = pairs.size();
  const std::string text = report.dump(2);
  if (a.output.empty()) {
    out << text << '\n';
  } else {
    std::ofstream f(a.output);
    if (!f) throw std::runtime_error("cannot write " + a.output);
    f << text << '\n';
    out << "report " << a.output << '\n';
  }
  return kExitOk;
}

// ---- gradcheck ---------------------------------------------------------------

struct GradcheckArgs {
  std::string precision = "f64";
  uint64_t seed = 1;
  double tolerance = 1e-4;
};

int run_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  if (a.precision != "f64") throw UsageError("gradcheck runs in f64 only (got --precision " + a.precision + ")");
  auto cases = primitive_grad_cases();
  for (auto& c : model_grad_cases()) cases.push_back(std::move(c));
  double worst = 0.0;
  std::string worst_name;
  for (const auto& c : cases) {
    const auto r = c.run(a.seed);
    char line[160];
    std::snprintf(line, sizeof line, "%-36s max_rel_err %.3e  checked %lld  nonsmooth %lld", c.name.c_str(),
                  r.max_relative_error, static_cast<long long>(r.checked_elements),
                  static_cast<long long>(r.nonsmooth_elements));
    out << line << '\n' << std::flush;
    if (r.max_relative_error >= worst) {
      worst = r.max_relative_error;
      worst_name = c.name;
    }
  }
  const bool ok = worst < a.tolerance;
  out << cases.size() << " cases, worst " << fmt("%.3e", worst) << " (" << worst_name << "), tolerance "
      << fmt("%.0e", a.tolerance) << ": " << (ok ? "pass" : "FAIL") << '\n';
  return ok ? kExitOk : kExitFailure;
}

// ---- params ------------------------------------------------------------------

int run_params(const ConfigArgs& a, bool as_json, std::ostream& out) {
  const TrainConfig cfg = a.build();
  const Generator<float> g(cfg.generator, cfg.seed);
  const Discriminator<float> d(cfg.discriminator, cfg.seed + 1);
  std::map<std::string, int64_t> modules;
  for (const auto& [name, t] : g.params().entries()) modules[name.substr(0, name.find('.'))] += t.numel();
  const int64_t total = g.params().count();
  if (as_json) {
    out << json{{"generator", modules}, {"generator_total", total}, {"discriminator_total", d.params().count()}}.dump()
        << '\n';
    return kExitOk;
  }
  for (const auto& [m, n] : modules) {
    char line[96];
    std::snprintf(line, sizeof line, "%-20s %10lld", m.c_str(), static_cast<long long>(n));
    out << line << '\n';
  }
  char line[96];
  std::snprintf(line, sizeof line, "%-20s %10lld", "generator total", static_cast<long long>(total));
  out << line << '\n';
  std::snprintf(line, sizeof line, "%-20s %10lld", "discriminator total", static_cast<long long>(d.params().count()));
  out << line << '\n';
  return kExitOk;
}

// ---- synth-data --------------------------------------------------------------

struct SynthArgs {
  std::string out_dir;
  int pairs = 4;
  double seconds = 1.0;
  uint64_t seed = 0;
};

int run_synth(const SynthArgs& a, std::ostream& out) {
  if (a.pairs < 1 || a.pairs > kMaxSynthPairs) {
    throw UsageError("--pairs must lie in [1, " + std::to_string(kMaxSynthPairs) + "]");
  }
  if (!(a.seconds > 0.0)) throw UsageError("--seconds must be positive");
  SynthOptions opt;
  opt.pairs = a.pairs;
  opt.seconds = a.seconds;
  opt.seed = a.seed;
  write_corpus(a.out_dir, synth_corpus(opt));
  out << "wrote " << a.pairs << " pairs to " << a.out_dir << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conformer-based metric GAN speech enhancement", "cmgan"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "cmgan 0.1.0");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train the generator and discriminator");
  add_config_options(*train_cmd, train.config);
  auto* data_opt = train_cmd->add_option("--data", train.data, "Dataset directory or manifest");
  auto* synth_opt = train_cmd->add_option("--synthetic", train.synthetic, "Train on N generated pairs")
                        ->check(CLI::Range(1, kMaxSynthPairs));
  data_opt->excludes(synth_opt);
  train_cmd->add_option("--synthetic-seconds", train.synthetic_seconds, "Length of generated clips")
      ->needs(synth_opt);
  train_cmd->add_option("--resume", train.resume, "Checkpoint to continue from");
  train_cmd->add_option("--out", train.out_dir, "Directory for checkpoints and the NDJSON log");
  train_cmd->add_flag("-q,--quiet", train.quiet, "Do not print per-step lines");

  EnhanceArgs enh;
  auto* enh_cmd = app.add_subcommand("enhance", "Enhance a WAV file or a directory of WAV files");
  enh_cmd->add_option("--checkpoint", enh.checkpoint, "Trained checkpoint")->required();
  enh_cmd->add_option("--input", enh.input, "Noisy WAV file or directory")->required();
  enh_cmd->add_option("--output", enh.output, "Output WAV file or directory")->required();

  EvaluateArgs ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "Score estimates against clean references");
  ev_cmd->add_option("--clean", ev.clean, "Clean WAV file or directory")->required();
  ev_cmd->add_option("--estimate", ev.estimate, "Estimated WAV file or directory")->required();
  ev_cmd->add_option("--metric", ev.metrics, "Quality plugin: ssnr or sidecar:<path>")->take_all();
  ev_cmd->add_option("--output", ev.output, "Write the JSON report here instead of stdout");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and layer");
  gc_cmd->add_option("--precision", gc.precision, "Floating-point precision (f64)");
  gc_cmd->add_option("--seed", gc.seed, "Seed for the random inputs");
  gc_cmd->add_option("--tolerance", gc.tolerance, "Maximum accepted relative error");

  ConfigArgs params;
  bool params_json = false;
  auto* params_cmd = app.add_subcommand("params", "Print per-module and total parameter counts");
  add_config_options(*params_cmd, params);
  params_cmd->add_flag("--json", params_json, "Print JSON");

  SynthArgs syn;
  auto* syn_cmd = app.add_subcommand("synth-data", "Write the seeded synthetic corpus");
  syn_cmd->add_option("--out", syn.out_dir, "Output directory (clean/ and noisy/)")->required();
  syn_cmd->add_option("--pairs", syn.pairs, "Number of pairs");
  syn_cmd->add_option("--seconds", syn.seconds, "Clip length");
  syn_cmd->add_option("--seed", syn.seed, "Corpus seed");

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    const auto subs = app.get_subcommands({});
    if (std::none_of(subs.begin(), subs.end(), [&](const CLI::App* c) { return c->get_name() == name; })) {
      err << "error: unknown command '" << name
          << "'; expected train, enhance, evaluate, gradcheck, params or synth-data\n";
      return kExitUsage;
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << " (run with --help for usage)\n";
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return run_train(train, out);
    if (enh_cmd->parsed()) return run_enhance(enh, out);
    if (ev_cmd->parsed()) return run_evaluate(ev, out);
    if (gc_cmd->parsed()) return run_gradcheck(gc, out);
    if (params_cmd->parsed()) return run_params(params, params_json, out);
    if (syn_cmd->parsed()) return run_synth(syn, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace cmgan::cli
