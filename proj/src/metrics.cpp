#include "cmgan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace cmgan {

namespace {

void require_equal_length(const char* op, size_t a, size_t b) {
  if (a != b) {
    throw std::invalid_argument(std::string(op) + ": length mismatch " + std::to_string(a) + " vs " +
                                std::to_string(b));
  }
}

double ratio_db(double signal, double noise) {
  if (noise == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(signal / noise);
}

}  // namespace

double ssnr(std::span<const double> clean, std::span<const double> estimate, const SsnrOptions& opt) {
  require_equal_length("ssnr", clean.size(), estimate.size());
  const size_t frame = static_cast<size_t>(opt.frame);
  double total = 0.0;
  int64_t used = 0;
  for (size_t start = 0; start + frame <= clean.size(); start += frame) {
    double signal = 0.0, noise = 0.0;
    for (size_t i = start; i < start + frame; ++i) {
      const double e = clean[i] - estimate[i];
      signal += clean[i] * clean[i];
      noise += e * e;
    }
    if (signal < opt.silence_energy) continue;
    total += std::clamp(ratio_db(signal, noise), opt.floor_db, opt.ceiling_db);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("ssnr: no frame with clean energy above the silence threshold");
  return total / static_cast<double>(used);
}

double snr(std::span<const double> clean, std::span<const double> estimate, double cap_db) {
  require_equal_length("snr", clean.size(), estimate.size());
  double signal = 0.0, noise = 0.0;
  for (size_t i = 0; i < clean.size(); ++i) {
    const double e = clean[i] - estimate[i];
    signal += clean[i] * clean[i];
    noise += e * e;
  }
  if (signal == 0.0) throw std::invalid_argument("snr: silent reference");
  return std::min(ratio_db(signal, noise), cap_db);
}

double normalize_quality(double raw, double raw_min, double raw_max) {
  if (!(raw_max > raw_min)) throw std::invalid_argument("normalize_quality: raw_max must exceed raw_min");
  return (std::clamp(raw, raw_min, raw_max) - raw_min) / (raw_max - raw_min);
}

QualityScore QualityMetric::score(const AudioClip& clean, const AudioClip& estimate) const {
  const double raw = raw_score(clean, estimate);
  return {name(), raw, normalize_quality(raw, raw_min(), raw_max())};
}

double SsnrQuality::raw_score(const AudioClip& clean, const AudioClip& estimate) const {
  return ssnr(clean.samples, estimate.samples, opt_);
}

SidecarQuality::SidecarQuality(std::unordered_map<std::string, double> scores, double raw_min, double raw_max,
                               std::string name)
    : scores_(std::move(scores)), min_(raw_min), max_(raw_max), name_(std::move(name)) {
  if (!(raw_max > raw_min)) throw std::invalid_argument("sidecar quality: raw_max must exceed raw_min");
}

SidecarQuality SidecarQuality::from_file(const std::string& path, double raw_min, double raw_max) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open sidecar score file " + path);
  std::unordered_map<std::string, double> scores;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected \"path<TAB>score\"");
    }
    size_t used = 0;
    const std::string value = line.substr(tab + 1);
    double v = 0.0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != value.size()) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed score '" + value + "'");
    }
    scores[line.substr(0, tab)] = v;
  }
  return SidecarQuality(std::move(scores), raw_min, raw_max);
}

double SidecarQuality::raw_score(const AudioClip&, const AudioClip& estimate) const {
  const auto it = scores_.find(estimate.source_id);
  if (it == scores_.end()) throw std::out_of_range("sidecar quality: no score for '" + estimate.source_id + "'");
  return it->second;
}

std::unique_ptr<QualityMetric> make_quality_metric(const std::string& spec) {
  if (spec == "ssnr") return std::make_unique<SsnrQuality>();
  const std::string prefix = "sidecar:";
  if (spec.rfind(prefix, 0) == 0) {
    return std::make_unique<SidecarQuality>(SidecarQuality::from_file(spec.substr(prefix.size())));
  }
  throw std::invalid_argument("unknown quality metric '" + spec + "' (ssnr, sidecar:<path>)");
}

MetricReport evaluate(const AudioClip& clean, const AudioClip& estimate,
                      const std::vector<const QualityMetric*>& plugins, double snr_cap_db) {
  require_equal_length("evaluate", clean.samples.size(), estimate.samples.size());
  MetricReport r;
  r["ssnr"] = ssnr(clean.samples, estimate.samples);
  r["snr"] = snr(clean.samples, estimate.samples, snr_cap_db);
  for (const auto* p : plugins) {
    const auto s = p->score(clean, estimate);
    r[s.metric + ".raw"] = s.raw;
    r[s.metric + ".normalized"] = s.normalized;
  }
  return r;
}

std::string report_json(const MetricReport& report) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : report) j[k] = v;
  return j.dump();
}

MetricReport aggregate(const std::vector<MetricReport>& reports) {
  MetricReport mean;
  if (reports.empty()) return mean;
  for (const auto& [k, v] : reports.front()) {
    double s = 0.0;
    for (const auto& r : reports) {
      const auto it = r.find(k);
      if (it == r.end()) throw std::invalid_argument("aggregate: report without key '" + k + "'");
      s += it->second;
    }
    mean[k] = s / static_cast<double>(reports.size());
  }
  return mean;
}

namespace {

std::vector<double> ranks(std::span<const double> x) {
  std::vector<size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  require_equal_length("spearman", a.size(), b.size());
  if (a.size() < 2) throw std::invalid_argument("spearman: need at least two samples");
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace cmgan
