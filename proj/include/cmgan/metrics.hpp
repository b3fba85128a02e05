#pragma once

// Objective quality measures and the normalized quality labels used to train
// the metric discriminator.

#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmgan/audio.hpp"

namespace cmgan {

struct SsnrOptions {
  int frame = 512;  // 32 ms at 16 kHz, non-overlapping; a partial tail frame is dropped
  double floor_db = -10.0;
  double ceiling_db = 35.0;
  double silence_energy = 1e-10;  // frames with less clean energy are skipped
};

// Segmental SNR in dB. Throws std::invalid_argument on a length mismatch or
// when no frame qualifies.
double ssnr(std::span<const double> clean, std::span<const double> estimate, const SsnrOptions& opt = {});

// Whole-signal SNR in dB, at most cap_db (reached exactly for a perfect estimate).
double snr(std::span<const double> clean, std::span<const double> estimate, double cap_db = 100.0);

// (clamp(raw, lo, hi) - lo) / (hi - lo). Throws when hi <= lo.
double normalize_quality(double raw, double raw_min, double raw_max);

inline constexpr double kPesqMin = -0.5;
inline constexpr double kPesqMax = 4.5;

struct QualityScore {
  std::string metric;
  double raw = 0.0;
  double normalized = 0.0;
};

// A quality measure with fixed normalization bounds.
class QualityMetric {
 public:
  virtual ~QualityMetric() = default;
  virtual std::string name() const = 0;
  virtual double raw_min() const = 0;
  virtual double raw_max() const = 0;
  virtual double raw_score(const AudioClip& clean, const AudioClip& estimate) const = 0;

  QualityScore score(const AudioClip& clean, const AudioClip& estimate) const;
};

// Segmental SNR normalized over its clamp range.
class SsnrQuality : public QualityMetric {
 public:
  explicit SsnrQuality(SsnrOptions opt = {}) : opt_(opt) {}
  std::string name() const override { return "ssnr"; }
  double raw_min() const override { return opt_.floor_db; }
  double raw_max() const override { return opt_.ceiling_db; }
  double raw_score(const AudioClip& clean, const AudioClip& estimate) const override;

 private:
  SsnrOptions opt_;
};

// Precomputed scores looked up by the estimate's source id. The file holds
// one "relative/path.wav<TAB>raw_score" record per line.
class SidecarQuality : public QualityMetric {
 public:
  SidecarQuality(std::unordered_map<std::string, double> scores, double raw_min = kPesqMin,
                 double raw_max = kPesqMax, std::string name = "sidecar");
  static SidecarQuality from_file(const std::string& path, double raw_min = kPesqMin, double raw_max = kPesqMax);

  std::string name() const override { return name_; }
  double raw_min() const override { return min_; }
  double raw_max() const override { return max_; }
  // Throws std::out_of_range when the estimate's id has no record.
  double raw_score(const AudioClip& clean, const AudioClip& estimate) const override;

 private:
  std::unordered_map<std::string, double> scores_;
  double min_, max_;
  std::string name_;
};

// Builds a plugin by name: "ssnr", or "sidecar:<path>".
std::unique_ptr<QualityMetric> make_quality_metric(const std::string& spec);

using MetricReport = std::map<std::string, double>;

// Keys: "ssnr", "snr", "<plugin>.raw", "<plugin>.normalized".
MetricReport evaluate(const AudioClip& clean, const AudioClip& estimate,
                      const std::vector<const QualityMetric*>& plugins, double snr_cap_db = 100.0);

// Sorted-key JSON object.
std::string report_json(const MetricReport& report);

// Per-key mean over reports that all share the same keys.
MetricReport aggregate(const std::vector<MetricReport>& reports);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace cmgan
