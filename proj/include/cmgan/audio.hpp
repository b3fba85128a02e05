#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cmgan {

inline constexpr int kSampleRate = 16000;

struct AudioClip {
  std::vector<double> samples;  // [-1, 1]
  int sample_rate = kSampleRate;
  std::string source_id;  // relative path when loaded from a dataset, may be empty

  int64_t size() const { return static_cast<int64_t>(samples.size()); }
};

}  // namespace cmgan
