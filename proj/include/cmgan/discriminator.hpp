#pragma once

// Metric discriminator: predicts a normalized quality score in (0, 1) from a
// (reference, estimate) pair of compressed magnitudes.

#include <cstdint>
#include <vector>

#include "cmgan/modules.hpp"

namespace cmgan {

struct DiscriminatorConfig {
  std::vector<int> channels{16, 32, 64, 128};
  int hidden = 64;
  int kernel = 4;
  int stride = 2;
  double prelu_init = 0.2;

  void validate() const;  // throws std::invalid_argument
};

template <typename T>
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& cfg, uint64_t seed);

  const DiscriminatorConfig& config() const { return cfg_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  // reference, estimate: [B, T, F] -> [B, 1]
  ag::Tensor<T> score(const ag::Tensor<T>& reference, const ag::Tensor<T>& estimate) const;

 private:
  struct Block {
    ag::Tensor<T> weight, gamma, beta, slope;
  };

  DiscriminatorConfig cfg_;
  ParameterSet<T> params_;
  std::vector<Block> blocks_;
  nn::Linear<T> hidden_, output_;
  ag::Tensor<T> hidden_slope_;
};

}  // namespace cmgan
