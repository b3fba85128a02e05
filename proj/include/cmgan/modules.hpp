#pragma once

// Parameter storage and the network building blocks shared by the generator
// and the discriminator.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cmgan/autograd.hpp"
#include "cmgan/random.hpp"

namespace cmgan {

// Ordered, named collection of trainable tensors.
template <typename T>
class ParameterSet {
 public:
  using Entry = std::pair<std::string, ag::Tensor<T>>;

  ag::Tensor<T> add(const std::string& name, ag::Shape shape, std::vector<T> values);
  // U(-bound, bound) initialization.
  ag::Tensor<T> add_uniform(const std::string& name, ag::Shape shape, double bound, Rng& rng);
  ag::Tensor<T> add_constant(const std::string& name, ag::Shape shape, T value);

  const std::vector<Entry>& entries() const { return entries_; }
  // Throws std::out_of_range naming the missing parameter.
  ag::Tensor<T> find(const std::string& name) const;
  int64_t count() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // dropout masks; required when training
  // Skips instance normalization, which mixes every position of a map. Used
  // only to analyse receptive fields.
  bool bypass_instance_norm = false;
};

namespace nn {

template <typename T>
using Tensor = ag::Tensor<T>;

// Convolution on [B, C, H, W] with optional bias.
template <typename T>
struct Conv2d {
  Tensor<T> weight, bias;
  ag::Conv2dOptions options;

  Conv2d() = default;
  Conv2d(ParameterSet<T>& ps, const std::string& name, int64_t in, int64_t out, int64_t kh, int64_t kw,
         ag::Conv2dOptions opt, bool with_bias, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

// convolution -> instance normalization -> per-channel PReLU. The convolution
// carries no bias since the normalization removes it.
template <typename T>
struct ConvBlock {
  Conv2d<T> conv;
  Tensor<T> gamma, beta, slope;

  ConvBlock() = default;
  ConvBlock(ParameterSet<T>& ps, const std::string& name, int64_t in, int64_t out, int64_t kh, int64_t kw,
            ag::Conv2dOptions opt, double prelu_init, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, const ForwardContext& ctx) const;
};

// Dilated dense block: layer i sees the concatenation of the block input and
// all earlier layer outputs, with 3x3 kernels dilated along time only.
template <typename T>
struct DenseNet {
  std::vector<ConvBlock<T>> layers;

  DenseNet() = default;
  DenseNet(ParameterSet<T>& ps, const std::string& name, int64_t channels, const std::vector<int>& dilations,
           double prelu_init, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, const ForwardContext& ctx) const;
};

template <typename T>
struct Linear {
  Tensor<T> weight, bias;  // weight [in, out]

  Linear() = default;
  Linear(ParameterSet<T>& ps, const std::string& name, int64_t in, int64_t out, bool with_bias, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return ag::linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParameterSet<T>& ps, const std::string& name, int64_t channels);
  Tensor<T> operator()(const Tensor<T>& x) const { return ag::layer_norm(x, gamma, beta); }
};

struct ConformerDims {
  int64_t channels = 64;
  int64_t heads = 4;
  int64_t ffn_expansion = 4;
  int64_t depthwise_kernel = 31;
  double dropout = 0.1;
};

// Conformer sub-block on channels-last sequences [N, L, C]:
// half-step FFN, MHSA, convolution module, half-step FFN, layer norm. Every
// part is residual.
template <typename T>
struct ConformerSubBlock {
  ConformerDims dims;
  LayerNorm<T> ffn1_norm, ffn2_norm, attn_norm, conv_norm, out_norm;
  Linear<T> ffn1_in, ffn1_out, ffn2_in, ffn2_out;
  Linear<T> qkv, attn_out;
  Linear<T> pointwise_in, pointwise_out;
  Tensor<T> depthwise_weight, depthwise_bias;

  ConformerSubBlock() = default;
  ConformerSubBlock(ParameterSet<T>& ps, const std::string& name, const ConformerDims& dims, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, const ForwardContext& ctx) const;

  Tensor<T> feed_forward(const Linear<T>& in, const Linear<T>& out, const LayerNorm<T>& norm, const Tensor<T>& x,
                         const ForwardContext& ctx) const;
  Tensor<T> self_attention(const Tensor<T>& x, const ForwardContext& ctx) const;
  Tensor<T> conv_module(const Tensor<T>& x, const ForwardContext& ctx) const;
};

template <typename T>
Tensor<T> apply_dropout(const Tensor<T>& x, double p, const ForwardContext& ctx);

// Frequency pixel shuffle: [B, 2C, T, F] -> [B, C, T, 2F] with
// out[b, c, t, 2f + j] = in[b, j*C + c, t, f].
template <typename T>
Tensor<T> frequency_shuffle(const Tensor<T>& x);

}  // namespace nn
}  // namespace cmgan
