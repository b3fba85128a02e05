#include "cmgan/modules.hpp"

#include <cmath>
#include <stdexcept>

namespace cmgan {

template <typename T>
ag::Tensor<T> ParameterSet<T>::add(const std::string& name, ag::Shape shape, std::vector<T> values) {
  for (const auto& e : entries_)
    if (e.first == name) throw std::invalid_argument("duplicate parameter name: " + name);
  auto t = ag::Tensor<T>::parameter(std::move(shape), std::move(values));
  entries_.emplace_back(name, t);
  return t;
}

template <typename T>
ag::Tensor<T> ParameterSet<T>::add_uniform(const std::string& name, ag::Shape shape, double bound, Rng& rng) {
  std::vector<T> v(static_cast<size_t>(ag::numel(shape)));
  for (auto& x : v) x = static_cast<T>(uniform(rng, -bound, bound));
  return add(name, std::move(shape), std::move(v));
}

template <typename T>
ag::Tensor<T> ParameterSet<T>::add_constant(const std::string& name, ag::Shape shape, T value) {
  std::vector<T> v(static_cast<size_t>(ag::numel(shape)), value);
  return add(name, std::move(shape), std::move(v));
}

template <typename T>
ag::Tensor<T> ParameterSet<T>::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return e.second;
  throw std::out_of_range("unknown parameter: " + name);
}

template <typename T>
int64_t ParameterSet<T>::count() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

namespace nn {

template <typename T>
Conv2d<T>::Conv2d(ParameterSet<T>& ps, const std::string& name, int64_t in, int64_t out, int64_t kh, int64_t kw,
                  ag::Conv2dOptions opt, bool with_bias, Rng& rng)
    : options(opt) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kh * kw));
  weight = ps.add_uniform(name + ".weight", {out, in, kh, kw}, bound, rng);
  if (with_bias) bias = ps.add_uniform(name + ".bias", {out}, bound, rng);
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  return ag::conv2d(x, weight, bias, options);
}

template <typename T>
ConvBlock<T>::ConvBlock(ParameterSet<T>& ps, const std::string& name, int64_t in, int64_t out, int64_t kh,
                        int64_t kw, ag::Conv2dOptions opt, double prelu_init, Rng& rng)
    : conv(ps, name + ".conv", in, out, kh, kw, opt, false, rng) {
  gamma = ps.add_constant(name + ".norm.gamma", {out}, T(1));
  beta = ps.add_constant(name + ".norm.beta", {out}, T(0));
  slope = ps.add_constant(name + ".prelu", {out}, static_cast<T>(prelu_init));
}

template <typename T>
Tensor<T> ConvBlock<T>::operator()(const Tensor<T>& x, const ForwardContext& ctx) const {
  Tensor<T> y = conv(x);
  if (!ctx.bypass_instance_norm) y = ag::instance_norm(y, gamma, beta);
  return ag::prelu(y, slope, 1);
}

template <typename T>
DenseNet<T>::DenseNet(ParameterSet<T>& ps, const std::string& name, int64_t channels,
                      const std::vector<int>& dilations, double prelu_init, Rng& rng) {
  for (size_t i = 0; i < dilations.size(); ++i) {
    ag::Conv2dOptions opt;
    opt.dilation_h = dilations[i];
    opt.pad_top = opt.pad_bottom = dilations[i];
    opt.pad_left = opt.pad_right = 1;
    layers.emplace_back(ps, name + ".layer" + std::to_string(i), channels * static_cast<int64_t>(i + 1), channels,
                        3, 3, opt, prelu_init, rng);
  }
}

template <typename T>
Tensor<T> DenseNet<T>::operator()(const Tensor<T>& x, const ForwardContext& ctx) const {
  Tensor<T> skip = x;
  Tensor<T> out = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    out = layers[i](skip, ctx);
    if (i + 1 < layers.size()) skip = ag::concat<T>({out, skip}, 1);
  }
  return out;
}

template <typename T>
Linear<T>::Linear(ParameterSet<T>& ps, const std::string& name, int64_t in, int64_t out, bool with_bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = ps.add_uniform(name + ".weight", {in, out}, bound, rng);
  if (with_bias) bias = ps.add_uniform(name + ".bias", {out}, bound, rng);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParameterSet<T>& ps, const std::string& name, int64_t channels) {
  gamma = ps.add_constant(name + ".gamma", {channels}, T(1));
  beta = ps.add_constant(name + ".beta", {channels}, T(0));
}

template <typename T>
Tensor<T> apply_dropout(const Tensor<T>& x, double p, const ForwardContext& ctx) {
  if (!ctx.training || p == 0.0) return x;
  if (!ctx.rng) throw std::invalid_argument("dropout in training mode needs a random generator");
  return ag::dropout(x, p, true, *ctx.rng);
}

template <typename T>
ConformerSubBlock<T>::ConformerSubBlock(ParameterSet<T>& ps, const std::string& name, const ConformerDims& d,
                                        Rng& rng)
    : dims(d) {
  const int64_t C = d.channels, H = C * d.ffn_expansion;
  if (C % d.heads != 0) throw std::invalid_argument("attention heads must divide the channel count");
  if (d.depthwise_kernel % 2 == 0) throw std::invalid_argument("depthwise kernel must be odd");
  ffn1_norm = LayerNorm<T>(ps, name + ".ffn1.norm", C);
  ffn1_in = Linear<T>(ps, name + ".ffn1.in", C, H, true, rng);
  ffn1_out = Linear<T>(ps, name + ".ffn1.out", H, C, true, rng);
  attn_norm = LayerNorm<T>(ps, name + ".attn.norm", C);
  qkv = Linear<T>(ps, name + ".attn.qkv", C, 3 * C, false, rng);
  attn_out = Linear<T>(ps, name + ".attn.out", C, C, true, rng);
  conv_norm = LayerNorm<T>(ps, name + ".conv.norm", C);
  pointwise_in = Linear<T>(ps, name + ".conv.pointwise_in", C, 2 * C, true, rng);
  const double dw_bound = 1.0 / std::sqrt(static_cast<double>(d.depthwise_kernel));
  depthwise_weight = ps.add_uniform(name + ".conv.depthwise.weight", {C, d.depthwise_kernel}, dw_bound, rng);
  depthwise_bias = ps.add_uniform(name + ".conv.depthwise.bias", {C}, dw_bound, rng);
  pointwise_out = Linear<T>(ps, name + ".conv.pointwise_out", C, C, true, rng);
  ffn2_norm = LayerNorm<T>(ps, name + ".ffn2.norm", C);
  ffn2_in = Linear<T>(ps, name + ".ffn2.in", C, H, true, rng);
  ffn2_out = Linear<T>(ps, name + ".ffn2.out", H, C, true, rng);
  out_norm = LayerNorm<T>(ps, name + ".out_norm", C);
}

template <typename T>
Tensor<T> ConformerSubBlock<T>::feed_forward(const Linear<T>& in, const Linear<T>& out, const LayerNorm<T>& norm,
                                             const Tensor<T>& x, const ForwardContext& ctx) const {
  Tensor<T> h = ag::swish(in(norm(x)));
  h = apply_dropout(h, dims.dropout, ctx);
  return apply_dropout(out(h), dims.dropout, ctx);
}

template <typename T>
Tensor<T> ConformerSubBlock<T>::self_attention(const Tensor<T>& x, const ForwardContext& ctx) const {
  const int64_t N = x.dim(0), L = x.dim(1), C = x.dim(2), H = dims.heads, Dh = C / H;
  const Tensor<T> proj = qkv(attn_norm(x));
  auto heads = [&](int64_t part) {
    return ag::permute(ag::reshape(ag::slice(proj, 2, part * C, C), {N, L, H, Dh}), {0, 2, 1, 3});
  };
  const Tensor<T> o = ag::attention(heads(0), heads(1), heads(2));
  const Tensor<T> merged = ag::reshape(ag::permute(o, {0, 2, 1, 3}), {N, L, C});
  return apply_dropout(attn_out(merged), dims.dropout, ctx);
}

template <typename T>
Tensor<T> ConformerSubBlock<T>::conv_module(const Tensor<T>& x, const ForwardContext& ctx) const {
  Tensor<T> h = ag::glu(pointwise_in(conv_norm(x)), -1);
  h = ag::swish(ag::depthwise_conv1d(h, depthwise_weight, depthwise_bias));
  return apply_dropout(pointwise_out(h), dims.dropout, ctx);
}

template <typename T>
Tensor<T> ConformerSubBlock<T>::operator()(const Tensor<T>& x, const ForwardContext& ctx) const {
  Tensor<T> y = ag::add(x, ag::mul_scalar(feed_forward(ffn1_in, ffn1_out, ffn1_norm, x, ctx), T(0.5)));
  y = ag::add(y, self_attention(y, ctx));
  y = ag::add(y, conv_module(y, ctx));
  y = ag::add(y, ag::mul_scalar(feed_forward(ffn2_in, ffn2_out, ffn2_norm, y, ctx), T(0.5)));
  return out_norm(y);
}

template <typename T>
Tensor<T> frequency_shuffle(const Tensor<T>& x) {
  if (x.rank() != 4 || x.dim(1) % 2 != 0) {
    throw ag::ShapeError("frequency_shuffle: expected [B, 2C, T, F], got " + ag::shape_str(x.shape()));
  }
  const int64_t B = x.dim(0), C = x.dim(1) / 2, T_ = x.dim(2), F = x.dim(3);
  const Tensor<T> split = ag::reshape(x, {B, 2, C, T_, F});
  return ag::reshape(ag::permute(split, {0, 2, 3, 4, 1}), {B, C, T_, 2 * F});
}

#define CMGAN_INSTANTIATE_MODULES(T)                                                   \
  template class ParameterSet<T>;                                                      \
  template struct nn::Conv2d<T>;                                                       \
  template struct nn::ConvBlock<T>;                                                    \
  template struct nn::DenseNet<T>;                                                     \
  template struct nn::Linear<T>;                                                       \
  template struct nn::LayerNorm<T>;                                                    \
  template struct nn::ConformerSubBlock<T>;                                            \
  template nn::Tensor<T> nn::apply_dropout<T>(const nn::Tensor<T>&, double, const ForwardContext&); \
  template nn::Tensor<T> nn::frequency_shuffle<T>(const nn::Tensor<T>&);

}  // namespace nn

CMGAN_INSTANTIATE_MODULES(float)
CMGAN_INSTANTIATE_MODULES(double)

}  // namespace cmgan
