#include "cmgan/discriminator.hpp"

#include <cmath>
#include <stdexcept>

namespace cmgan {

using ag::Tensor;

void DiscriminatorConfig::validate() const {
  if (channels.empty()) throw std::invalid_argument("discriminator.channels must not be empty");
  for (int c : channels)
    if (c <= 0) throw std::invalid_argument("discriminator.channels must be positive");
  if (hidden <= 0) throw std::invalid_argument("discriminator.hidden must be positive");
  if (kernel <= 0 || stride <= 0) throw std::invalid_argument("discriminator kernel and stride must be positive");
}

namespace {

// Output length ceil(n / stride) for any input length, padding split with
// the extra sample at the end.
void ceil_padding(int64_t n, int64_t kernel, int64_t stride, int64_t& before, int64_t& after) {
  const int64_t out = (n + stride - 1) / stride;
  const int64_t total = std::max<int64_t>(0, (out - 1) * stride + kernel - n);
  before = total / 2;
  after = total - before;
}

}  // namespace

template <typename T>
Discriminator<T>::Discriminator(const DiscriminatorConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  int64_t in = 2;
  for (size_t i = 0; i < cfg_.channels.size(); ++i) {
    const int64_t out = cfg_.channels[i];
    const std::string name = "block" + std::to_string(i);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * cfg_.kernel * cfg_.kernel));
    Block b;
    b.weight = params_.add_uniform(name + ".conv.weight", {out, in, cfg_.kernel, cfg_.kernel}, bound, rng);
    b.gamma = params_.add_constant(name + ".norm.gamma", {out}, T(1));
    b.beta = params_.add_constant(name + ".norm.beta", {out}, T(0));
    b.slope = params_.add_constant(name + ".prelu", {out}, static_cast<T>(cfg_.prelu_init));
    blocks_.push_back(b);
    in = out;
  }
  hidden_ = nn::Linear<T>(params_, "head.hidden", in, cfg_.hidden, true, rng);
  hidden_slope_ = params_.add_constant("head.prelu", {cfg_.hidden}, static_cast<T>(cfg_.prelu_init));
  output_ = nn::Linear<T>(params_, "head.output", cfg_.hidden, 1, true, rng);
}

template <typename T>
Tensor<T> Discriminator<T>::score(const Tensor<T>& reference, const Tensor<T>& estimate) const {
  if (reference.rank() != 3 || reference.shape() != estimate.shape()) {
    throw ag::ShapeError("discriminator: reference " + ag::shape_str(reference.shape()) + " vs estimate " +
                         ag::shape_str(estimate.shape()));
  }
  const int64_t B = reference.dim(0), Tn = reference.dim(1), F = reference.dim(2);
  Tensor<T> x = ag::concat<T>({ag::reshape(reference, {B, 1, Tn, F}), ag::reshape(estimate, {B, 1, Tn, F})}, 1);
  for (const auto& b : blocks_) {
    ag::Conv2dOptions o;
    o.stride_h = o.stride_w = cfg_.stride;
    ceil_padding(x.dim(2), cfg_.kernel, cfg_.stride, o.pad_top, o.pad_bottom);
    ceil_padding(x.dim(3), cfg_.kernel, cfg_.stride, o.pad_left, o.pad_right);
    x = ag::conv2d(x, b.weight, Tensor<T>(), o);
    x = ag::prelu(ag::instance_norm(x, b.gamma, b.beta), b.slope, 1);
  }
  const int64_t C = x.dim(1);
  const Tensor<T> pooled = ag::mean_last(ag::reshape(x, {B, C, -1}));  // [B, C]
  const Tensor<T> h = ag::prelu(hidden_(pooled), hidden_slope_, 1);
  return ag::sigmoid(output_(h));
}

template class Discriminator<float>;
template class Discriminator<double>;

}  // namespace cmgan
