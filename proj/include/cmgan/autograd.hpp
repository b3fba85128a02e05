#pragma once

// Dense tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Every primitive below computes
// its forward value eagerly and, when any input requires a gradient, records
// the inputs and an adjoint rule on the result node. `backward` walks the
// recorded graph once in reverse topological order.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmgan/random.hpp"

namespace cmgan::ag {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct Node {
  std::string op;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<T> values);
  static Tensor parameter(Shape shape, std::vector<T> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value) { return full({1}, value); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  // Negative axes count from the end.
  int64_t dim(int64_t axis) const;
  int64_t numel() const { return static_cast<int64_t>(node_->value.size()); }

  std::span<const T> values() const { return node_->value; }
  std::vector<T>& mutable_values() { return node_->value; }
  // Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::vector<T>& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }
  T item() const;
  T at(std::initializer_list<int64_t> index) const;

  // New leaf holding a copy of the values, cut from the graph.
  Tensor detach() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds a result node. When grad mode is off or no parent requires a
// gradient, the parents and adjoint are dropped.
template <typename T>
Tensor<T> make_result(std::string op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> parents, std::function<void(Node<T>&)> backward);

template <typename T>
void backward(const Tensor<T>& scalar_root);

// Name of the first primitive (in evaluation order) whose value is NaN/Inf.
template <typename T>
std::optional<std::string> find_nonfinite(const Tensor<T>& root);

// ---- elementwise ---------------------------------------------------------
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> pow_scalar(const Tensor<T>& a, T p);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> swish(const Tensor<T>& a);
template <typename T> Tensor<T> cos(const Tensor<T>& a);
template <typename T> Tensor<T> sin(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a) { return mul(a, a); }

// slope has one entry per index of `axis`.
template <typename T> Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope, int64_t axis);
// Splits `axis` into halves (a, b) and returns a * sigmoid(b).
template <typename T> Tensor<T> glu(const Tensor<T>& x, int64_t axis);

// ---- linear algebra -----------------------------------------------------
// a: [..., M, K]; b: [K, N] (shared by every batch) or [..., K, N]; with
// transpose_b the last two axes of b are swapped ([..., N, K]).
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);
// x: [..., K] times weight [K, N] plus optional bias [N].
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

struct Conv2dOptions {
  int64_t stride_h = 1, stride_w = 1;
  int64_t dilation_h = 1, dilation_w = 1;
  int64_t pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;
};
// x: [B, Cin, H, W]; weight: [Cout, Cin, kh, kw]; bias: [Cout] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const Conv2dOptions& opt);
// Channels-last depthwise convolution. x: [N, L, C]; weight: [C, K] with K odd.
template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// ---- normalization ------------------------------------------------------
// Normalizes over the last axis; gamma/beta: [C].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));
// x: [B, C, ...]; statistics per (b, c) over the trailing axes; gamma/beta: [C].
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));
template <typename T> Tensor<T> softmax_last(const Tensor<T>& x);
// softmax(q k^T / sqrt(d)) v over the last two axes. q, k, v: [..., L, d].
template <typename T> Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v);

// ---- layout ---------------------------------------------------------------
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int64_t>& perm);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int64_t axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, int64_t axis, int64_t start, int64_t length);

// ---- reductions -----------------------------------------------------------
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
// Mean over the last axis, which is removed.
template <typename T> Tensor<T> mean_last(const Tensor<T>& x);

// ---- regularization -----------------------------------------------------
// Identity when !training or p == 0; inverted dropout otherwise.
template <typename T> Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng);

}  // namespace cmgan::ag
