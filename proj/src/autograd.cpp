#include "cmgan/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "cmgan/kernels.hpp"
#include "vec_math.hpp"

namespace cmgan::ag {

namespace {

thread_local bool g_grad_enabled = true;

int64_t normalize_axis(int64_t axis, int64_t rank, const char* op) {
  const int64_t a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return a;
}

template <typename T>
T* parent_grad(Node<T>& self, size_t i) {
  const auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  return p->ensure_grad().data();
}

template <typename T>
const std::vector<T>& parent_value(const Node<T>& self, size_t i) {
  return self.parents[i]->value;
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

// (outer, extent, inner) split of a shape around one axis.
struct AxisSplit {
  int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, int64_t axis) {
  AxisSplit s;
  for (int64_t i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
  s.extent = shape[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T>
inline T stable_sigmoid(T a) {
  return detail::vsigmoid(a);
}

template <typename T, typename Fwd, typename Grad>
Tensor<T> unary(const char* op, const Tensor<T>& a, Fwd fwd, Grad grad) {
  std::vector<T> out(a.values().size());
  const auto& av = a.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  return make_result<T>(op, a.shape(), std::move(out), {a}, [grad](Node<T>& self) {
    T* ga = parent_grad(self, 0);
    if (!ga) return;
    const auto& x = parent_value(self, 0);
    for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * grad(x[i], self.value[i]);
  });
}

}  // namespace

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// ---- Tensor ----------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::constant(Shape shape, std::vector<T> values) {
  for (auto d : shape)
    if (d <= 0) throw ShapeError("tensor: dimensions must be positive, got " + shape_str(shape));
  if (static_cast<int64_t>(values.size()) != ag::numel(shape)) {
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node<T>>();
  n->op = "leaf";
  n->shape = std::move(shape);
  n->value = std::move(values);
  return Tensor(std::move(n));
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  t.node_->ensure_grad();
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  const auto n = ag::numel(shape);
  return constant(std::move(shape), std::vector<T>(static_cast<size_t>(n), T(0)));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const auto n = ag::numel(shape);
  return constant(std::move(shape), std::vector<T>(static_cast<size_t>(n), value));
}

template <typename T>
int64_t Tensor<T>::dim(int64_t axis) const {
  return node_->shape[static_cast<size_t>(normalize_axis(axis, rank(), "dim"))];
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item: tensor has shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<int64_t> index) const {
  if (static_cast<int64_t>(index.size()) != rank()) throw ShapeError("at: wrong index rank");
  int64_t flat = 0;
  size_t i = 0;
  for (auto v : index) {
    const int64_t d = node_->shape[i++];
    if (v < 0 || v >= d) throw ShapeError("at: index out of range for " + shape_str(shape()));
    flat = flat * d + v;
  }
  return node_->value[static_cast<size_t>(flat)];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return constant(node_->shape, node_->value);
}

template <typename T>
Tensor<T> make_result(std::string op, Shape shape, std::vector<T> value,
                      std::vector<Tensor<T>> parents, std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->op = std::move(op);
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool req = false;
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p.defined() && p.requires_grad()) req = true;
  }
  if (req) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.defined() ? p.node_ptr() : nullptr);
    n->backward = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

namespace {

template <typename T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

template <typename T>
void backward(const Tensor<T>& scalar_root) {
  if (scalar_root.numel() != 1) {
    throw ShapeError("backward: root must hold one element, got shape " + shape_str(scalar_root.shape()));
  }
  if (!scalar_root.requires_grad()) return;
  auto order = topo_order(scalar_root.node());
  for (Node<T>* n : order) {
    if (n->backward) {
      n->grad.assign(n->value.size(), T(0));
    } else {
      n->ensure_grad();
    }
  }
  scalar_root.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

template <typename T>
std::optional<std::string> find_nonfinite(const Tensor<T>& root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) {
    for (T v : n->value) {
      if (!std::isfinite(v)) return n->op + " " + shape_str(n->shape);
    }
  }
  return std::nullopt;
}

// ---- elementwise -------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a.shape(), b.shape());
  std::vector<T> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (size_t p = 0; p < 2; ++p) {
      if (T* g = parent_grad(self, p))
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a.shape(), b.shape());
  std::vector<T> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (T* g = parent_grad(self, 1))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a.shape(), b.shape());
  std::vector<T> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = parent_value(self, 0);
    const auto& bv = parent_value(self, 1);
    if (T* g = parent_grad(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (T* g = parent_grad(self, 1))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return unary<T>("mul_scalar", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> pow_scalar(const Tensor<T>& a, T p) {
  return unary<T>(
      "pow_scalar", a, [p](T x) { return std::pow(x, p); },
      [p](T x, T) { return p * std::pow(x, p - T(1)); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary<T>(
      "abs", a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary<T>("sigmoid", a, [](T x) { return stable_sigmoid(x); },
                  [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> swish(const Tensor<T>& a) {
  return unary<T>(
      "swish", a, [](T x) { return x * stable_sigmoid(x); },
      [](T x, T) {
        const T s = stable_sigmoid(x);
        return s + x * s * (T(1) - s);
      });
}

template <typename T>
Tensor<T> cos(const Tensor<T>& a) {
  return unary<T>("cos", a, [](T x) { return std::cos(x); }, [](T x, T) { return -std::sin(x); });
}

template <typename T>
Tensor<T> sin(const Tensor<T>& a) {
  return unary<T>("sin", a, [](T x) { return std::sin(x); }, [](T x, T) { return std::cos(x); });
}

template <typename T>
Tensor<T> prelu(const Tensor<T>& x, const Tensor<T>& slope, int64_t axis) {
  const int64_t ax = normalize_axis(axis, x.rank(), "prelu");
  const AxisSplit s = split_at(x.shape(), ax);
  if (slope.numel() != s.extent) {
    throw ShapeError("prelu: slope shape " + shape_str(slope.shape()) + " does not match axis " +
                     std::to_string(ax) + " of " + shape_str(x.shape()));
  }
  const auto xv = x.values();
  const auto av = slope.values();
  std::vector<T> out(xv.size());
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t j = 0; j < s.extent; ++j) {
      const size_t base = static_cast<size_t>((o * s.extent + j) * s.inner);
      for (int64_t i = 0; i < s.inner; ++i) {
        const T v = xv[base + i];
        out[base + i] = v > T(0) ? v : av[j] * v;
      }
    }
  return make_result<T>("prelu", x.shape(), std::move(out), {x, slope}, [s](Node<T>& self) {
    const auto& xv = parent_value(self, 0);
    const auto& av = parent_value(self, 1);
    T* gx = parent_grad(self, 0);
    T* ga = parent_grad(self, 1);
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t j = 0; j < s.extent; ++j) {
        const size_t base = static_cast<size_t>((o * s.extent + j) * s.inner);
        T acc = 0;
        for (int64_t i = 0; i < s.inner; ++i) {
          const T g = self.grad[base + i];
          const T v = xv[base + i];
          if (v > T(0)) {
            if (gx) gx[base + i] += g;
          } else {
            if (gx) gx[base + i] += av[j] * g;
            acc += v * g;
          }
        }
        if (ga) ga[j] += acc;
      }
  });
}

template <typename T>
Tensor<T> glu(const Tensor<T>& x, int64_t axis) {
  const int64_t ax = normalize_axis(axis, x.rank(), "glu");
  const AxisSplit s = split_at(x.shape(), ax);
  if (s.extent % 2 != 0) throw ShapeError("glu: axis extent must be even, got shape " + shape_str(x.shape()));
  const int64_t half = s.extent / 2;
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(ax)] = half;
  const auto xv = x.values();
  std::vector<T> out(static_cast<size_t>(s.outer * half * s.inner));
  for (int64_t o = 0; o < s.outer; ++o)
    for (int64_t j = 0; j < half; ++j)
      for (int64_t i = 0; i < s.inner; ++i) {
        const T a = xv[static_cast<size_t>((o * s.extent + j) * s.inner + i)];
        const T b = xv[static_cast<size_t>((o * s.extent + j + half) * s.inner + i)];
        out[static_cast<size_t>((o * half + j) * s.inner + i)] = a * stable_sigmoid(b);
      }
  return make_result<T>("glu", std::move(out_shape), std::move(out), {x}, [s, half](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xv = parent_value(self, 0);
    for (int64_t o = 0; o < s.outer; ++o)
      for (int64_t j = 0; j < half; ++j)
        for (int64_t i = 0; i < s.inner; ++i) {
          const size_t ia = static_cast<size_t>((o * s.extent + j) * s.inner + i);
          const size_t ib = static_cast<size_t>((o * s.extent + j + half) * s.inner + i);
          const T g = self.grad[static_cast<size_t>((o * half + j) * s.inner + i)];
          const T sg = stable_sigmoid(xv[ib]);
          gx[ia] += g * sg;
          gx[ib] += g * xv[ia] * sg * (T(1) - sg);
        }
  });
}

// ---- linear algebra --------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const int64_t M = a.dim(-2), K = a.dim(-1);
  const int64_t bK = transpose_b ? b.dim(-1) : b.dim(-2);
  const int64_t N = transpose_b ? b.dim(-2) : b.dim(-1);
  const bool shared = b.rank() == 2;
  const int64_t batch = a.numel() / (M * K);
  bool ok = bK == K;
  if (!shared) {
    ok = ok && b.rank() == a.rank() &&
         std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin());
  }
  if (!ok) {
    throw ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()) +
                     (transpose_b ? " (transposed)" : ""));
  }
  Shape out_shape = a.shape();
  out_shape.back() = N;
  std::vector<T> out(static_cast<size_t>(batch * M * N));
  const auto av = a.values();
  const auto bv = b.values();
  if (shared) {
    kernels::gemm<T>(false, transpose_b, batch * M, N, K, av, bv, out, false);
  } else {
    for (int64_t i = 0; i < batch; ++i) {
      kernels::gemm<T>(false, transpose_b, M, N, K, av.subspan(i * M * K, M * K), bv.subspan(i * K * N, K * N),
                       std::span<T>(out).subspan(i * M * N, M * N), false);
    }
  }
  return make_result<T>("matmul", std::move(out_shape), std::move(out), {a, b},
                        [=](Node<T>& self) {
    const std::span<const T> g(self.grad);
    const std::span<const T> av(parent_value(self, 0));
    const std::span<const T> bv(parent_value(self, 1));
    T* ga = parent_grad(self, 0);
    T* gb = parent_grad(self, 1);
    const int64_t rows = shared ? batch * M : M;
    const int64_t reps = shared ? 1 : batch;
    for (int64_t r = 0; r < reps; ++r) {
      const auto gs = g.subspan(r * rows * N, rows * N);
      const auto as = av.subspan(r * rows * K, rows * K);
      const auto bs = shared ? bv : bv.subspan(r * K * N, K * N);
      if (ga) {
        std::span<T> gas(ga + r * rows * K, rows * K);
        kernels::gemm<T>(false, !transpose_b, rows, K, N, gs, bs, gas, true);
      }
      if (gb) {
        std::span<T> gbs(gb + (shared ? 0 : r * K * N), K * N);
        if (transpose_b) {
          kernels::gemm<T>(true, false, N, K, rows, gs, as, gbs, true);
        } else {
          kernels::gemm<T>(true, false, K, N, rows, as, gs, gbs, true);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.dim(-1) != weight.dim(0) || (bias.defined() && bias.numel() != weight.dim(1))) {
    throw ShapeError("linear: shape mismatch " + shape_str(x.shape()) + " x " + shape_str(weight.shape()) +
                     (bias.defined() ? " + " + shape_str(bias.shape()) : std::string()));
  }
  const int64_t K = weight.dim(0), N = weight.dim(1);
  const int64_t rows = x.numel() / K;
  Shape out_shape = x.shape();
  out_shape.back() = N;
  std::vector<T> out(static_cast<size_t>(rows * N));
  if (bias.defined()) {
    const auto bv = bias.values();
    for (int64_t r = 0; r < rows; ++r) std::copy(bv.begin(), bv.end(), out.begin() + r * N);
  }
  kernels::gemm<T>(false, false, rows, N, K, x.values(), weight.values(), out, bias.defined());
  return make_result<T>("linear", std::move(out_shape), std::move(out), {x, weight, bias},
                        [rows, K, N](Node<T>& self) {
    const std::span<const T> g(self.grad);
    if (T* gx = parent_grad(self, 0))
      kernels::gemm<T>(false, true, rows, K, N, g, parent_value(self, 1), std::span<T>(gx, rows * K), true);
    if (T* gw = parent_grad(self, 1))
      kernels::gemm<T>(true, false, K, N, rows, parent_value(self, 0), g, std::span<T>(gw, K * N), true);
    if (self.parents[2]) {
      if (T* gb = parent_grad(self, 2)) {
        std::vector<T> acc(static_cast<size_t>(N), T(0));
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < N; ++j) acc[j] += g[r * N + j];
        for (int64_t j = 0; j < N; ++j) gb[j] += acc[j];
      }
    }
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const Conv2dOptions& opt) {
  if (x.rank() != 4 || weight.rank() != 4 || x.dim(1) != weight.dim(1) ||
      (bias.defined() && bias.numel() != weight.dim(0))) {
    throw ShapeError("conv2d: shape mismatch " + shape_str(x.shape()) + " with weight " +
                     shape_str(weight.shape()));
  }
  kernels::Conv2dGeometry g;
  g.batch = x.dim(0);
  g.in_channels = x.dim(1);
  g.in_h = x.dim(2);
  g.in_w = x.dim(3);
  g.out_channels = weight.dim(0);
  g.kernel_h = weight.dim(2);
  g.kernel_w = weight.dim(3);
  g.stride_h = opt.stride_h;
  g.stride_w = opt.stride_w;
  g.dilation_h = opt.dilation_h;
  g.dilation_w = opt.dilation_w;
  g.pad_top = opt.pad_top;
  g.pad_bottom = opt.pad_bottom;
  g.pad_left = opt.pad_left;
  g.pad_right = opt.pad_right;
  if (g.out_h() <= 0 || g.out_w() <= 0) {
    throw ShapeError("conv2d: empty output for input " + shape_str(x.shape()) + " and weight " +
                     shape_str(weight.shape()));
  }
  std::vector<T> out(static_cast<size_t>(g.output_size()));
  kernels::conv2d_forward<T>(g, x.values(), weight.values(),
                             bias.defined() ? bias.values() : std::span<const T>(), out);
  return make_result<T>("conv2d", {g.batch, g.out_channels, g.out_h(), g.out_w()}, std::move(out),
                        {x, weight, bias}, [g](Node<T>& self) {
    const std::span<const T> go(self.grad);
    if (T* gx = parent_grad(self, 0))
      kernels::conv2d_backward_input<T>(g, go, parent_value(self, 1), std::span<T>(gx, g.input_size()));
    T* gw = parent_grad(self, 1);
    T* gb = self.parents[2] ? parent_grad(self, 2) : nullptr;
    if (gw || gb) {
      std::vector<T> scratch;
      std::span<T> gws;
      if (gw) {
        gws = std::span<T>(gw, g.weight_size());
      } else {
        scratch.assign(static_cast<size_t>(g.weight_size()), T(0));
        gws = scratch;
      }
      kernels::conv2d_backward_weight<T>(g, go, parent_value(self, 0), gws,
                                         gb ? std::span<T>(gb, g.out_channels) : std::span<T>());
    }
  });
}

template <typename T>
Tensor<T> depthwise_conv1d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 3 || weight.rank() != 2 || weight.dim(0) != x.dim(2) || weight.dim(1) % 2 == 0 ||
      (bias.defined() && bias.numel() != x.dim(2))) {
    throw ShapeError("depthwise_conv1d: shape mismatch " + shape_str(x.shape()) + " with weight " +
                     shape_str(weight.shape()));
  }
  kernels::Depthwise1dGeometry g{x.dim(0), x.dim(1), x.dim(2), weight.dim(1)};
  std::vector<T> out(x.values().size());
  kernels::depthwise1d_forward<T>(g, x.values(), weight.values(),
                                  bias.defined() ? bias.values() : std::span<const T>(), out);
  return make_result<T>("depthwise_conv1d", x.shape(), std::move(out), {x, weight, bias},
                        [g](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    T* gw = parent_grad(self, 1);
    T* gb = self.parents[2] ? parent_grad(self, 2) : nullptr;
    const int64_t n = g.batch * g.length * g.channels;
    kernels::depthwise1d_backward<T>(g, self.grad, parent_value(self, 0), parent_value(self, 1),
                                     gx ? std::span<T>(gx, n) : std::span<T>(),
                                     gw ? std::span<T>(gw, g.channels * g.kernel) : std::span<T>(),
                                     gb ? std::span<T>(gb, g.channels) : std::span<T>());
  });
}

// ---- normalization -----------------------------------------------------------

namespace {

// Shared by layer and instance normalization: rows of `width` contiguous
// values are standardized; row r uses affine index channel_of(r) for layer
// norm along the row, or a per-row channel for instance norm.
template <typename T>
struct NormSaved {
  std::vector<T> xhat;
  std::vector<T> rstd;
};

template <typename T>
void standardize_rows(std::span<const T> x, int64_t rows, int64_t width, T eps, NormSaved<T>& saved) {
  saved.xhat.resize(x.size());
  saved.rstd.resize(static_cast<size_t>(rows));
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = x.data() + r * width;
    T mean = 0;
    for (int64_t i = 0; i < width; ++i) mean += row[i];
    mean /= static_cast<T>(width);
    T var = 0;
    for (int64_t i = 0; i < width; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<T>(width);
    const T rstd = T(1) / std::sqrt(var + eps);
    saved.rstd[static_cast<size_t>(r)] = rstd;
    T* xh = saved.xhat.data() + r * width;
    for (int64_t i = 0; i < width; ++i) xh[i] = (row[i] - mean) * rstd;
  }
}

// gx for one row given dxhat (already multiplied by gamma).
template <typename T>
void row_input_grad(const T* dxhat, const T* xhat, T rstd, int64_t width, T* gx) {
  T m1 = 0, m2 = 0;
  for (int64_t i = 0; i < width; ++i) {
    m1 += dxhat[i];
    m2 += dxhat[i] * xhat[i];
  }
  m1 /= static_cast<T>(width);
  m2 /= static_cast<T>(width);
  for (int64_t i = 0; i < width; ++i) gx[i] += rstd * (dxhat[i] - m1 - xhat[i] * m2);
}

}  // namespace

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const int64_t C = x.dim(-1);
  if (gamma.numel() != C || beta.numel() != C) {
    throw ShapeError("layer_norm: affine shape " + shape_str(gamma.shape()) + " does not match " +
                     shape_str(x.shape()));
  }
  const int64_t rows = x.numel() / C;
  auto saved = std::make_shared<NormSaved<T>>();
  standardize_rows<T>(x.values(), rows, C, eps, *saved);
  std::vector<T> out(saved->xhat.size());
  const auto gv = gamma.values();
  const auto bv = beta.values();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < C; ++c) out[r * C + c] = saved->xhat[r * C + c] * gv[c] + bv[c];
  return make_result<T>("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                        [saved, rows, C](Node<T>& self) {
    const auto& gv = parent_value(self, 1);
    T* gx = parent_grad(self, 0);
    T* gg = parent_grad(self, 1);
    T* gb = parent_grad(self, 2);
    if (gg || gb) {
      std::vector<T> ag(static_cast<size_t>(C), T(0)), ab(static_cast<size_t>(C), T(0));
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < C; ++c) {
          const T g = self.grad[r * C + c];
          ag[c] += g * saved->xhat[r * C + c];
          ab[c] += g;
        }
      for (int64_t c = 0; c < C; ++c) {
        if (gg) gg[c] += ag[c];
        if (gb) gb[c] += ab[c];
      }
    }
    if (gx) {
#pragma omp parallel for schedule(static)
      for (int64_t r = 0; r < rows; ++r) {
        std::vector<T> dxhat(static_cast<size_t>(C));
        for (int64_t c = 0; c < C; ++c) dxhat[c] = self.grad[r * C + c] * gv[c];
        row_input_grad(dxhat.data(), saved->xhat.data() + r * C, saved->rstd[r], C, gx + r * C);
      }
    }
  });
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() < 3) throw ShapeError("instance_norm: need rank >= 3, got " + shape_str(x.shape()));
  const int64_t B = x.dim(0), C = x.dim(1);
  const int64_t width = x.numel() / (B * C);
  if (gamma.numel() != C || beta.numel() != C) {
    throw ShapeError("instance_norm: affine shape " + shape_str(gamma.shape()) + " does not match " +
                     shape_str(x.shape()));
  }
  auto saved = std::make_shared<NormSaved<T>>();
  standardize_rows<T>(x.values(), B * C, width, eps, *saved);
  std::vector<T> out(saved->xhat.size());
  const auto gv = gamma.values();
  const auto bv = beta.values();
  for (int64_t r = 0; r < B * C; ++r) {
    const int64_t c = r % C;
    for (int64_t i = 0; i < width; ++i) out[r * width + i] = saved->xhat[r * width + i] * gv[c] + bv[c];
  }
  return make_result<T>("instance_norm", x.shape(), std::move(out), {x, gamma, beta},
                        [saved, B, C, width](Node<T>& self) {
    const auto& gv = parent_value(self, 1);
    T* gx = parent_grad(self, 0);
    T* gg = parent_grad(self, 1);
    T* gb = parent_grad(self, 2);
    for (int64_t r = 0; r < B * C; ++r) {
      const int64_t c = r % C;
      const T* g = self.grad.data() + r * width;
      const T* xh = saved->xhat.data() + r * width;
      if (gg || gb) {
        T sg = 0, sb = 0;
        for (int64_t i = 0; i < width; ++i) {
          sg += g[i] * xh[i];
          sb += g[i];
        }
        if (gg) gg[c] += sg;
        if (gb) gb[c] += sb;
      }
    }
    if (gx) {
#pragma omp parallel for schedule(static)
      for (int64_t r = 0; r < B * C; ++r) {
        const int64_t c = r % C;
        std::vector<T> dxhat(static_cast<size_t>(width));
        for (int64_t i = 0; i < width; ++i) dxhat[i] = self.grad[r * width + i] * gv[c];
        row_input_grad(dxhat.data(), saved->xhat.data() + r * width, saved->rstd[r], width, gx + r * width);
      }
    }
  });
}

template <typename T>
Tensor<T> softmax_last(const Tensor<T>& x) {
  const int64_t C = x.dim(-1);
  const int64_t rows = x.numel() / C;
  const auto xv = x.values();
  std::vector<T> out(xv.size());
#pragma omp parallel for schedule(static)
  for (int64_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * C;
    T* o = out.data() + r * C;
    T mx = row[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    T s = 0;
    for (int64_t c = 0; c < C; ++c) {
      o[c] = std::exp(row[c] - mx);
      s += o[c];
    }
    for (int64_t c = 0; c < C; ++c) o[c] /= s;
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [rows, C](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * C;
      const T* g = self.grad.data() + r * C;
      T dot = 0;
      for (int64_t c = 0; c < C; ++c) dot += g[c] * y[c];
      for (int64_t c = 0; c < C; ++c) gx[r * C + c] += y[c] * (g[c] - dot);
    }
  });
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  if (q.rank() < 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("attention: shape mismatch " + shape_str(q.shape()) + " / " + shape_str(k.shape()) +
                     " / " + shape_str(v.shape()));
  }
  const int64_t L = q.dim(-2), D = q.dim(-1);
  const int64_t slices = q.numel() / (L * D);
  const T scale = T(1) / std::sqrt(static_cast<T>(D));
  std::vector<T> out(q.values().size());
  auto lse = std::make_shared<std::vector<T>>(static_cast<size_t>(slices * L));
  kernels::attention_forward<T>(slices, L, D, scale, q.values(), k.values(), v.values(), out, *lse);
  return make_result<T>("attention", q.shape(), std::move(out), {q, k, v},
                        [slices, L, D, scale, lse](Node<T>& self) {
    const int64_t n = slices * L * D;
    T* gq = parent_grad(self, 0);
    T* gk = parent_grad(self, 1);
    T* gv = parent_grad(self, 2);
    auto span_of = [n](T* p) { return p ? std::span<T>(p, n) : std::span<T>(); };
    kernels::attention_backward<T>(slices, L, D, scale, parent_value(self, 0), parent_value(self, 1),
                                   parent_value(self, 2), self.value, *lse, self.grad, span_of(gq),
                                   span_of(gk), span_of(gv));
  });
}

// ---- layout ------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  int64_t known = 1, infer = -1;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one inferred dimension");
      infer = static_cast<int64_t>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0 && x.numel() % known == 0) shape[static_cast<size_t>(infer)] = x.numel() / known;
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int64_t>& perm) {
  const int64_t rank = x.rank();
  if (static_cast<int64_t>(perm.size()) != rank) throw ShapeError("permute: perm rank mismatch for " + shape_str(x.shape()));
  std::vector<bool> seen(static_cast<size_t>(rank), false);
  for (auto p : perm) {
    if (p < 0 || p >= rank || seen[static_cast<size_t>(p)]) throw ShapeError("permute: invalid permutation");
    seen[static_cast<size_t>(p)] = true;
  }
  const Shape& in = x.shape();
  std::vector<int64_t> in_stride(static_cast<size_t>(rank), 1);
  for (int64_t i = rank - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * in[i + 1];
  Shape out_shape(static_cast<size_t>(rank));
  std::vector<int64_t> stride(static_cast<size_t>(rank));
  for (int64_t i = 0; i < rank; ++i) {
    out_shape[i] = in[perm[i]];
    stride[i] = in_stride[perm[i]];
  }
  const int64_t n = x.numel();
  auto src = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(n));
  std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
  int64_t offset = 0;
  for (int64_t i = 0; i < n; ++i) {
    (*src)[i] = offset;
    for (int64_t d = rank - 1; d >= 0; --d) {
      ++idx[d];
      offset += stride[d];
      if (idx[d] < out_shape[d]) break;
      offset -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  const auto xv = x.values();
  std::vector<T> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = xv[(*src)[i]];
  return make_result<T>("permute", std::move(out_shape), std::move(out), {x}, [src](Node<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) g[(*src)[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int64_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const int64_t ax = normalize_axis(axis, xs[0].rank(), "concat");
  Shape out_shape = xs[0].shape();
  int64_t total = 0;
  std::vector<int64_t> extents;
  for (const auto& t : xs) {
    Shape a = t.shape(), b = xs[0].shape();
    if (a.size() != b.size()) throw ShapeError("concat: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    a[static_cast<size_t>(ax)] = b[static_cast<size_t>(ax)] = 0;
    if (a != b) throw ShapeError("concat: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(xs[0].shape()));
    extents.push_back(t.dim(ax));
    total += t.dim(ax);
  }
  out_shape[static_cast<size_t>(ax)] = total;
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<T> out(static_cast<size_t>(numel(out_shape)));
  int64_t start = 0;
  for (size_t k = 0; k < xs.size(); ++k) {
    const auto v = xs[k].values();
    const int64_t block = extents[k] * s.inner;
    for (int64_t o = 0; o < s.outer; ++o)
      std::copy(v.begin() + o * block, v.begin() + (o + 1) * block, out.begin() + (o * total + start) * s.inner);
    start += extents[k];
  }
  return make_result<T>("concat", std::move(out_shape), std::move(out), xs, [s, extents, total](Node<T>& self) {
    int64_t start = 0;
    for (size_t k = 0; k < extents.size(); ++k) {
      if (T* g = parent_grad(self, k)) {
        const int64_t block = extents[k] * s.inner;
        for (int64_t o = 0; o < s.outer; ++o) {
          const T* src = self.grad.data() + (o * total + start) * s.inner;
          for (int64_t i = 0; i < block; ++i) g[o * block + i] += src[i];
        }
      }
      start += extents[k];
    }
  });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int64_t axis, int64_t start, int64_t length) {
  const int64_t ax = normalize_axis(axis, x.rank(), "slice");
  const AxisSplit s = split_at(x.shape(), ax);
  if (start < 0 || length <= 0 || start + length > s.extent) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") outside axis of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(ax)] = length;
  const auto xv = x.values();
  std::vector<T> out(static_cast<size_t>(s.outer * length * s.inner));
  for (int64_t o = 0; o < s.outer; ++o)
    std::copy(xv.begin() + (o * s.extent + start) * s.inner, xv.begin() + (o * s.extent + start + length) * s.inner,
              out.begin() + o * length * s.inner);
  return make_result<T>("slice", std::move(out_shape), std::move(out), {x}, [s, start, length](Node<T>& self) {
    T* g = parent_grad(self, 0);
    if (!g) return;
    const int64_t block = length * s.inner;
    for (int64_t o = 0; o < s.outer; ++o) {
      T* dst = g + (o * s.extent + start) * s.inner;
      const T* src = self.grad.data() + o * block;
      for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  });
}

// ---- reductions --------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.values()) s += v;
  return make_result<T>("sum", {1}, {s}, {x}, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const size_t n = self.parents[0]->value.size();
      for (size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.values()) s += v;
  const T n = static_cast<T>(x.numel());
  return make_result<T>("mean", {1}, {s / n}, {x}, [n](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const T d = self.grad[0] / n;
      const size_t count = self.parents[0]->value.size();
      for (size_t i = 0; i < count; ++i) g[i] += d;
    }
  });
}

template <typename T>
Tensor<T> mean_last(const Tensor<T>& x) {
  const int64_t C = x.dim(-1);
  const int64_t rows = x.numel() / C;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<T> out(static_cast<size_t>(rows));
  const auto xv = x.values();
  for (int64_t r = 0; r < rows; ++r) {
    T s = 0;
    for (int64_t c = 0; c < C; ++c) s += xv[r * C + c];
    out[r] = s / static_cast<T>(C);
  }
  return make_result<T>("mean_last", std::move(out_shape), std::move(out), {x}, [rows, C](Node<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (int64_t r = 0; r < rows; ++r) {
        const T d = self.grad[r] / static_cast<T>(C);
        for (int64_t c = 0; c < C; ++c) g[r * C + c] += d;
      }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: rate must be below 1");
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.values().size());
  const uint64_t seed = rng();
  const auto threshold = static_cast<uint64_t>(std::ldexp(p, 32));
  auto& mv = *mask;
  const size_t n = mv.size();
  for (size_t i = 0; i < n; i += 2) {
    uint64_t z = seed + (i / 2 + 1) * 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    mv[i] = (z & 0xffffffffULL) < threshold ? T(0) : scale;
    if (i + 1 < n) mv[i + 1] = (z >> 32) < threshold ? T(0) : scale;
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
  return make_result<T>("dropout", x.shape(), std::move(out), {x}, [mask](Node<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

#define CMGAN_INSTANTIATE_AG(T)                                                                          \
  template class Tensor<T>;                                                                              \
  template Tensor<T> make_result<T>(std::string, Shape, std::vector<T>, std::vector<Tensor<T>>,          \
                                    std::function<void(Node<T>&)>);                                      \
  template void backward<T>(const Tensor<T>&);                                                           \
  template std::optional<std::string> find_nonfinite<T>(const Tensor<T>&);                               \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                                 \
  template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                                 \
  template Tensor<T> pow_scalar<T>(const Tensor<T>&, T);                                                 \
  template Tensor<T> abs<T>(const Tensor<T>&);                                                           \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                       \
  template Tensor<T> swish<T>(const Tensor<T>&);                                                         \
  template Tensor<T> cos<T>(const Tensor<T>&);                                                           \
  template Tensor<T> sin<T>(const Tensor<T>&);                                                           \
  template Tensor<T> prelu<T>(const Tensor<T>&, const Tensor<T>&, int64_t);                              \
  template Tensor<T> glu<T>(const Tensor<T>&, int64_t);                                                  \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, bool);                                \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Conv2dOptions&); \
  template Tensor<T> depthwise_conv1d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);             \
  template Tensor<T> instance_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);          \
  template Tensor<T> softmax_last<T>(const Tensor<T>&);                                                  \
  template Tensor<T> attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<int64_t>&);                          \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int64_t);                                  \
  template Tensor<T> slice<T>(const Tensor<T>&, int64_t, int64_t, int64_t);                              \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                           \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                          \
  template Tensor<T> mean_last<T>(const Tensor<T>&);                                                     \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, bool, Rng&);

CMGAN_INSTANTIATE_AG(float)
CMGAN_INSTANTIATE_AG(double)

}  // namespace cmgan::ag
