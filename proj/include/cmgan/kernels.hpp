#pragma once

// Dense compute kernels used by the autograd primitives.
//
// Every kernel exists twice: the OpenMP version in `cmgan::kernels` and a
// naive single-threaded version in `cmgan::kernels::reference` that computes
// each output element as one canonical-order sum. The reference versions are
// only used by tests and the benchmark target.
//
// All buffers are dense row-major. Functions that "accumulate" add into the
// destination instead of overwriting it.

#include <cstdint>
#include <span>

namespace cmgan::kernels {

/// Geometry of a 2-D convolution over NCHW input with OIHW weights.
struct Conv2dGeometry {
  int64_t batch = 1;
  int64_t in_channels = 1;
  int64_t in_h = 1;
  int64_t in_w = 1;
  int64_t out_channels = 1;
  int64_t kernel_h = 1;
  int64_t kernel_w = 1;
  int64_t stride_h = 1;
  int64_t stride_w = 1;
  int64_t dilation_h = 1;
  int64_t dilation_w = 1;
  int64_t pad_top = 0;
  int64_t pad_bottom = 0;
  int64_t pad_left = 0;
  int64_t pad_right = 0;

  int64_t out_h() const {
    return (in_h + pad_top + pad_bottom - dilation_h * (kernel_h - 1) - 1) / stride_h + 1;
  }
  int64_t out_w() const {
    return (in_w + pad_left + pad_right - dilation_w * (kernel_w - 1) - 1) / stride_w + 1;
  }
  int64_t input_size() const { return batch * in_channels * in_h * in_w; }
  int64_t weight_size() const { return out_channels * in_channels * kernel_h * kernel_w; }
  int64_t output_size() const { return batch * out_channels * out_h() * out_w(); }
};

/// Geometry of a channels-last depthwise 1-D convolution: input [N, L, C],
/// weight [C, K], symmetric zero padding of (K - 1) / 2 (K odd).
struct Depthwise1dGeometry {
  int64_t batch = 1;
  int64_t length = 1;
  int64_t channels = 1;
  int64_t kernel = 1;
};

// C[M,N] (+)= op(A) * op(B). op(A) is M x K, op(B) is K x N. When a matrix is
// transposed its stored layout is the transpose (A stored K x M, B stored N x K).
template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, std::span<const T> a,
          std::span<const T> b, std::span<T> c, bool accumulate);

template <typename T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output);
template <typename T>
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> grad_output,
                           std::span<const T> weight, std::span<T> grad_input);
// grad_bias may be empty when the convolution has no bias.
template <typename T>
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> grad_output,
                            std::span<const T> input, std::span<T> grad_weight,
                            std::span<T> grad_bias);

template <typename T>
void depthwise1d_forward(const Depthwise1dGeometry& g, std::span<const T> input,
                         std::span<const T> weight, std::span<const T> bias, std::span<T> output);
template <typename T>
void depthwise1d_backward(const Depthwise1dGeometry& g, std::span<const T> grad_output,
                          std::span<const T> input, std::span<const T> weight,
                          std::span<T> grad_input, std::span<T> grad_weight,
                          std::span<T> grad_bias);


// Scaled dot-product attention over independent slices. q, k, v, out:
// [slices, L, d]. lse receives the per-row log-sum-exp of the scaled scores
// ([slices, L]) so the backward pass can rebuild the probabilities.
template <typename T>
void attention_forward(int64_t slices, int64_t length, int64_t depth, T scale, std::span<const T> q,
                       std::span<const T> k, std::span<const T> v, std::span<T> out, std::span<T> lse);
// Accumulates into grad_q, grad_k, grad_v.
template <typename T>
void attention_backward(int64_t slices, int64_t length, int64_t depth, T scale, std::span<const T> q,
                        std::span<const T> k, std::span<const T> v, std::span<const T> out,
                        std::span<const T> lse, std::span<const T> grad_out, std::span<T> grad_q,
                        std::span<T> grad_k, std::span<T> grad_v);

namespace reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, std::span<const T> a,
          std::span<const T> b, std::span<T> c, bool accumulate);
template <typename T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output);
template <typename T>
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> grad_output,
                           std::span<const T> weight, std::span<T> grad_input);
template <typename T>
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> grad_output,
                            std::span<const T> input, std::span<T> grad_weight,
                            std::span<T> grad_bias);
template <typename T>
void depthwise1d_forward(const Depthwise1dGeometry& g, std::span<const T> input,
                         std::span<const T> weight, std::span<const T> bias, std::span<T> output);
template <typename T>
void depthwise1d_backward(const Depthwise1dGeometry& g, std::span<const T> grad_output,
                          std::span<const T> input, std::span<const T> weight,
                          std::span<T> grad_input, std::span<T> grad_weight,
                          std::span<T> grad_bias);

template <typename T>
void attention_forward(int64_t slices, int64_t length, int64_t depth, T scale, std::span<const T> q,
                       std::span<const T> k, std::span<const T> v, std::span<T> out, std::span<T> lse);
template <typename T>
void attention_backward(int64_t slices, int64_t length, int64_t depth, T scale, std::span<const T> q,
                        std::span<const T> k, std::span<const T> v, std::span<const T> out,
                        std::span<const T> lse, std::span<const T> grad_out, std::span<T> grad_q,
                        std::span<T> grad_k, std::span<T> grad_v);

}  // namespace reference

}  // namespace cmgan::kernels
