// Naive single-threaded kernels. Each output element is one straight sum in
// canonical index order; tests compare the OpenMP kernels against these.

#include "cmgan/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace cmgan::kernels::reference {

template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, std::span<const T> a,
          std::span<const T> b, std::span<T> c, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      for (int64_t kk = 0; kk < k; ++kk) {
        const T av = trans_a ? a[kk * m + i] : a[i * k + kk];
        const T bv = trans_b ? b[j * k + kk] : b[kk * n + j];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
  }
}

template <typename T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output) {
  const int64_t OH = g.out_h(), OW = g.out_w();
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t oc = 0; oc < g.out_channels; ++oc)
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow) {
          T s = bias.empty() ? T(0) : bias[oc];
          for (int64_t ic = 0; ic < g.in_channels; ++ic)
            for (int64_t kh = 0; kh < g.kernel_h; ++kh)
              for (int64_t kw = 0; kw < g.kernel_w; ++kw) {
                const int64_t ih = oh * g.stride_h - g.pad_top + kh * g.dilation_h;
                const int64_t iw = ow * g.stride_w - g.pad_left + kw * g.dilation_w;
                if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) continue;
                s += weight[((oc * g.in_channels + ic) * g.kernel_h + kh) * g.kernel_w + kw] *
                     input[((b * g.in_channels + ic) * g.in_h + ih) * g.in_w + iw];
              }
          output[((b * g.out_channels + oc) * OH + oh) * OW + ow] = s;
        }
}

template <typename T>
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> grad_output,
                           std::span<const T> weight, std::span<T> grad_input) {
  const int64_t OH = g.out_h(), OW = g.out_w();
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t oc = 0; oc < g.out_channels; ++oc)
      for (int64_t oh = 0; oh < OH; ++oh)
        for (int64_t ow = 0; ow < OW; ++ow) {
          const T go = grad_output[((b * g.out_channels + oc) * OH + oh) * OW + ow];
          for (int64_t ic = 0; ic < g.in_channels; ++ic)
            for (int64_t kh = 0; kh < g.kernel_h; ++kh)
              for (int64_t kw = 0; kw < g.kernel_w; ++kw) {
                const int64_t ih = oh * g.stride_h - g.pad_top + kh * g.dilation_h;
                const int64_t iw = ow * g.stride_w - g.pad_left + kw * g.dilation_w;
                if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) continue;
                grad_input[((b * g.in_channels + ic) * g.in_h + ih) * g.in_w + iw] +=
                    go * weight[((oc * g.in_channels + ic) * g.kernel_h + kh) * g.kernel_w + kw];
              }
        }
}

template <typename T>
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> grad_output,
                            std::span<const T> input, std::span<T> grad_weight,
                            std::span<T> grad_bias) {
  const int64_t OH = g.out_h(), OW = g.out_w();
  for (int64_t oc = 0; oc < g.out_channels; ++oc) {
    if (!grad_bias.empty()) {
      T s = 0;
      for (int64_t b = 0; b < g.batch; ++b)
        for (int64_t i = 0; i < OH * OW; ++i) s += grad_output[(b * g.out_channels + oc) * OH * OW + i];
      grad_bias[oc] += s;
    }
    for (int64_t ic = 0; ic < g.in_channels; ++ic)
      for (int64_t kh = 0; kh < g.kernel_h; ++kh)
        for (int64_t kw = 0; kw < g.kernel_w; ++kw) {
          T s = 0;
          for (int64_t b = 0; b < g.batch; ++b)
            for (int64_t oh = 0; oh < OH; ++oh)
              for (int64_t ow = 0; ow < OW; ++ow) {
                const int64_t ih = oh * g.stride_h - g.pad_top + kh * g.dilation_h;
                const int64_t iw = ow * g.stride_w - g.pad_left + kw * g.dilation_w;
                if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) continue;
                s += grad_output[((b * g.out_channels + oc) * OH + oh) * OW + ow] *
                     input[((b * g.in_channels + ic) * g.in_h + ih) * g.in_w + iw];
              }
          grad_weight[((oc * g.in_channels + ic) * g.kernel_h + kh) * g.kernel_w + kw] += s;
        }
  }
}

template <typename T>
void depthwise1d_forward(const Depthwise1dGeometry& g, std::span<const T> input,
                         std::span<const T> weight, std::span<const T> bias, std::span<T> output) {
  const int64_t pad = (g.kernel - 1) / 2;
  for (int64_t n = 0; n < g.batch; ++n)
    for (int64_t l = 0; l < g.length; ++l)
      for (int64_t c = 0; c < g.channels; ++c) {
        T s = bias.empty() ? T(0) : bias[c];
        for (int64_t k = 0; k < g.kernel; ++k) {
          const int64_t li = l + k - pad;
          if (li < 0 || li >= g.length) continue;
          s += weight[c * g.kernel + k] * input[(n * g.length + li) * g.channels + c];
        }
        output[(n * g.length + l) * g.channels + c] = s;
      }
}

template <typename T>
void depthwise1d_backward(const Depthwise1dGeometry& g, std::span<const T> grad_output,
                          std::span<const T> input, std::span<const T> weight,
                          std::span<T> grad_input, std::span<T> grad_weight,
                          std::span<T> grad_bias) {
  const int64_t pad = (g.kernel - 1) / 2;
  for (int64_t n = 0; n < g.batch; ++n)
    for (int64_t l = 0; l < g.length; ++l)
      for (int64_t c = 0; c < g.channels; ++c) {
        const T go = grad_output[(n * g.length + l) * g.channels + c];
        if (!grad_bias.empty()) grad_bias[c] += go;
        for (int64_t k = 0; k < g.kernel; ++k) {
          const int64_t li = l + k - pad;
          if (li < 0 || li >= g.length) continue;
          const int64_t idx = (n * g.length + li) * g.channels + c;
          if (!grad_input.empty()) grad_input[idx] += go * weight[c * g.kernel + k];
          if (!grad_weight.empty()) grad_weight[c * g.kernel + k] += go * input[idx];
        }
      }
}

// Materializes the full probability matrix of each slice.
template <typename T>
void attention_forward(int64_t slices, int64_t length, int64_t depth, T scale, std::span<const T> q,
                       std::span<const T> k, std::span<const T> v, std::span<T> out, std::span<T> lse) {
  const int64_t L = length, D = depth;
  for (int64_t s = 0; s < slices; ++s) {
    const int64_t base = s * L * D;
    std::vector<T> score(static_cast<size_t>(L * L));
    for (int64_t i = 0; i < L; ++i)
      for (int64_t j = 0; j < L; ++j) {
        T acc = T(0);
        for (int64_t d = 0; d < D; ++d) acc += q[base + i * D + d] * k[base + j * D + d];
        score[i * L + j] = acc * scale;
      }
    for (int64_t i = 0; i < L; ++i) {
      T peak = score[i * L];
      for (int64_t j = 1; j < L; ++j) peak = std::max(peak, score[i * L + j]);
      T total = T(0);
      for (int64_t j = 0; j < L; ++j) total += std::exp(score[i * L + j] - peak);
      lse[s * L + i] = peak + std::log(total);
      for (int64_t d = 0; d < D; ++d) {
        T acc = T(0);
        for (int64_t j = 0; j < L; ++j)
          acc += std::exp(score[i * L + j] - peak) / total * v[base + j * D + d];
        out[base + i * D + d] = acc;
      }
    }
  }
}

template <typename T>
void attention_backward(int64_t slices, int64_t length, int64_t depth, T scale, std::span<const T> q,
                        std::span<const T> k, std::span<const T> v, std::span<const T> out,
                        std::span<const T> lse, std::span<const T> grad_out, std::span<T> grad_q,
                        std::span<T> grad_k, std::span<T> grad_v) {
  (void)out;
  const int64_t L = length, D = depth;
  for (int64_t s = 0; s < slices; ++s) {
    const int64_t base = s * L * D;
    std::vector<T> p(static_cast<size_t>(L * L)), dp(static_cast<size_t>(L * L));
    for (int64_t i = 0; i < L; ++i)
      for (int64_t j = 0; j < L; ++j) {
        T acc = T(0), g = T(0);
        for (int64_t d = 0; d < D; ++d) {
          acc += q[base + i * D + d] * k[base + j * D + d];
          g += grad_out[base + i * D + d] * v[base + j * D + d];
        }
        p[i * L + j] = std::exp(acc * scale - lse[s * L + i]);
        dp[i * L + j] = g;
      }
    for (int64_t i = 0; i < L; ++i) {
      T row = T(0);
      for (int64_t j = 0; j < L; ++j) row += p[i * L + j] * dp[i * L + j];
      for (int64_t j = 0; j < L; ++j) {
        const T ds = p[i * L + j] * (dp[i * L + j] - row) * scale;
        for (int64_t d = 0; d < D; ++d) {
          if (!grad_q.empty()) grad_q[base + i * D + d] += ds * k[base + j * D + d];
          if (!grad_k.empty()) grad_k[base + j * D + d] += ds * q[base + i * D + d];
          if (!grad_v.empty()) grad_v[base + j * D + d] += p[i * L + j] * grad_out[base + i * D + d];
        }
      }
    }
  }
}

#define CMGAN_INSTANTIATE_REFERENCE(T)                                                           \
  template void gemm<T>(bool, bool, int64_t, int64_t, int64_t, std::span<const T>,              \
                        std::span<const T>, std::span<T>, bool);                                 \
  template void conv2d_forward<T>(const Conv2dGeometry&, std::span<const T>, std::span<const T>, \
                                  std::span<const T>, std::span<T>);                             \
  template void conv2d_backward_input<T>(const Conv2dGeometry&, std::span<const T>,             \
                                         std::span<const T>, std::span<T>);                      \
  template void conv2d_backward_weight<T>(const Conv2dGeometry&, std::span<const T>,            \
                                          std::span<const T>, std::span<T>, std::span<T>);       \
  template void depthwise1d_forward<T>(const Depthwise1dGeometry&, std::span<const T>,          \
                                       std::span<const T>, std::span<const T>, std::span<T>);    \
  template void depthwise1d_backward<T>(const Depthwise1dGeometry&, std::span<const T>,         \
                                        std::span<const T>, std::span<const T>, std::span<T>,    \
                                        std::span<T>, std::span<T>);                             \
  template void attention_forward<T>(int64_t, int64_t, int64_t, T, std::span<const T>,          \
                                     std::span<const T>, std::span<const T>, std::span<T>,      \
                                     std::span<T>);                                             \
  template void attention_backward<T>(int64_t, int64_t, int64_t, T, std::span<const T>,         \
                                      std::span<const T>, std::span<const T>, std::span<const T>, \
                                      std::span<const T>, std::span<const T>, std::span<T>,     \
                                      std::span<T>, std::span<T>);

CMGAN_INSTANTIATE_REFERENCE(float)
CMGAN_INSTANTIATE_REFERENCE(double)

}  // namespace cmgan::kernels::reference
