#include "cmgan/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "vec_math.hpp"

namespace cmgan::kernels {

namespace {

// Range of output columns [lo, hi) whose input column ow*stride + offset lies
// inside [0, width).
inline void valid_range(int64_t out_w, int64_t width, int64_t stride, int64_t offset, int64_t& lo,
                        int64_t& hi) {
  lo = 0;
  if (offset < 0) lo = (-offset + stride - 1) / stride;
  hi = out_w;
  const int64_t limit = width - offset;  // need ow*stride < limit
  if (limit <= 0) {
    hi = 0;
  } else {
    hi = std::min<int64_t>(out_w, (limit + stride - 1) / stride);
  }
  if (hi < lo) hi = lo;
}

template <typename T>
void transpose_into(const T* src, int64_t rows, int64_t cols, std::vector<T>& dst) {
  dst.resize(static_cast<size_t>(rows * cols));
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) dst[static_cast<size_t>(c * rows + r)] = src[r * cols + c];
}

}  // namespace

// ---- blocked GEMM ------------------------------------------------------------

namespace {

template <typename T>
struct Blocking;
template <>
struct Blocking<float> {
  static constexpr int mr = 6, nr = 32;
};
template <>
struct Blocking<double> {
  static constexpr int mr = 6, nr = 16;
};
constexpr int64_t kKc = 256, kMc = 72, kNc = 3072;

template <typename T>
void micro_kernel(int64_t kc, const T* __restrict ap, const T* __restrict bp, T* __restrict c, int64_t ldc, int mr,
                  int nr) {
  constexpr int MR = Blocking<T>::mr, NR = Blocking<T>::nr;
  T acc[MR][NR];
  for (int i = 0; i < MR; ++i)
    for (int j = 0; j < NR; ++j) acc[i][j] = T(0);
  for (int64_t p = 0; p < kc; ++p) {
    const T* b = bp + p * NR;
    const T* a = ap + p * MR;
#pragma GCC unroll 6
    for (int i = 0; i < MR; ++i) {
      const T av = a[i];
#pragma GCC unroll 32
      for (int j = 0; j < NR; ++j) acc[i][j] += av * b[j];
    }
  }
  if (mr == MR && nr == NR) {
    for (int i = 0; i < MR; ++i)
      for (int j = 0; j < NR; ++j) c[i * ldc + j] += acc[i][j];
  } else {
    for (int i = 0; i < mr; ++i)
      for (int j = 0; j < nr; ++j) c[i * ldc + j] += acc[i][j];
  }
}

// C[m,n] += op(A) op(B) with explicit leading dimensions.
template <typename T>
void gemm_accumulate(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a, int64_t lda,
                     const T* b, int64_t ldb, T* c, int64_t ldc) {
  if (m == 0 || n == 0 || k == 0) return;
  constexpr int MR = Blocking<T>::mr, NR = Blocking<T>::nr;
  thread_local std::vector<T> bpack;
  bpack.resize(static_cast<size_t>(kKc * (kNc + NR)));
  for (int64_t jc = 0; jc < n; jc += kNc) {
    const int64_t nc = std::min(kNc, n - jc);
    for (int64_t pc = 0; pc < k; pc += kKc) {
      const int64_t kc = std::min(kKc, k - pc);
      for (int64_t jr = 0; jr < nc; jr += NR) {
        const int nr = static_cast<int>(std::min<int64_t>(NR, nc - jr));
        T* dst = bpack.data() + jr * kc;
        for (int64_t p = 0; p < kc; ++p) {
          const int64_t row = pc + p;
          T* d = dst + p * NR;
          if (trans_b) {
            for (int j = 0; j < nr; ++j) d[j] = b[(jc + jr + j) * ldb + row];
          } else {
            const T* src = b + row * ldb + jc + jr;
            for (int j = 0; j < nr; ++j) d[j] = src[j];
          }
          for (int j = nr; j < NR; ++j) d[j] = T(0);
        }
      }
      const T* bp = bpack.data();
      const int64_t blocks = (m + kMc - 1) / kMc;
#pragma omp parallel for schedule(static)
      for (int64_t blk = 0; blk < blocks; ++blk) {
        const int64_t ic = blk * kMc;
        const int64_t mc = std::min(kMc, m - ic);
        thread_local std::vector<T> apack;
        apack.resize(static_cast<size_t>(kKc * (kMc + MR)));
        for (int64_t ir = 0; ir < mc; ir += MR) {
          const int mr = static_cast<int>(std::min<int64_t>(MR, mc - ir));
          T* dst = apack.data() + ir * kc;
          for (int64_t p = 0; p < kc; ++p) {
            const int64_t col = pc + p;
            T* d = dst + p * MR;
            for (int i = 0; i < mr; ++i) {
              const int64_t row = ic + ir + i;
              d[i] = trans_a ? a[col * lda + row] : a[row * lda + col];
            }
            for (int i = mr; i < MR; ++i) d[i] = T(0);
          }
        }
        for (int64_t jr = 0; jr < nc; jr += NR) {
          const int nr = static_cast<int>(std::min<int64_t>(NR, nc - jr));
          for (int64_t ir = 0; ir < mc; ir += MR) {
            const int mr = static_cast<int>(std::min<int64_t>(MR, mc - ir));
            micro_kernel<T>(kc, apack.data() + ir * kc, bp + jr * kc, c + (ic + ir) * ldc + jc + jr, ldc, mr, nr);
          }
        }
      }
    }
  }
}

// ---- im2col convolution ------------------------------------------------------

constexpr int64_t kColBudget = int64_t{1} << 21;  // elements per column buffer

bool is_pointwise(const Conv2dGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride_h == 1 && g.stride_w == 1 && g.pad_top == 0 &&
         g.pad_bottom == 0 && g.pad_left == 0 && g.pad_right == 0;
}

// Output rows per column chunk.
int64_t chunk_rows(const Conv2dGeometry& g) {
  const int64_t K = g.in_channels * g.kernel_h * g.kernel_w;
  return std::clamp<int64_t>(kColBudget / std::max<int64_t>(1, K * g.out_w()), 1, g.out_h());
}

// col[r, (oh - oh0) * out_w + ow] for r = (ic, kh, kw) and oh in [oh0, oh1).
template <typename T>
void im2col(const Conv2dGeometry& g, const T* in_b, int64_t oh0, int64_t oh1, T* col) {
  const int64_t ow_n = g.out_w(), pc = (oh1 - oh0) * ow_n;
  const int64_t plane_in = g.in_h * g.in_w;
  int64_t r = 0;
  for (int64_t ic = 0; ic < g.in_channels; ++ic) {
    const T* in_plane = in_b + ic * plane_in;
    for (int64_t kh = 0; kh < g.kernel_h; ++kh) {
      for (int64_t kw = 0; kw < g.kernel_w; ++kw, ++r) {
        const int64_t off = kw * g.dilation_w - g.pad_left;
        int64_t lo, hi;
        valid_range(ow_n, g.in_w, g.stride_w, off, lo, hi);
        T* dst_r = col + r * pc;
        for (int64_t oh = oh0; oh < oh1; ++oh) {
          T* dst = dst_r + (oh - oh0) * ow_n;
          const int64_t ih = oh * g.stride_h - g.pad_top + kh * g.dilation_h;
          if (ih < 0 || ih >= g.in_h) {
            std::fill(dst, dst + ow_n, T(0));
            continue;
          }
          const T* in_row = in_plane + ih * g.in_w;
          std::fill(dst, dst + lo, T(0));
          if (g.stride_w == 1) {
            std::copy(in_row + lo + off, in_row + hi + off, dst + lo);
          } else {
            for (int64_t ow = lo; ow < hi; ++ow) dst[ow] = in_row[ow * g.stride_w + off];
          }
          std::fill(dst + hi, dst + ow_n, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const Conv2dGeometry& g, const T* col, int64_t oh0, int64_t oh1, T* gin_b) {
  const int64_t ow_n = g.out_w(), pc = (oh1 - oh0) * ow_n;
  const int64_t plane_in = g.in_h * g.in_w;
  int64_t r = 0;
  for (int64_t ic = 0; ic < g.in_channels; ++ic) {
    T* gin_plane = gin_b + ic * plane_in;
    for (int64_t kh = 0; kh < g.kernel_h; ++kh) {
      for (int64_t kw = 0; kw < g.kernel_w; ++kw, ++r) {
        const int64_t off = kw * g.dilation_w - g.pad_left;
        int64_t lo, hi;
        valid_range(ow_n, g.in_w, g.stride_w, off, lo, hi);
        const T* src_r = col + r * pc;
        for (int64_t oh = oh0; oh < oh1; ++oh) {
          const int64_t ih = oh * g.stride_h - g.pad_top + kh * g.dilation_h;
          if (ih < 0 || ih >= g.in_h) continue;
          const T* src = src_r + (oh - oh0) * ow_n;
          T* gin_row = gin_plane + ih * g.in_w;
          if (g.stride_w == 1) {
            T* dst = gin_row + off;
            for (int64_t ow = lo; ow < hi; ++ow) dst[ow] += src[ow];
          } else {
            for (int64_t ow = lo; ow < hi; ++ow) gin_row[ow * g.stride_w + off] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, std::span<const T> a,
          std::span<const T> b, std::span<T> c, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.begin() + m * n, T(0));
  gemm_accumulate(trans_a, trans_b, m, n, k, a.data(), trans_a ? m : k, b.data(), trans_b ? k : n, c.data(), n);
}

template <typename T>
void conv2d_forward(const Conv2dGeometry& g, std::span<const T> input, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> output) {
  const int64_t oh_n = g.out_h(), ow_n = g.out_w();
  const int64_t P = oh_n * ow_n, K = g.in_channels * g.kernel_h * g.kernel_w;
  const int64_t plane_in = g.in_h * g.in_w;
  for (int64_t b = 0; b < g.batch; ++b) {
    T* out_b = output.data() + b * g.out_channels * P;
    for (int64_t oc = 0; oc < g.out_channels; ++oc) {
      std::fill(out_b + oc * P, out_b + (oc + 1) * P, bias.empty() ? T(0) : bias[static_cast<size_t>(oc)]);
    }
    const T* in_b = input.data() + b * g.in_channels * plane_in;
    if (is_pointwise(g)) {
      gemm_accumulate(false, false, g.out_channels, P, K, weight.data(), K, in_b, P, out_b, P);
      continue;
    }
    const int64_t rows = chunk_rows(g);
    thread_local std::vector<T> col;
    col.resize(static_cast<size_t>(K * rows * ow_n));
    for (int64_t oh0 = 0; oh0 < oh_n; oh0 += rows) {
      const int64_t oh1 = std::min(oh_n, oh0 + rows), pc = (oh1 - oh0) * ow_n;
      im2col(g, in_b, oh0, oh1, col.data());
      gemm_accumulate(false, false, g.out_channels, pc, K, weight.data(), K, col.data(), pc, out_b + oh0 * ow_n, P);
    }
  }
}

template <typename T>
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const T> grad_output,
                           std::span<const T> weight, std::span<T> grad_input) {
  const int64_t oh_n = g.out_h(), ow_n = g.out_w();
  const int64_t P = oh_n * ow_n, K = g.in_channels * g.kernel_h * g.kernel_w;
  const int64_t plane_in = g.in_h * g.in_w;
  for (int64_t b = 0; b < g.batch; ++b) {
    const T* gout_b = grad_output.data() + b * g.out_channels * P;
    T* gin_b = grad_input.data() + b * g.in_channels * plane_in;
    if (is_pointwise(g)) {
      gemm_accumulate(true, false, K, P, g.out_channels, weight.data(), K, gout_b, P, gin_b, P);
      continue;
    }
    const int64_t rows = chunk_rows(g);
    thread_local std::vector<T> col;
    col.resize(static_cast<size_t>(K * rows * ow_n));
    for (int64_t oh0 = 0; oh0 < oh_n; oh0 += rows) {
      const int64_t oh1 = std::min(oh_n, oh0 + rows), pc = (oh1 - oh0) * ow_n;
      std::fill(col.begin(), col.begin() + K * pc, T(0));
      gemm_accumulate(true, false, K, pc, g.out_channels, weight.data(), K, gout_b + oh0 * ow_n, P, col.data(), pc);
      col2im_add(g, col.data(), oh0, oh1, gin_b);
    }
  }
}

template <typename T>
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const T> grad_output,
                            std::span<const T> input, std::span<T> grad_weight,
                            std::span<T> grad_bias) {
  const int64_t oh_n = g.out_h(), ow_n = g.out_w();
  const int64_t P = oh_n * ow_n, K = g.in_channels * g.kernel_h * g.kernel_w;
  const int64_t plane_in = g.in_h * g.in_w;
  if (!grad_bias.empty()) {
    for (int64_t oc = 0; oc < g.out_channels; ++oc) {
      T s = 0;
      for (int64_t b = 0; b < g.batch; ++b) {
        const T* gout = grad_output.data() + (b * g.out_channels + oc) * P;
        for (int64_t i = 0; i < P; ++i) s += gout[i];
      }
      grad_bias[static_cast<size_t>(oc)] += s;
    }
  }
  for (int64_t b = 0; b < g.batch; ++b) {
    const T* gout_b = grad_output.data() + b * g.out_channels * P;
    const T* in_b = input.data() + b * g.in_channels * plane_in;
    if (is_pointwise(g)) {
      gemm_accumulate(false, true, g.out_channels, K, P, gout_b, P, in_b, P, grad_weight.data(), K);
      continue;
    }
    const int64_t rows = chunk_rows(g);
    thread_local std::vector<T> col;
    col.resize(static_cast<size_t>(K * rows * ow_n));
    for (int64_t oh0 = 0; oh0 < oh_n; oh0 += rows) {
      const int64_t oh1 = std::min(oh_n, oh0 + rows), pc = (oh1 - oh0) * ow_n;
      im2col(g, in_b, oh0, oh1, col.data());
      gemm_accumulate(false, true, g.out_channels, K, pc, gout_b + oh0 * ow_n, P, col.data(), pc,
                      grad_weight.data(), K);
    }
  }
}

template <typename T>
void depthwise1d_forward(const Depthwise1dGeometry& g, std::span<const T> input,
                         std::span<const T> weight, std::span<const T> bias, std::span<T> output) {
  const int64_t L = g.length, C = g.channels, K = g.kernel, pad = (g.kernel - 1) / 2;
  std::vector<T> wt;
  transpose_into(weight.data(), C, K, wt);  // [K, C]
#pragma omp parallel for schedule(static)
  for (int64_t n = 0; n < g.batch; ++n) {
    const T* in = input.data() + n * L * C;
    T* out = output.data() + n * L * C;
    for (int64_t l = 0; l < L; ++l) {
      T* orow = out + l * C;
      for (int64_t c = 0; c < C; ++c) orow[c] = bias.empty() ? T(0) : bias[static_cast<size_t>(c)];
      for (int64_t k = 0; k < K; ++k) {
        const int64_t li = l + k - pad;
        if (li < 0 || li >= L) continue;
        const T* irow = in + li * C;
        const T* wrow = wt.data() + k * C;
        for (int64_t c = 0; c < C; ++c) orow[c] += wrow[c] * irow[c];
      }
    }
  }
}

template <typename T>
void depthwise1d_backward(const Depthwise1dGeometry& g, std::span<const T> grad_output,
                          std::span<const T> input, std::span<const T> weight,
                          std::span<T> grad_input, std::span<T> grad_weight,
                          std::span<T> grad_bias) {
  const int64_t L = g.length, C = g.channels, K = g.kernel, pad = (g.kernel - 1) / 2;
  if (!grad_input.empty()) {
    std::vector<T> wt;
    transpose_into(weight.data(), C, K, wt);
#pragma omp parallel for schedule(static)
    for (int64_t n = 0; n < g.batch; ++n) {
      const T* gout = grad_output.data() + n * L * C;
      T* gin = grad_input.data() + n * L * C;
      for (int64_t l = 0; l < L; ++l) {
        const T* grow = gout + l * C;
        for (int64_t k = 0; k < K; ++k) {
          const int64_t li = l + k - pad;
          if (li < 0 || li >= L) continue;
          T* dst = gin + li * C;
          const T* wrow = wt.data() + k * C;
          for (int64_t c = 0; c < C; ++c) dst[c] += wrow[c] * grow[c];
        }
      }
    }
  }
  if (!grad_weight.empty()) {
#pragma omp parallel for schedule(static)
    for (int64_t k = 0; k < K; ++k) {
      std::vector<T> acc(static_cast<size_t>(C), T(0));
      for (int64_t n = 0; n < g.batch; ++n) {
        const T* gout = grad_output.data() + n * L * C;
        const T* in = input.data() + n * L * C;
        for (int64_t l = 0; l < L; ++l) {
          const int64_t li = l + k - pad;
          if (li < 0 || li >= L) continue;
          const T* grow = gout + l * C;
          const T* irow = in + li * C;
          for (int64_t c = 0; c < C; ++c) acc[c] += grow[c] * irow[c];
        }
      }
      for (int64_t c = 0; c < C; ++c) grad_weight[static_cast<size_t>(c * K + k)] += acc[c];
    }
  }
  if (!grad_bias.empty()) {
    std::vector<T> acc(static_cast<size_t>(C), T(0));
    const int64_t rows = g.batch * L;
    for (int64_t r = 0; r < rows; ++r) {
      const T* grow = grad_output.data() + r * C;
      for (int64_t c = 0; c < C; ++c) acc[c] += grow[c];
    }
    for (int64_t c = 0; c < C; ++c) grad_bias[static_cast<size_t>(c)] += acc[c];
  }
}

namespace {

// dst[d * L + j] = src[j * D + d]
template <typename T>
void transpose_panel(const T* src, int64_t L, int64_t D, T* dst) {
  for (int64_t j = 0; j < L; ++j)
    for (int64_t d = 0; d < D; ++d) dst[d * L + j] = src[j * D + d];
}

// row[j] = scale * sum_d x[d] * panel[d, j]
template <typename T>
void panel_scores(const T* x, const T* panel, int64_t L, int64_t D, T scale, T* __restrict row) {
  std::fill(row, row + L, T(0));
  for (int64_t d = 0; d < D; ++d) {
    const T xd = x[d] * scale;
    const T* pd = panel + d * L;
#pragma omp simd
    for (int64_t j = 0; j < L; ++j) row[j] += xd * pd[j];
  }
}

template <typename T>
T dot(const T* a, const T* b, int64_t n) {
  T acc = T(0);
#pragma omp simd reduction(+ : acc)
  for (int64_t j = 0; j < n; ++j) acc += a[j] * b[j];
  return acc;
}

}  // namespace

template <typename T>
void attention_forward(int64_t slices, int64_t length, int64_t depth, T scale, std::span<const T> q,
                       std::span<const T> k, std::span<const T> v, std::span<T> out, std::span<T> lse) {
  const int64_t L = length, D = depth;
#pragma omp parallel
  {
    std::vector<T> row(static_cast<size_t>(L)), kt(static_cast<size_t>(L * D)), vt(static_cast<size_t>(L * D));
#pragma omp for schedule(static)
    for (int64_t s = 0; s < slices; ++s) {
      const T* qs = q.data() + s * L * D;
      transpose_panel(k.data() + s * L * D, L, D, kt.data());
      transpose_panel(v.data() + s * L * D, L, D, vt.data());
      T* os = out.data() + s * L * D;
      for (int64_t i = 0; i < L; ++i) {
        panel_scores(qs + i * D, kt.data(), L, D, scale, row.data());
        T peak = row[0];
#pragma omp simd reduction(max : peak)
        for (int64_t j = 0; j < L; ++j) peak = std::max(peak, row[j]);
        T total = T(0);
#pragma omp simd reduction(+ : total)
        for (int64_t j = 0; j < L; ++j) {
          row[j] = detail::vexp(row[j] - peak);
          total += row[j];
        }
        const T inv = T(1) / total;
        T* oi = os + i * D;
        for (int64_t d = 0; d < D; ++d) oi[d] = dot(row.data(), vt.data() + d * L, L) * inv;
        lse[static_cast<size_t>(s * L + i)] = peak + std::log(total);
      }
    }
  }
}

template <typename T>
void attention_backward(int64_t slices, int64_t length, int64_t depth, T scale, std::span<const T> q,
                        std::span<const T> k, std::span<const T> v, std::span<const T> out,
                        std::span<const T> lse, std::span<const T> grad_out, std::span<T> grad_q,
                        std::span<T> grad_k, std::span<T> grad_v) {
  const int64_t L = length, D = depth;
  const size_t panel = static_cast<size_t>(L * D);
#pragma omp parallel
  {
    std::vector<T> prob(static_cast<size_t>(L)), dlogit(static_cast<size_t>(L));
    std::vector<T> kt(panel), vt(panel), gkt(panel), gvt(panel);
#pragma omp for schedule(static)
    for (int64_t s = 0; s < slices; ++s) {
      const size_t off = static_cast<size_t>(s * L * D);
      const T* qs = q.data() + off;
      const T* os = out.data() + off;
      const T* gos = grad_out.data() + off;
      transpose_panel(k.data() + off, L, D, kt.data());
      transpose_panel(v.data() + off, L, D, vt.data());
      std::fill(gkt.begin(), gkt.end(), T(0));
      std::fill(gvt.begin(), gvt.end(), T(0));
      for (int64_t i = 0; i < L; ++i) {
        const T* qi = qs + i * D;
        const T* goi = gos + i * D;
        const T* oi = os + i * D;
        const T m = lse[static_cast<size_t>(s * L + i)];
        T rowdot = T(0);
        for (int64_t d = 0; d < D; ++d) rowdot += goi[d] * oi[d];
        panel_scores(qi, kt.data(), L, D, scale, prob.data());
        panel_scores(goi, vt.data(), L, D, T(1), dlogit.data());
        for (int64_t j = 0; j < L; ++j) {
          const T p = detail::vexp(prob[j] - m);
          prob[j] = p;
          dlogit[j] = p * (dlogit[j] - rowdot) * scale;
        }
        if (!grad_q.empty()) {
          T* gq = grad_q.data() + off + i * D;
          for (int64_t d = 0; d < D; ++d) gq[d] += dot(dlogit.data(), kt.data() + d * L, L);
        }
        for (int64_t d = 0; d < D; ++d) {
          const T qd = qi[d], gd = goi[d];
          T* gk = gkt.data() + d * L;
          T* gv = gvt.data() + d * L;
#pragma omp simd
          for (int64_t j = 0; j < L; ++j) {
            gk[j] += dlogit[j] * qd;
            gv[j] += prob[j] * gd;
          }
        }
      }
      for (int64_t j = 0; j < L; ++j)
        for (int64_t d = 0; d < D; ++d) {
          if (!grad_k.empty()) grad_k[off + j * D + d] += gkt[d * L + j];
          if (!grad_v.empty()) grad_v[off + j * D + d] += gvt[d * L + j];
        }
    }
  }
}

#define CMGAN_INSTANTIATE_KERNELS(T)                                                             \
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

CMGAN_INSTANTIATE_KERNELS(float)
CMGAN_INSTANTIATE_KERNELS(double)

}  // namespace cmgan::kernels
