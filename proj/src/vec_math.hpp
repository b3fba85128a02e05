#pragma once

// Branch-free elementwise math that the compiler can vectorize.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <type_traits>

namespace cmgan::detail {

// exp on float with relative error below 2e-7 on [-87.3, 88.0]; inputs
// outside are clamped to that interval and NaN propagates.
inline float exp_approx(float x) {
  x = x < -87.3365448f ? -87.3365448f : x;
  x = x > 88.0296919f ? 88.0296919f : x;
  constexpr float kRound = 12582912.0f;  // 1.5 * 2^23
  const float n = (x * 1.44269504088896341f + kRound) - kRound;
  float r = std::fma(n, -0.693359375f, x);
  r = std::fma(n, 2.12194440e-4f, r);
  float p = 1.9875691500e-4f;
  p = std::fma(p, r, 1.3981999507e-3f);
  p = std::fma(p, r, 8.3334519073e-3f);
  p = std::fma(p, r, 4.1665795894e-2f);
  p = std::fma(p, r, 1.6666665459e-1f);
  p = std::fma(p, r, 5.0000001201e-1f);
  p = std::fma(p * r, r, r) + 1.0f;
  const int32_t e = (static_cast<int32_t>(n) + 127) << 23;
  float scale;
  std::memcpy(&scale, &e, sizeof scale);
  return p * scale;
}

template <typename T>
inline T vexp(T x) {
  if constexpr (std::is_same_v<T, float>) {
    return exp_approx(x);
  } else {
    return std::exp(x);
  }
}

template <typename T>
inline T vsigmoid(T x) {
  const T e = vexp(-std::fabs(x));
  const T s = T(1) / (T(1) + e);
  return x >= T(0) ? s : e * s;
}

}  // namespace cmgan::detail
