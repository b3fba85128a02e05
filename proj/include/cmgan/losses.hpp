#pragma once

// Time-frequency, adversarial, and waveform losses. Every expectation is the
// arithmetic mean over all elements of its arguments.

#include "cmgan/autograd.hpp"

namespace cmgan {

struct LossConfig {
  double alpha = 0.7;       // magnitude weight inside the TF loss
  double gamma_tf = 1.0;    // γ1
  double gamma_gan = 1.0;   // γ2
  double gamma_time = 1.0;  // γ3

  void validate() const;  // throws std::invalid_argument
};

// mean((a - b)^2)
template <typename T>
ag::Tensor<T> mean_squared_error(const ag::Tensor<T>& a, const ag::Tensor<T>& b);

// L_Mag = mean((X_m - X̂_m)^2)
template <typename T>
ag::Tensor<T> loss_magnitude(const ag::Tensor<T>& clean_mag, const ag::Tensor<T>& est_mag);
// L_RI = mean((X_r - X̂_r)^2) + mean((X_i - X̂_i)^2)
template <typename T>
ag::Tensor<T> loss_complex(const ag::Tensor<T>& clean_real, const ag::Tensor<T>& est_real,
                           const ag::Tensor<T>& clean_imag, const ag::Tensor<T>& est_imag);
// α L_Mag + (1 - α) L_RI
template <typename T>
ag::Tensor<T> loss_tf(const ag::Tensor<T>& clean_mag, const ag::Tensor<T>& est_mag, const ag::Tensor<T>& clean_real,
                      const ag::Tensor<T>& est_real, const ag::Tensor<T>& clean_imag, const ag::Tensor<T>& est_imag,
                      double alpha);

// mean((D(X_m, X̂_m) - 1)^2)
template <typename T>
ag::Tensor<T> loss_adversarial_g(const ag::Tensor<T>& scores);
// mean((D(X_m, X_m) - 1)^2) + mean((D(X_m, X̂_m) - Q')^2)
template <typename T>
ag::Tensor<T> loss_discriminator(const ag::Tensor<T>& score_clean_clean, const ag::Tensor<T>& score_clean_est,
                                 const ag::Tensor<T>& quality_labels);
// mean(|x - x̂|)
template <typename T>
ag::Tensor<T> loss_time(const ag::Tensor<T>& clean, const ag::Tensor<T>& estimate);

// γ1 L_TF + γ2 L_GAN + γ3 L_Time. An undefined term counts as zero.
template <typename T>
ag::Tensor<T> loss_generator_total(const ag::Tensor<T>& l_tf, const ag::Tensor<T>& l_gan, const ag::Tensor<T>& l_time,
                                   const LossConfig& cfg);

}  // namespace cmgan
