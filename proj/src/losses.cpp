#include "cmgan/losses.hpp"

#include <stdexcept>
#include <string>

namespace cmgan {

using ag::Tensor;

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("loss.alpha must lie in [0, 1]");
  if (!(gamma_tf >= 0.0)) throw std::invalid_argument("loss.gamma_tf must be non-negative");
  if (!(gamma_gan >= 0.0)) throw std::invalid_argument("loss.gamma_gan must be non-negative");
  if (!(gamma_time >= 0.0)) throw std::invalid_argument("loss.gamma_time must be non-negative");
}

namespace {

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ag::ShapeError(std::string(op) + ": shape mismatch " + ag::shape_str(a.shape()) + " vs " +
                         ag::shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> mean_squared_error(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("mean_squared_error", a, b);
  return ag::mean(ag::square(ag::sub(a, b)));
}

template <typename T>
Tensor<T> loss_magnitude(const Tensor<T>& clean_mag, const Tensor<T>& est_mag) {
  return mean_squared_error(clean_mag, est_mag);
}

template <typename T>
Tensor<T> loss_complex(const Tensor<T>& clean_real, const Tensor<T>& est_real, const Tensor<T>& clean_imag,
                       const Tensor<T>& est_imag) {
  return ag::add(mean_squared_error(clean_real, est_real), mean_squared_error(clean_imag, est_imag));
}

template <typename T>
Tensor<T> loss_tf(const Tensor<T>& clean_mag, const Tensor<T>& est_mag, const Tensor<T>& clean_real,
                  const Tensor<T>& est_real, const Tensor<T>& clean_imag, const Tensor<T>& est_imag, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("loss_tf: alpha must lie in [0, 1]");
  require_same("loss_tf", clean_mag, clean_real);
  require_same("loss_tf", clean_mag, clean_imag);
  const Tensor<T> mag = loss_magnitude(clean_mag, est_mag);
  const Tensor<T> ri = loss_complex(clean_real, est_real, clean_imag, est_imag);
  return ag::add(ag::mul_scalar(mag, static_cast<T>(alpha)), ag::mul_scalar(ri, static_cast<T>(1.0 - alpha)));
}

template <typename T>
Tensor<T> loss_adversarial_g(const Tensor<T>& scores) {
  return ag::mean(ag::square(ag::add_scalar(scores, T(-1))));
}

template <typename T>
Tensor<T> loss_discriminator(const Tensor<T>& score_clean_clean, const Tensor<T>& score_clean_est,
                             const Tensor<T>& quality_labels) {
  require_same("loss_discriminator", score_clean_est, quality_labels);
  return ag::add(loss_adversarial_g(score_clean_clean), mean_squared_error(score_clean_est, quality_labels));
}

template <typename T>
Tensor<T> loss_time(const Tensor<T>& clean, const Tensor<T>& estimate) {
  require_same("loss_time", clean, estimate);
  return ag::mean(ag::abs(ag::sub(clean, estimate)));
}

template <typename T>
Tensor<T> loss_generator_total(const Tensor<T>& l_tf, const Tensor<T>& l_gan, const Tensor<T>& l_time,
                               const LossConfig& cfg) {
  Tensor<T> total = Tensor<T>::scalar(T(0));
  bool first = true;
  auto accumulate = [&](const Tensor<T>& term, double weight) {
    if (!term.defined()) return;
    const Tensor<T> w = ag::mul_scalar(term, static_cast<T>(weight));
    total = first ? w : ag::add(total, w);
    first = false;
  };
  accumulate(l_tf, cfg.gamma_tf);
  accumulate(l_gan, cfg.gamma_gan);
  accumulate(l_time, cfg.gamma_time);
  return total;
}

#define CMGAN_INSTANTIATE_LOSSES(T)                                                                           \
  template Tensor<T> mean_squared_error<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> loss_magnitude<T>(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> loss_complex<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> loss_tf<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                const Tensor<T>&, const Tensor<T>&, double);                                 \
  template Tensor<T> loss_adversarial_g<T>(const Tensor<T>&);                                                \
  template Tensor<T> loss_discriminator<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> loss_time<T>(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> loss_generator_total<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                             const LossConfig&);

CMGAN_INSTANTIATE_LOSSES(float)
CMGAN_INSTANTIATE_LOSSES(double)

}  // namespace cmgan
