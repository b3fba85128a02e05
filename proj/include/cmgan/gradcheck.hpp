#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cmgan/autograd.hpp"

namespace cmgan::ag {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_leaf;  // "name[index]" of the largest error
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  int64_t checked_elements = 0;
  // Elements whose [x - h, x + h] interval straddles a kink (for example a
  // PReLU at zero): the one-sided differences disagree and the analytic value
  // matches one of them. They are excluded from max_relative_error.
  int64_t nonsmooth_elements = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  // 0 checks every element; otherwise at most this many evenly spread
  // elements per leaf.
  int64_t max_elements_per_leaf = 0;
};

// Compares the backward() gradient of `loss(leaves)` against central
// differences, element by element. Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// Throws NumericError naming the primitive if the forward value is not finite.
// See GradCheckResult::nonsmooth_elements for the one exclusion rule.
GradCheckResult grad_check(const std::function<Tensor<double>()>& loss,
                           const std::vector<std::pair<std::string, Tensor<double>>>& leaves,
                           const GradCheckOptions& options = {});

}  // namespace cmgan::ag
