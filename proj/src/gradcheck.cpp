#include "cmgan/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace cmgan::ag {

namespace {

double evaluate(const std::function<Tensor<double>()>& loss) {
  NoGradGuard guard;
  const Tensor<double> out = loss();
  const double v = out.item();
  if (!std::isfinite(v)) {
    const auto where = find_nonfinite(out);
    throw NumericError("grad_check: non-finite forward value at " + where.value_or(out.op()));
  }
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor<double>()>& loss,
                           const std::vector<std::pair<std::string, Tensor<double>>>& leaves,
                           const GradCheckOptions& options) {
  if (!(options.step >= 1e-6 && options.step <= 1e-4)) {
    throw std::invalid_argument("grad_check: step must lie in [1e-6, 1e-4]");
  }
  for (auto [name, leaf] : leaves) leaf.zero_grad();
  const Tensor<double> root = loss();
  if (!std::isfinite(root.item())) {
    const auto where = find_nonfinite(root);
    throw NumericError("grad_check: non-finite forward value at " + where.value_or(root.op()));
  }
  backward(root);
  const double base = evaluate(loss);

  GradCheckResult result;
  for (auto [name, leaf] : leaves) {
    const std::vector<double> analytic = leaf.grad().empty()
                                             ? std::vector<double>(static_cast<size_t>(leaf.numel()), 0.0)
                                             : std::vector<double>(leaf.grad().begin(), leaf.grad().end());
    const int64_t n = leaf.numel();
    const int64_t count = options.max_elements_per_leaf > 0 ? std::min(n, options.max_elements_per_leaf) : n;
    auto& values = leaf.mutable_values();
    for (int64_t j = 0; j < count; ++j) {
      const int64_t i = count == n ? j : (j * n) / count;
      const double saved = values[i];
      values[i] = saved + options.step;
      const double plus = evaluate(loss);
      values[i] = saved - options.step;
      const double minus = evaluate(loss);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.checked_elements;
      const double forward = (plus - base) / options.step;
      const double backward_diff = (base - minus) / options.step;
      auto rel = [](double x, double y) { return std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-8}); };
      if (err >= 1e-4 && rel(forward, backward_diff) > 1e-2 &&
          std::min(rel(a, forward), rel(a, backward_diff)) < 1e-3) {
        ++result.nonsmooth_elements;
        continue;
      }
      if (err > result.max_relative_error || result.worst_leaf.empty()) {
        if (err >= result.max_relative_error) {
          result.max_relative_error = err;
          result.worst_leaf = name + "[" + std::to_string(i) + "]";
          result.worst_analytic = a;
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace cmgan::ag
