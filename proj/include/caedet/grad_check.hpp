#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <vector>

#include "caedet/layers.hpp"
#include "caedet/tensor.hpp"

namespace caedet {

/// Scalar objective on a network output, with its analytic gradient.
struct ScalarLoss {
  std::function<double(const Tensor<double>&)> value;
  std::function<Tensor<double>(const Tensor<double>&)> grad;
};

template <typename S>
concept DifferentiableStack = requires(S s, const Tensor<double>& x) {
  { s.forward(x) } -> std::convertible_to<Tensor<double>>;
  { s.backward(x) } -> std::convertible_to<Tensor<double>>;
  s.zero_grads();
  { s.param_refs() } -> std::convertible_to<std::vector<ParamRef<double>>>;
};

struct GradCheckReport {
  double max_relative_error = 0;
  double max_param_error = 0;
  double max_input_error = 0;
  std::size_t param_elements = 0;
  std::size_t input_elements = 0;
};

/// Elements whose gradient is tiny compared to the largest gradient in the
/// check are compared against this fraction of that largest magnitude, which
/// keeps finite-difference roundoff from dominating near-zero components.
inline constexpr double kGradCheckScaleFloor = 1e-2;

/// |a - n| / max(|a|, |n|, floor), the per-element error used by grad_check.
inline double gradient_relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor, 1e-300});
  return std::abs(analytic - numeric) / denom;
}

namespace detail {

inline double max_magnitude(const Tensor<double>& t) {
  double scale = 0;
  for (double v : t.data()) scale = std::max(scale, std::abs(v));
  return scale;
}

template <DifferentiableStack S>
double evaluate(S& stack, const Tensor<double>& x, const ScalarLoss& loss) {
  return loss.value(stack.forward(x));
}

}  // namespace detail

/// Compares analytic gradients of loss(stack(input)) against central finite
/// differences for every parameter element and every input element.
template <DifferentiableStack S>
GradCheckReport grad_check(S& stack, const Tensor<double>& input, const ScalarLoss& loss,
                           double eps = 1e-5) {
  stack.zero_grads();
  const Tensor<double> out = stack.forward(input);
  const Tensor<double> input_grad = stack.backward(loss.grad(out));

  double scale = detail::max_magnitude(input_grad);
  for (ParamRef<double> ref : stack.param_refs()) {
    scale = std::max(scale, detail::max_magnitude(*ref.grad));
  }
  const double floor = std::max(kGradCheckScaleFloor * scale, 1e-12);

  GradCheckReport report;
  for (ParamRef<double> ref : stack.param_refs()) {
    const Tensor<double> analytic = *ref.grad;
    for (std::size_t i = 0; i < ref.value->size(); ++i) {
      double& theta = (*ref.value)[i];
      const double saved = theta;
      theta = saved + eps;
      const double up = detail::evaluate(stack, input, loss);
      theta = saved - eps;
      const double down = detail::evaluate(stack, input, loss);
      theta = saved;
      const double numeric = (up - down) / (2 * eps);
      report.max_param_error =
          std::max(report.max_param_error, gradient_relative_error(analytic[i], numeric, floor));
      ++report.param_elements;
    }
  }

  Tensor<double> x = input;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = detail::evaluate(stack, x, loss);
    x[i] = saved - eps;
    const double down = detail::evaluate(stack, x, loss);
    x[i] = saved;
    const double numeric = (up - down) / (2 * eps);
    report.max_input_error =
        std::max(report.max_input_error, gradient_relative_error(input_grad[i], numeric, floor));
    ++report.input_elements;
  }
  report.max_relative_error = std::max(report.max_param_error, report.max_input_error);
  return report;
}

}  // namespace caedet
