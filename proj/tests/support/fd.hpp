#pragma once

// Central finite differences against the reverse-mode gradient.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "langgrasp/ad/tensor.hpp"

namespace testing_support {

struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
};

// f maps a requires-grad leaf to a scalar tensor. The relative error uses
// max(|analytic|, |numeric|, floor) as the denominator.
inline GradCheck check_gradient(const std::function<langgrasp::ad::Tensor(const langgrasp::ad::Tensor&)>& f,
                                const langgrasp::ad::Shape& shape, std::vector<double> x0, double h = 1e-5,
                                double floor = 1e-6) {
  using langgrasp::ad::Tensor;
  Tensor x = Tensor::from(shape, x0, true);
  langgrasp::ad::backward(f(x));
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());
  GradCheck out;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    auto eval = [&](double delta) {
      langgrasp::ad::NoGradGuard g;
      std::vector<double> xp = x0;
      xp[i] += delta;
      return f(Tensor::from(shape, xp)).item();
    };
    const double numeric = (eval(h) - eval(-h)) / (2 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    if (std::getenv("LANGGRASP_FD_TRACE") && std::abs(analytic[i] - numeric) / denom > 1e-4)
      std::fprintf(stderr, "  fd[%zu] analytic %.9g numeric %.9g\n", i, analytic[i], numeric);
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic[i] - numeric) / denom);
    out.max_abs_grad = std::max(out.max_abs_grad, std::abs(analytic[i]));
  }
  return out;
}

}  // namespace testing_support
