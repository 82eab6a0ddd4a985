#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "talign/tensor.hpp"

namespace talign::ad {

// Worst coordinate found by finite_diff_check, for diagnostics.
struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t param_index = 0;
  std::size_t coord_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central-difference validation of reverse-mode gradients, double precision
// only. `f` must rebuild its graph from the current parameter values on every
// call and return a scalar. Returns the maximum relative error over every
// coordinate of every parameter, with the relative denominator floored at
// 1e-8 so near-zero gradient pairs compare absolutely.
inline double finite_diff_check(const std::function<Tensor<double>()>& f,
                                std::span<Tensor<double>> params,
                                double step = 1e-4,
                                GradCheckReport* report = nullptr) {
  if (step <= 0.0) {
    throw std::invalid_argument("finite_diff_check: step must be positive");
  }
  for (auto& p : params) p.zero_grad();
  backward(f());

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    if (p.grad().empty()) {
      analytic.emplace_back(p.size(), 0.0);
    } else {
      analytic.push_back(p.grad());
    }
  }

  GradCheckReport worst;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& vals = params[i].mutable_values();
    for (std::size_t k = 0; k < vals.size(); ++k) {
      const double saved = vals[k];
      vals[k] = saved + step;
      const double up = f().item();
      vals[k] = saved - step;
      const double down = f().item();
      vals[k] = saved;

      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[i][k];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > worst.max_rel_error) {
        worst = GradCheckReport{rel, i, k, a, numeric};
      }
    }
  }
  if (report) *report = worst;
  return worst.max_rel_error;
}

}  // namespace talign::ad
