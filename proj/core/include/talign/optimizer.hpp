#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "talign/tensor.hpp"

namespace talign::ad {

// Adam with bias correction. One state object per model; moment buffers are
// allocated lazily on the first update and must keep matching the parameter
// list from then on.
template <typename T>
struct AdamState {
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
  long step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

// One Adam step over params using their accumulated gradients. An
// empty gradient buffer counts as all-zero (the parameter never received a
// contribution), which leaves the parameter bitwise unchanged. Any non-finite
// gradient aborts the step before any parameter is touched.
template <typename T>
void adam_update(std::span<Tensor<T>> params, AdamState<T>& state, T lr) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size(), T(0));
      state.v[i].assign(params[i].size(), T(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_update: parameter list",
                     "[" + std::to_string(params.size()) + "]",
                     "[" + std::to_string(state.m.size()) + "]");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].size()) {
      throw ShapeError("adam_update: parameter " + std::to_string(i),
                       "[" + std::to_string(params[i].size()) + "]",
                       "[" + std::to_string(state.m[i].size()) + "]");
    }
    const auto& g = params[i].grad();
    for (const T gv : g) {
      if (!std::isfinite(static_cast<double>(gv))) {
        throw NumericError("adam_update: non-finite gradient in parameter " +
                           std::to_string(i));
      }
    }
  }

  state.step += 1;
  // Corrections in double so float runs stay deterministic across libm
  // variations in pow(float).
  const double c1 = 1.0 - std::pow(static_cast<double>(state.beta1), state.step);
  const double c2 = 1.0 - std::pow(static_cast<double>(state.beta2), state.step);
  const T inv_c1 = static_cast<T>(1.0 / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = params[i].grad();
    if (g.empty()) {
      // No gradient ever reached this parameter: moments still decay.
      for (std::size_t k = 0; k < state.m[i].size(); ++k) {
        state.m[i][k] *= state.beta1;
        state.v[i][k] *= state.beta2;
      }
      auto& vals = params[i].mutable_values();
      for (std::size_t k = 0; k < vals.size(); ++k) {
        const T mhat = state.m[i][k] * inv_c1;
        const T vhat = state.v[i][k] * inv_c2;
        vals[k] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
      }
      continue;
    }
    auto& vals = params[i].mutable_values();
    for (std::size_t k = 0; k < vals.size(); ++k) {
      state.m[i][k] = state.beta1 * state.m[i][k] + (T(1) - state.beta1) * g[k];
      state.v[i][k] = state.beta2 * state.v[i][k] + (T(1) - state.beta2) * g[k] * g[k];
      const T mhat = state.m[i][k] * inv_c1;
      const T vhat = state.v[i][k] * inv_c2;
      vals[k] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

template <typename T>
void zero_gradients(std::span<Tensor<T>> params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace talign::ad
