#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "segkit/errors.hpp"

namespace segkit {

// Bias-corrected Adam over a flat list of parameter arrays.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m, v;
  std::int64_t t = 0;
  T beta1 = T{0.9};
  T beta2 = T{0.999};
  T eps = T{1e-8};

  void init(const std::vector<std::size_t>& sizes) {
    m.clear();
    v.clear();
    for (std::size_t s : sizes) {
      m.emplace_back(s, T{0});
      v.emplace_back(s, T{0});
    }
    t = 0;
  }
};

template <typename T>
void adam_step(std::vector<std::vector<T>*> params, std::vector<const std::vector<T>*> grads,
               AdamState<T>& state, T lr) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw shape_error("adam_step: parameter/gradient/state count mismatch");
  }
  ++state.t;
  const T bc1 = T{1} - static_cast<T>(std::pow(state.beta1, static_cast<double>(state.t)));
  const T bc2 = T{1} - static_cast<T>(std::pow(state.beta2, static_cast<double>(state.t)));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    const auto& gr = *grads[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (p.size() != gr.size() || p.size() != m.size()) {
      throw shape_error("adam_step: parameter shape mismatch");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (T{1} - state.beta1) * gr[i];
      v[i] = state.beta2 * v[i] + (T{1} - state.beta2) * gr[i] * gr[i];
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace segkit
