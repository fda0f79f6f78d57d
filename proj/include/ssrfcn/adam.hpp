#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "ssrfcn/error.hpp"

namespace ssrfcn {

/// Non-owning handle to one named parameter block and its gradient.
template <typename T>
struct ParamView {
  std::string name;
  T* value = nullptr;
  const T* grad = nullptr;
  std::size_t size = 0;
};

template <typename T>
struct AdamState {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
  long long step_count = 0;
  std::map<std::string, std::vector<T>> m, v;
};

/// One Adam update across every view. Moment buffers are created on first
/// sight of a parameter name; a later size mismatch for the same name is a
/// ConfigError. Non-finite gradients abort the run rather than silently
/// poisoning the moments.
template <typename T>
void adam_step(AdamState<T>& state, const std::vector<ParamView<T>>& params) {
  for (const ParamView<T>& p : params) {
    for (std::size_t i = 0; i < p.size; ++i) {
      if (!std::isfinite(p.grad[i])) {
        throw DivergenceError("non-finite gradient in parameter '" + p.name + "'");
      }
    }
  }

  state.step_count += 1;
  const T t = static_cast<T>(state.step_count);
  const T bc1 = T(1) - std::pow(state.beta1, t);
  const T bc2 = T(1) - std::pow(state.beta2, t);

  for (const ParamView<T>& p : params) {
    std::vector<T>& m = state.m[p.name];
    std::vector<T>& v = state.v[p.name];
    if (m.empty() && p.size > 0) {
      m.assign(p.size, T(0));
      v.assign(p.size, T(0));
    }
    if (m.size() != p.size || v.size() != p.size) {
      throw ConfigError("adam_step: moment size mismatch for parameter '" + p.name + "'");
    }
    for (std::size_t i = 0; i < p.size; ++i) {
      const T g = p.grad[i];
      m[i] = state.beta1 * m[i] + (T(1) - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (T(1) - state.beta2) * g * g;
      const T m_hat = m[i] / bc1;
      const T v_hat = v[i] / bc2;
      p.value[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace ssrfcn
