#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "ssrfcn/error.hpp"

namespace ssrfcn {

/// Dense rank-4 array, row-major (n, h, w, c). Activations and gradients are
/// stored this way throughout; the channel index is the fastest-moving one,
/// which is what the convolution inner loops rely on.
template <typename T>
struct Tensor {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<T> data;

  Tensor() = default;

  Tensor(int n_, int h_, int w_, int c_, T fill = T(0)) : n(n_), h(h_), w(w_), c(c_) {
    if (n_ < 0 || h_ < 0 || w_ < 0 || c_ < 0) {
      throw ConfigError("tensor dimensions must be non-negative");
    }
    data.assign(static_cast<std::size_t>(n_) * h_ * w_ * c_, fill);
  }

  std::size_t size() const { return data.size(); }

  T* px(int b, int y, int x) {
    return data.data() + ((static_cast<std::size_t>(b) * h + y) * w + x) * c;
  }
  const T* px(int b, int y, int x) const {
    return data.data() + ((static_cast<std::size_t>(b) * h + y) * w + x) * c;
  }

  T& at(int b, int y, int x, int ch) { return px(b, y, x)[ch]; }
  const T& at(int b, int y, int x, int ch) const { return px(b, y, x)[ch]; }

  bool same_shape(const Tensor& o) const {
    return n == o.n && h == o.h && w == o.w && c == o.c;
  }

  void fill(T v) { data.assign(data.size(), v); }

  bool all_finite() const {
    for (const T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }
};

}  // namespace ssrfcn
