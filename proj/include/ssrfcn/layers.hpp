#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ssrfcn/error.hpp"
#include "ssrfcn/tensor.hpp"

namespace ssrfcn {

/// Convolution weights in (kh, kw, cin, cout) order plus one bias per output
/// channel. The weight array reuses Tensor storage: n=kh, h=kw, w=cin, c=cout,
/// so weights.px(ky, kx, ci) is the contiguous run over output channels.
template <typename T>
struct ConvParams {
  Tensor<T> weights;
  std::vector<T> bias;
  int stride = 1;

  ConvParams() = default;
  ConvParams(int kh, int kw, int cin, int cout, int stride_)
      : weights(kh, kw, cin, cout), bias(static_cast<std::size_t>(cout), T(0)), stride(stride_) {
    if (stride_ != 1 && stride_ != 2) throw ConfigError("conv stride must be 1 or 2");
  }

  int kh() const { return weights.n; }
  int kw() const { return weights.h; }
  int cin() const { return weights.w; }
  int cout() const { return weights.c; }
};

template <typename T>
struct BatchNormParams {
  std::vector<T> gamma, beta, running_mean, running_var;
  T momentum = T(0.9);
  T epsilon = T(1e-5);

  BatchNormParams() = default;
  explicit BatchNormParams(int channels)
      : gamma(channels, T(1)),
        beta(channels, T(0)),
        running_mean(channels, T(0)),
        running_var(channels, T(1)) {}

  int channels() const { return static_cast<int>(gamma.size()); }
};

enum class BnMode { train, infer };

/// State retained by a train-mode batch-norm forward, consumed by backward.
template <typename T>
struct BatchNormCache {
  bool valid = false;
  Tensor<T> x_hat;
  std::vector<T> inv_std;
};

inline int conv_out_dim(int in, int stride) { return (in + stride - 1) / stride; }

/// "Same" zero padding: output is ceil(in/stride); the left/top side gets
/// floor(total/2) so even inputs at stride 2 pad only on the bottom/right.
inline int conv_pad_before(int in, int kernel, int stride) {
  const int out = conv_out_dim(in, stride);
  return std::max((out - 1) * stride + kernel - in, 0) / 2;
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& in, const ConvParams<T>& p) {
  const int kh = p.kh(), kw = p.kw(), cin = p.cin(), cout = p.cout(), s = p.stride;
  if (in.c != cin) {
    throw ConfigError("conv2d: input has " + std::to_string(in.c) +
                      " channels, kernel expects " + std::to_string(cin));
  }
  if (in.h < 1 || in.w < 1) throw ConfigError("conv2d: empty spatial dims");

  const int oh = conv_out_dim(in.h, s), ow = conv_out_dim(in.w, s);
  const int pad_top = conv_pad_before(in.h, kh, s);
  const int pad_left = conv_pad_before(in.w, kw, s);

  Tensor<T> out(in.n, oh, ow, cout);
  std::vector<T> acc(cout);
  for (int b = 0; b < in.n; ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        std::copy(p.bias.begin(), p.bias.end(), acc.begin());
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * s - pad_top + ky;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * s - pad_left + kx;
            if (ix < 0 || ix >= in.w) continue;
            const T* src = in.px(b, iy, ix);
            const T* wrow = p.weights.px(ky, kx, 0);
            T* a = acc.data();
            for (int ci = 0; ci < cin; ++ci) {
              const T v = src[ci];
              const T* wr = wrow + static_cast<std::size_t>(ci) * cout;
              for (int co = 0; co < cout; ++co) a[co] += v * wr[co];
            }
          }
        }
        std::copy(acc.begin(), acc.end(), out.px(b, oy, ox));
      }
    }
  }
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  std::vector<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& in, const ConvParams<T>& p,
                             const Tensor<T>& upstream) {
  const int kh = p.kh(), kw = p.kw(), cin = p.cin(), cout = p.cout(), s = p.stride;
  if (in.c != cin) throw ConfigError("conv2d_backward: input channel mismatch");
  const int oh = conv_out_dim(in.h, s), ow = conv_out_dim(in.w, s);
  if (upstream.n != in.n || upstream.h != oh || upstream.w != ow || upstream.c != cout) {
    throw ConfigError("conv2d_backward: upstream shape does not match forward output");
  }
  const int pad_top = conv_pad_before(in.h, kh, s);
  const int pad_left = conv_pad_before(in.w, kw, s);

  ConvGrads<T> g;
  g.input = Tensor<T>(in.n, in.h, in.w, in.c);
  g.weights = Tensor<T>(kh, kw, cin, cout);
  g.bias.assign(static_cast<std::size_t>(cout), T(0));

  // Weights transposed to (kh, kw, cout, cin) so the input-gradient inner loop
  // runs over contiguous memory with independent accumulators.
  Tensor<T> wt(kh, kw, cout, cin);
  for (int ky = 0; ky < kh; ++ky)
    for (int kx = 0; kx < kw; ++kx)
      for (int ci = 0; ci < cin; ++ci)
        for (int co = 0; co < cout; ++co)
          wt.at(ky, kx, co, ci) = p.weights.at(ky, kx, ci, co);

  for (int b = 0; b < in.n; ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const T* up = upstream.px(b, oy, ox);
        for (int co = 0; co < cout; ++co) g.bias[co] += up[co];
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * s - pad_top + ky;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * s - pad_left + kx;
            if (ix < 0 || ix >= in.w) continue;
            const T* src = in.px(b, iy, ix);
            T* gw = g.weights.px(ky, kx, 0);
            for (int ci = 0; ci < cin; ++ci) {
              const T v = src[ci];
              T* gwr = gw + static_cast<std::size_t>(ci) * cout;
              for (int co = 0; co < cout; ++co) gwr[co] += v * up[co];
            }
            T* gin = g.input.px(b, iy, ix);
            const T* wrow = wt.px(ky, kx, 0);
            for (int co = 0; co < cout; ++co) {
              const T u = up[co];
              const T* wr = wrow + static_cast<std::size_t>(co) * cin;
              for (int ci = 0; ci < cin; ++ci) gin[ci] += u * wr[ci];
            }
          }
        }
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> batchnorm_infer(const Tensor<T>& in, const BatchNormParams<T>& p) {
  if (in.c != p.channels()) throw ConfigError("batchnorm: channel count mismatch");
  const int c = in.c;
  std::vector<T> scale(c), shift(c);
  for (int ch = 0; ch < c; ++ch) {
    const T inv = T(1) / std::sqrt(p.running_var[ch] + p.epsilon);
    scale[ch] = p.gamma[ch] * inv;
    shift[ch] = p.beta[ch] - p.running_mean[ch] * scale[ch];
  }
  Tensor<T> out(in.n, in.h, in.w, in.c);
  const std::size_t pixels = in.size() / c;
  for (std::size_t i = 0; i < pixels; ++i) {
    const T* src = in.data.data() + i * c;
    T* dst = out.data.data() + i * c;
    for (int ch = 0; ch < c; ++ch) dst[ch] = src[ch] * scale[ch] + shift[ch];
  }
  return out;
}

/// Train mode standardizes with batch statistics over (n, h, w) and updates
/// the running stats in place: running <- momentum*running + (1-momentum)*batch.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& in, BatchNormParams<T>& p, BnMode mode,
                            BatchNormCache<T>* cache = nullptr) {
  if (mode == BnMode::infer) return batchnorm_infer(in, p);
  if (in.c != p.channels()) throw ConfigError("batchnorm: channel count mismatch");
  const int c = in.c;
  const std::size_t count = in.size() / c;  // samples per channel
  if (count < 2) {
    throw ConfigError("batchnorm: degenerate batch, train mode needs at least 2 values per channel");
  }

  std::vector<T> mean(c, T(0)), var(c, T(0));
  const std::size_t pixels = count;
  for (std::size_t i = 0; i < pixels; ++i) {
    const T* src = in.data.data() + i * c;
    for (int ch = 0; ch < c; ++ch) mean[ch] += src[ch];
  }
  const T inv_count = T(1) / static_cast<T>(count);
  for (int ch = 0; ch < c; ++ch) mean[ch] *= inv_count;
  for (std::size_t i = 0; i < pixels; ++i) {
    const T* src = in.data.data() + i * c;
    for (int ch = 0; ch < c; ++ch) {
      const T d = src[ch] - mean[ch];
      var[ch] += d * d;
    }
  }
  for (int ch = 0; ch < c; ++ch) var[ch] *= inv_count;

  std::vector<T> inv_std(c);
  for (int ch = 0; ch < c; ++ch) inv_std[ch] = T(1) / std::sqrt(var[ch] + p.epsilon);

  Tensor<T> out(in.n, in.h, in.w, in.c);
  Tensor<T> x_hat(in.n, in.h, in.w, in.c);
  for (std::size_t i = 0; i < pixels; ++i) {
    const T* src = in.data.data() + i * c;
    T* xh = x_hat.data.data() + i * c;
    T* dst = out.data.data() + i * c;
    for (int ch = 0; ch < c; ++ch) {
      xh[ch] = (src[ch] - mean[ch]) * inv_std[ch];
      dst[ch] = p.gamma[ch] * xh[ch] + p.beta[ch];
    }
  }

  for (int ch = 0; ch < c; ++ch) {
    p.running_mean[ch] = p.momentum * p.running_mean[ch] + (T(1) - p.momentum) * mean[ch];
    p.running_var[ch] = p.momentum * p.running_var[ch] + (T(1) - p.momentum) * var[ch];
  }

  if (cache) {
    cache->valid = true;
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
struct BnGrads {
  Tensor<T> input;
  std::vector<T> gamma, beta;
};

template <typename T>
BnGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const BatchNormParams<T>& p,
                              const Tensor<T>& upstream) {
  if (!cache.valid) {
    throw UsageError("batchnorm_backward requires the cache of a train-mode forward");
  }
  if (!upstream.same_shape(cache.x_hat)) {
    throw ConfigError("batchnorm_backward: upstream shape mismatch");
  }
  const int c = upstream.c;
  const std::size_t pixels = upstream.size() / c;
  const T inv_count = T(1) / static_cast<T>(pixels);

  std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
  for (std::size_t i = 0; i < pixels; ++i) {
    const T* dy = upstream.data.data() + i * c;
    const T* xh = cache.x_hat.data.data() + i * c;
    for (int ch = 0; ch < c; ++ch) {
      sum_dy[ch] += dy[ch];
      sum_dy_xhat[ch] += dy[ch] * xh[ch];
    }
  }

  BnGrads<T> g;
  g.gamma = sum_dy_xhat;
  g.beta = sum_dy;
  g.input = Tensor<T>(upstream.n, upstream.h, upstream.w, upstream.c);
  std::vector<T> k(c), mean_dy(c), mean_dy_xhat(c);
  for (int ch = 0; ch < c; ++ch) {
    k[ch] = p.gamma[ch] * cache.inv_std[ch];
    mean_dy[ch] = sum_dy[ch] * inv_count;
    mean_dy_xhat[ch] = sum_dy_xhat[ch] * inv_count;
  }
  for (std::size_t i = 0; i < pixels; ++i) {
    const T* dy = upstream.data.data() + i * c;
    const T* xh = cache.x_hat.data.data() + i * c;
    T* dx = g.input.data.data() + i * c;
    for (int ch = 0; ch < c; ++ch) {
      dx[ch] = k[ch] * (dy[ch] - mean_dy[ch] - xh[ch] * mean_dy_xhat[ch]);
    }
  }
  return g;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& in) {
  Tensor<T> out(in.n, in.h, in.w, in.c);
  for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = std::max(in.data[i], T(0));
  return out;
}

/// Passes upstream through where the forward input was strictly positive.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& forward_input, const Tensor<T>& upstream) {
  if (!forward_input.same_shape(upstream)) {
    throw ConfigError("relu_backward: upstream shape mismatch");
  }
  Tensor<T> out(upstream.n, upstream.h, upstream.w, upstream.c);
  for (std::size_t i = 0; i < upstream.size(); ++i) {
    out.data[i] = forward_input.data[i] > T(0) ? upstream.data[i] : T(0);
  }
  return out;
}

/// Mean over the spatial grid of a single-channel score map, one scalar per
/// sample.
template <typename T>
std::vector<T> global_average_pool(const Tensor<T>& score_map) {
  if (score_map.c != 1) throw ConfigError("global_average_pool: expected a single channel");
  if (score_map.h < 1 || score_map.w < 1) {
    throw ConfigError("global_average_pool: empty spatial dims");
  }
  const std::size_t cells = static_cast<std::size_t>(score_map.h) * score_map.w;
  std::vector<T> out(score_map.n);
  for (int b = 0; b < score_map.n; ++b) {
    T sum = T(0);
    const T* src = score_map.data.data() + b * cells;
    for (std::size_t i = 0; i < cells; ++i) sum += src[i];
    out[b] = sum / static_cast<T>(cells);
  }
  return out;
}

template <typename T>
Tensor<T> global_average_pool_backward(const std::vector<T>& upstream, int h, int w) {
  if (h < 1 || w < 1) throw ConfigError("global_average_pool_backward: empty spatial dims");
  const int n = static_cast<int>(upstream.size());
  Tensor<T> out(n, h, w, 1);
  const T inv = T(1) / static_cast<T>(static_cast<std::size_t>(h) * w);
  for (int b = 0; b < n; ++b) {
    const T v = upstream[b] * inv;
    T* dst = out.data.data() + static_cast<std::size_t>(b) * h * w;
    for (int i = 0; i < h * w; ++i) dst[i] = v;
  }
  return out;
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
struct BceResult {
  T loss;
  T grad_logit;
};

/// Binary cross entropy fused with the sigmoid on the pooled logit. The fused
/// form max(s,0) - s*y + log1p(exp(-|s|)) never evaluates log(0); the gradient
/// is sigmoid(s) - y.
template <typename T>
BceResult<T> sigmoid_bce_loss(T logit, int label) {
  if (label != 0 && label != 1) throw ConfigError("sigmoid_bce_loss: label must be 0 or 1");
  const T y = static_cast<T>(label);
  const T loss = std::max(logit, T(0)) - logit * y + std::log1p(std::exp(-std::abs(logit)));
  return {loss, sigmoid(logit) - y};
}

}  // namespace ssrfcn
