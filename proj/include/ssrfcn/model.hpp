#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ssrfcn/adam.hpp"
#include "ssrfcn/error.hpp"
#include "ssrfcn/layers.hpp"
#include "ssrfcn/rng.hpp"
#include "ssrfcn/tensor.hpp"

namespace ssrfcn {

/// Layer stack description. Every layer is a 3x3 "same" convolution; all but
/// the last are followed by batch norm and ReLU, the last one emits the
/// single-channel score map directly. The default stack has four stride-2
/// blocks plus the stride-1 head, so the score map side is ceil(input/16).
struct FcnConfig {
  int in_channels = 3;
  std::vector<int> channels = {64, 128, 256, 512, 1};
  std::vector<int> strides = {2, 2, 2, 2, 1};
  int kernel = 3;
  double init_stddev = 0.02;

  int layer_count() const { return static_cast<int>(channels.size()); }

  /// Product of the strides: how many input pixels one score-map cell spans.
  int downsample_factor() const {
    int f = 1;
    for (int s : strides) f *= s;
    return f;
  }

  void validate() const {
    if (channels.empty()) throw ConfigError("model config: no layers");
    if (channels.size() != strides.size()) {
      throw ConfigError("model config: channels and strides must have equal length");
    }
    if (channels.back() != 1) {
      throw ConfigError("model config: final layer must emit one channel");
    }
    if (in_channels < 1) throw ConfigError("model config: in_channels must be positive");
    if (kernel < 1 || kernel % 2 == 0) {
      throw ConfigError("model config: kernel must be odd and positive");
    }
    for (std::size_t i = 0; i + 1 < channels.size(); ++i) {
      if (channels[i] < 1) throw ConfigError("model config: channel counts must be positive");
    }
    for (int s : strides) {
      if (s != 1 && s != 2) throw ConfigError("model config: strides must be 1 or 2");
    }
  }

  /// Spatial side of the score map for a given input side.
  int score_map_dim(int in_dim) const {
    int d = in_dim;
    for (int s : strides) d = conv_out_dim(d, s);
    return d;
  }
};

template <typename T>
struct FcnModel {
  FcnConfig config;
  std::vector<ConvParams<T>> conv;      // one per layer
  std::vector<BatchNormParams<T>> bn;   // one per layer except the last
};

/// Fresh model with N(0, stddev^2) conv weights, zero biases and identity
/// batch-norm affine parameters. The same seed always yields the same model.
template <typename T>
FcnModel<T> init_model(const FcnConfig& config, std::uint64_t seed) {
  config.validate();
  FcnModel<T> model;
  model.config = config;
  Rng rng(seed);
  int cin = config.in_channels;
  for (int i = 0; i < config.layer_count(); ++i) {
    const int cout = config.channels[i];
    ConvParams<T> layer(config.kernel, config.kernel, cin, cout, config.strides[i]);
    for (T& w : layer.weights.data) {
      w = static_cast<T>(rng.normal(0.0, config.init_stddev));
    }
    model.conv.push_back(std::move(layer));
    if (i + 1 < config.layer_count()) model.bn.emplace_back(cout);
    cin = cout;
  }
  return model;
}

struct ParamCounts {
  std::size_t conv = 0;       // weights + biases of every conv layer
  std::size_t bn_affine = 0;  // gamma + beta (running stats excluded)
  std::size_t total() const { return conv + bn_affine; }
};

template <typename T>
ParamCounts count_params(const FcnModel<T>& model) {
  ParamCounts counts;
  for (const ConvParams<T>& layer : model.conv) {
    counts.conv += layer.weights.size() + layer.bias.size();
  }
  for (const BatchNormParams<T>& layer : model.bn) {
    counts.bn_affine += layer.gamma.size() + layer.beta.size();
  }
  return counts;
}

/// Activations retained by a train-mode forward for the backward pass.
template <typename T>
struct ForwardCache {
  bool valid = false;
  std::vector<Tensor<T>> conv_input;        // input to each conv layer
  std::vector<Tensor<T>> bn_output;         // pre-ReLU activation per hidden layer
  std::vector<BatchNormCache<T>> bn_cache;  // per hidden layer
};

template <typename T>
void validate_model_input(const FcnModel<T>& model, const Tensor<T>& input) {
  if (input.n < 1) throw InputError("model forward: empty batch");
  const int f = model.config.downsample_factor();
  if (input.h < f || input.w < f) {
    throw InputError("model forward: input is " + std::to_string(input.h) + "x" +
                     std::to_string(input.w) + ", need at least " + std::to_string(f) +
                     " pixels per axis for a non-padded score-map cell");
  }
  if (input.c != model.config.in_channels) {
    throw InputError("model forward: input has " + std::to_string(input.c) +
                     " channels, model expects " + std::to_string(model.config.in_channels));
  }
}

/// Inference forward: batch norm uses running statistics, nothing is retained.
template <typename T>
Tensor<T> model_infer(const FcnModel<T>& model, const Tensor<T>& input) {
  validate_model_input(model, input);
  const int layers = model.config.layer_count();
  Tensor<T> x = conv2d_forward(input, model.conv[0]);
  for (int i = 0; i < layers - 1; ++i) {
    x = relu(batchnorm_infer(x, model.bn[i]));
    x = conv2d_forward(x, model.conv[i + 1]);
  }
  return x;
}

/// Training forward: batch norm standardizes with batch statistics and
/// updates the running stats. Pass a cache to enable model_backward.
template <typename T>
Tensor<T> model_forward(FcnModel<T>& model, const Tensor<T>& input, BnMode mode,
                        ForwardCache<T>* cache = nullptr) {
  if (mode == BnMode::infer) {
    if (cache) throw UsageError("model_forward: a cache requires train mode");
    return model_infer(model, input);
  }
  validate_model_input(model, input);
  const int layers = model.config.layer_count();
  if (cache) {
    cache->valid = false;
    cache->conv_input.clear();
    cache->bn_output.clear();
    cache->bn_cache.clear();
  }

  Tensor<T> x = input;
  for (int i = 0; i < layers; ++i) {
    Tensor<T> z;
    if (cache) {
      cache->conv_input.push_back(std::move(x));
      z = conv2d_forward(cache->conv_input.back(), model.conv[i]);
    } else {
      z = conv2d_forward(x, model.conv[i]);
    }
    if (i + 1 == layers) {
      x = std::move(z);
      break;
    }
    BatchNormCache<T> bnc;
    Tensor<T> pre_relu =
        batchnorm_forward(z, model.bn[i], BnMode::train, cache ? &bnc : nullptr);
    x = relu(pre_relu);
    if (cache) {
      cache->bn_output.push_back(std::move(pre_relu));
      cache->bn_cache.push_back(std::move(bnc));
    }
  }
  if (cache) cache->valid = true;
  return x;
}

/// Parameter gradients in layer order; shapes mirror the model's parameters.
template <typename T>
struct GradientSet {
  std::vector<Tensor<T>> conv_weight;
  std::vector<std::vector<T>> conv_bias;
  std::vector<std::vector<T>> bn_gamma;
  std::vector<std::vector<T>> bn_beta;

  bool all_finite() const {
    for (const Tensor<T>& t : conv_weight) {
      if (!t.all_finite()) return false;
    }
    auto vecs_finite = [](const std::vector<std::vector<T>>& vs) {
      for (const std::vector<T>& v : vs) {
        for (const T x : v) {
          if (!std::isfinite(static_cast<double>(x))) return false;
        }
      }
      return true;
    };
    return vecs_finite(conv_bias) && vecs_finite(bn_gamma) && vecs_finite(bn_beta);
  }
};

/// Backpropagates an upstream score-map gradient through the whole stack.
template <typename T>
GradientSet<T> model_backward(const FcnModel<T>& model, const ForwardCache<T>& cache,
                              const Tensor<T>& upstream_score_map) {
  if (!cache.valid) throw UsageError("model_backward requires a valid forward cache");
  const int layers = model.config.layer_count();
  if (static_cast<int>(cache.conv_input.size()) != layers ||
      static_cast<int>(cache.bn_output.size()) != layers - 1) {
    throw UsageError("model_backward: cache does not match the model");
  }

  GradientSet<T> g;
  g.conv_weight.resize(layers);
  g.conv_bias.resize(layers);
  g.bn_gamma.resize(layers - 1);
  g.bn_beta.resize(layers - 1);

  Tensor<T> up = upstream_score_map;
  for (int i = layers - 1; i >= 0; --i) {
    if (i < layers - 1) {
      up = relu_backward(cache.bn_output[i], up);
      BnGrads<T> bng = batchnorm_backward(cache.bn_cache[i], model.bn[i], up);
      g.bn_gamma[i] = std::move(bng.gamma);
      g.bn_beta[i] = std::move(bng.beta);
      up = std::move(bng.input);
    }
    ConvGrads<T> cg = conv2d_backward(cache.conv_input[i], model.conv[i], up);
    g.conv_weight[i] = std::move(cg.weights);
    g.conv_bias[i] = std::move(cg.bias);
    up = std::move(cg.input);
  }
  return g;
}

/// Spoofness of each sample: sigmoid of the score-map mean. Values near 1
/// mean spoof, near 0 mean live.
template <typename T>
std::vector<T> spoofness_scores(const Tensor<T>& score_map) {
  std::vector<T> s = global_average_pool(score_map);
  for (T& v : s) v = sigmoid(v);
  return s;
}

/// Canonical name of a layer's parameter block, e.g. "conv1.weight",
/// "bn2.gamma". Layer numbering is 1-based.
inline std::string param_name(const char* block, int layer_index, const char* field) {
  return std::string(block) + std::to_string(layer_index + 1) + "." + field;
}

/// Views over all trainable parameters paired with their gradients, in the
/// canonical order conv1, bn1, conv2, ... Used to drive the optimizer.
template <typename T>
std::vector<ParamView<T>> trainable_params(FcnModel<T>& model, const GradientSet<T>& grads) {
  const int layers = model.config.layer_count();
  if (static_cast<int>(grads.conv_weight.size()) != layers ||
      static_cast<int>(grads.bn_gamma.size()) != layers - 1) {
    throw ConfigError("trainable_params: gradient set does not match the model");
  }
  std::vector<ParamView<T>> views;
  for (int i = 0; i < layers; ++i) {
    if (!grads.conv_weight[i].same_shape(model.conv[i].weights) ||
        grads.conv_bias[i].size() != model.conv[i].bias.size()) {
      throw ConfigError("trainable_params: conv gradient shape mismatch at layer " +
                        std::to_string(i + 1));
    }
    views.push_back({param_name("conv", i, "weight"), model.conv[i].weights.data.data(),
                     grads.conv_weight[i].data.data(), model.conv[i].weights.size()});
    views.push_back({param_name("conv", i, "bias"), model.conv[i].bias.data(),
                     grads.conv_bias[i].data(), model.conv[i].bias.size()});
    if (i < layers - 1) {
      if (grads.bn_gamma[i].size() != model.bn[i].gamma.size() ||
          grads.bn_beta[i].size() != model.bn[i].beta.size()) {
        throw ConfigError("trainable_params: batch-norm gradient shape mismatch at layer " +
                          std::to_string(i + 1));
      }
      views.push_back({param_name("bn", i, "gamma"), model.bn[i].gamma.data(),
                       grads.bn_gamma[i].data(), model.bn[i].gamma.size()});
      views.push_back({param_name("bn", i, "beta"), model.bn[i].beta.data(),
                       grads.bn_beta[i].data(), model.bn[i].beta.size()});
    }
  }
  return views;
}

}  // namespace ssrfcn
