#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ssrfcn/adam.hpp"
#include "ssrfcn/dataset.hpp"
#include "ssrfcn/error.hpp"
#include "ssrfcn/model.hpp"
#include "ssrfcn/region.hpp"
#include "ssrfcn/rng.hpp"
#include "ssrfcn/tensor.hpp"

namespace ssrfcn {

struct EpochReport {
  int stage = 1;
  int epoch = 0;
  double mean_loss = 0.0;
  double accuracy = 0.0;       // at spoofness threshold 0.5
  double wall_time_sec = 0.0;  // 0 when wall-time recording is off
};

/// Passed to the batch probe test hook before each optimizer step.
struct BatchInfo {
  int stage = 1;
  int epoch = 0;
  int batch_index = 0;
  int height = 0, width = 0;
  std::size_t sample_count = 0;
  bool full_image = false;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 128;
  int epochs = 20;
  std::uint64_t seed = 0;
  double flip_probability = 0.5;

  // Stage II
  RegionStrategy strategy = RegionStrategy::self_supervised;
  int min_region = 64;
  int max_region = 256;
  int regions_per_spoof_image = 1;  // regions drawn per image per epoch (both classes)
  double tau = 0.5;                 // hard-gate threshold for region mining
  bool freeze_masks = false;        // mine masks once at epoch 0 instead of every epoch
  double full_image_mix = 0.0;      // fraction of Stage-II entries trained as full images

  // Hooks and determinism
  std::function<bool(const EpochReport&)> on_epoch;  // return false to stop early
  std::function<void(const BatchInfo&)> batch_probe;
  bool record_wall_time = true;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train config: epochs must be >= 1");
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
      throw ConfigError("train config: flip_probability must lie in [0,1]");
    }
    if (min_region < 1 || max_region < min_region) {
      throw ConfigError("train config: need 1 <= min_region <= max_region");
    }
    if (regions_per_spoof_image < 1) {
      throw ConfigError("train config: regions_per_spoof_image must be >= 1");
    }
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("train config: tau must lie in [0,1]");
    if (!(full_image_mix >= 0.0 && full_image_mix <= 1.0)) {
      throw ConfigError("train config: full_image_mix must lie in [0,1]");
    }
    if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be > 0");
  }
};

/// Deterministic Fisher-Yates shuffle driven by our own Rng.
template <typename V>
void shuffle_vector(std::vector<V>& values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_index(i));
    std::swap(values[i - 1], values[j]);
  }
}

/// Shuffled index chunks of at most batch_size entries; every entry appears
/// exactly once.
inline std::vector<std::vector<int>> make_batches(const std::vector<int>& entries, Rng& rng,
                                                  int batch_size) {
  if (batch_size < 1) throw ConfigError("make_batches: batch_size must be >= 1");
  std::vector<int> shuffled = entries;
  shuffle_vector(shuffled, rng);
  std::vector<std::vector<int>> batches;
  for (std::size_t start = 0; start < shuffled.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(shuffled.size(), start + batch_size);
    batches.emplace_back(shuffled.begin() + start, shuffled.begin() + stop);
  }
  return batches;
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& t) {
  Tensor<T> out(t.n, t.h, t.w, t.c);
  for (int b = 0; b < t.n; ++b) {
    for (int y = 0; y < t.h; ++y) {
      for (int x = 0; x < t.w; ++x) {
        const T* src = t.px(b, y, t.w - 1 - x);
        T* dst = out.px(b, y, x);
        for (int c = 0; c < t.c; ++c) dst[c] = src[c];
      }
    }
  }
  return out;
}

/// Horizontal flip with probability p_flip; always consumes exactly one draw.
template <typename T>
Tensor<T> augment(const Tensor<T>& image, Rng& rng, double p_flip) {
  return rng.bernoulli(p_flip) ? hflip(image) : image;
}

/// Infer-mode score maps of all spoof samples, normalized and hard-gated.
/// Entries of live samples are left empty.
template <typename T>
std::vector<BinaryMask> compute_spoof_masks(const FcnModel<T>& model, const TrainingSet<T>& data,
                                            double tau) {
  std::vector<BinaryMask> masks(data.size());
  const int factor = model.config.downsample_factor();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].label != 1) continue;
    const Tensor<T> normalized = normalize_score_map(model_infer(model, data[i].image));
    masks[i] = hard_gate(normalized, static_cast<T>(tau), factor);
  }
  return masks;
}

namespace detail {

template <typename T>
void validate_training_set(const TrainingSet<T>& data) {
  if (data.empty()) throw InputError("training: empty dataset");
  for (const TrainingSample<T>& s : data) {
    if (s.image.n != 1) throw ConfigError("training: each sample must hold one image");
    if (!s.image.same_shape(data.front().image)) {
      throw ConfigError("training: all samples must share one image size");
    }
    if (s.label != 0 && s.label != 1) throw ConfigError("training: labels must be 0 or 1");
  }
}

/// Copies (and optionally mirrors) a region crop of `image` into slot `b` of
/// the batch tensor.
template <typename T>
void copy_crop(Tensor<T>& batch, int b, const Tensor<T>& image, const Region& r, bool flip) {
  const int c = image.c;
  for (int y = 0; y < r.height; ++y) {
    const T* src = image.px(0, r.top + y, r.left);
    T* dst = batch.px(b, y, 0);
    if (!flip) {
      std::copy(src, src + static_cast<std::size_t>(r.width) * c, dst);
    } else {
      for (int x = 0; x < r.width; ++x) {
        const T* s = src + static_cast<std::size_t>(r.width - 1 - x) * c;
        for (int ch = 0; ch < c; ++ch) dst[x * c + ch] = s[ch];
      }
    }
  }
}

/// Forward, loss, backward, optimizer step for one assembled batch.
/// Returns (summed loss, correct count).
template <typename T>
std::pair<double, long> train_on_batch(FcnModel<T>& model, AdamState<T>& adam,
                                       const Tensor<T>& batch, const std::vector<int>& labels,
                                       int stage, int epoch, int batch_index) {
  const std::string where = "stage " + std::to_string(stage) + " epoch " +
                            std::to_string(epoch) + " batch " + std::to_string(batch_index);
  ForwardCache<T> cache;
  Tensor<T> score_map = model_forward(model, batch, BnMode::train, &cache);
  const std::vector<T> logits = global_average_pool(score_map);

  const int n = batch.n;
  std::vector<T> dlogits(n);
  double loss_sum = 0.0;
  long correct = 0;
  for (int b = 0; b < n; ++b) {
    const BceResult<T> r = sigmoid_bce_loss(logits[b], labels[b]);
    if (!std::isfinite(static_cast<double>(r.loss))) {
      throw DivergenceError(where + ": non-finite loss");
    }
    loss_sum += static_cast<double>(r.loss);
    dlogits[b] = r.grad_logit / static_cast<T>(n);  // mean loss over the batch
    const int predicted = sigmoid(logits[b]) >= T(0.5) ? 1 : 0;
    correct += predicted == labels[b];
  }

  const Tensor<T> upstream = global_average_pool_backward(dlogits, score_map.h, score_map.w);
  const GradientSet<T> grads = model_backward(model, cache, upstream);
  try {
    adam_step(adam, trainable_params(model, grads));
  } catch (const DivergenceError& e) {
    throw DivergenceError(where + ": " + e.what());
  }
  return {loss_sum, correct};
}

template <typename T>
EpochReport run_epoch(FcnModel<T>& model, AdamState<T>& adam, const TrainingSet<T>& data,
                      const TrainConfig& cfg, int stage, int epoch, Rng& rng,
                      const std::vector<BinaryMask>& masks) {
  const auto started = std::chrono::steady_clock::now();
  const int image_h = data.front().image.h;
  const int image_w = data.front().image.w;
  const int channels = data.front().image.c;
  const bool stage2 = stage == 2;
  const bool whole_image_strategy = !stage2 || cfg.strategy == RegionStrategy::global;

  std::vector<int> entries;
  const int copies = stage2 ? cfg.regions_per_spoof_image : 1;
  entries.reserve(data.size() * static_cast<std::size_t>(copies));
  for (int i = 0; i < static_cast<int>(data.size()); ++i) {
    for (int k = 0; k < copies; ++k) entries.push_back(i);
  }

  // Each batch is (indices, trained-as-full-images flag). The full-image
  // mix-in keeps batches dense by pooling full-image entries separately.
  std::vector<std::pair<std::vector<int>, bool>> batches;
  const bool mix = stage2 && !whole_image_strategy && cfg.full_image_mix > 0.0;
  if (!mix) {
    for (std::vector<int>& chunk : make_batches(entries, rng, cfg.batch_size)) {
      batches.emplace_back(std::move(chunk), whole_image_strategy);
    }
  } else {
    std::vector<int> shuffled = entries;
    shuffle_vector(shuffled, rng);
    std::vector<int> region_pool, full_pool;
    for (int e : shuffled) {
      (rng.bernoulli(cfg.full_image_mix) ? full_pool : region_pool).push_back(e);
    }
    auto chunk_into = [&batches, &cfg](const std::vector<int>& pool, bool full) {
      for (std::size_t start = 0; start < pool.size();
           start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t stop = std::min(pool.size(), start + cfg.batch_size);
        batches.emplace_back(std::vector<int>(pool.begin() + start, pool.begin() + stop), full);
      }
    };
    chunk_into(region_pool, false);
    chunk_into(full_pool, true);
    shuffle_vector(batches, rng);
  }

  double loss_sum = 0.0;
  long correct = 0, count = 0;
  int batch_index = 0;
  for (const auto& [indices, full_image] : batches) {
    // One region size per batch so the batch tensor is dense.
    int rh = image_h, rw = image_w;
    bool fixed = false;
    Region fixed_r;
    if (stage2 && !full_image && !whole_image_strategy) {
      if (cfg.strategy == RegionStrategy::fixed_eye || cfg.strategy == RegionStrategy::fixed_nose ||
          cfg.strategy == RegionStrategy::fixed_mouth) {
        fixed_r = fixed_region(cfg.strategy, image_h, image_w);
        rh = fixed_r.height;
        rw = fixed_r.width;
        fixed = true;
      } else {
        rh = rng.uniform_int(cfg.min_region, std::min(cfg.max_region, image_h));
        rw = rng.uniform_int(cfg.min_region, std::min(cfg.max_region, image_w));
      }
    }

    Tensor<T> batch(static_cast<int>(indices.size()), rh, rw, channels);
    std::vector<int> labels(indices.size());
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const TrainingSample<T>& sample = data[indices[b]];
      Region r{0, 0, image_h, image_w};
      if (stage2 && !full_image && !whole_image_strategy) {
        if (fixed) {
          r = fixed_r;
        } else if (cfg.strategy == RegionStrategy::self_supervised && sample.label == 1 &&
                   masks[indices[b]].h > 0 && masks[indices[b]].any()) {
          r = sample_spoof_region_at(masks[indices[b]], image_h, image_w, rh, rw, rng).region;
        } else {
          r = place_random_region(image_h, image_w, rh, rw, rng);
        }
      }
      const bool flip = rng.bernoulli(cfg.flip_probability);
      copy_crop(batch, static_cast<int>(b), sample.image, r, flip);
      labels[b] = sample.label;
    }

    if (cfg.batch_probe) {
      cfg.batch_probe(BatchInfo{stage, epoch, batch_index, rh, rw, indices.size(),
                                full_image || whole_image_strategy});
    }
    const auto [batch_loss, batch_correct] =
        train_on_batch(model, adam, batch, labels, stage, epoch, batch_index);
    loss_sum += batch_loss;
    correct += batch_correct;
    count += static_cast<long>(indices.size());
    ++batch_index;
  }

  EpochReport report;
  report.stage = stage;
  report.epoch = epoch;
  report.mean_loss = loss_sum / static_cast<double>(count);
  report.accuracy = static_cast<double>(correct) / static_cast<double>(count);
  if (cfg.record_wall_time) {
    report.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  }
  return report;
}

template <typename T>
std::vector<EpochReport> run_stage(int stage, FcnModel<T>& model, const TrainingSet<T>& data,
                                   const TrainConfig& cfg, AdamState<T>* adam_state) {
  cfg.validate();
  validate_training_set(data);
  const int image_h = data.front().image.h;
  const int image_w = data.front().image.w;
  const bool mining = stage == 2 && cfg.strategy == RegionStrategy::self_supervised;
  if (stage == 2) {
    if (cfg.strategy == RegionStrategy::fixed_eye || cfg.strategy == RegionStrategy::fixed_nose ||
        cfg.strategy == RegionStrategy::fixed_mouth) {
      (void)fixed_region(cfg.strategy, image_h, image_w);  // surfaces size errors up front
    } else if (cfg.strategy != RegionStrategy::global &&
               (image_h < cfg.min_region || image_w < cfg.min_region)) {
      throw ConfigError("training: images are smaller than min_region");
    }
  }

  AdamState<T> local;
  AdamState<T>& adam = adam_state ? *adam_state : local;
  adam.lr = static_cast<T>(cfg.learning_rate);

  Rng rng(cfg.seed);
  std::vector<BinaryMask> masks(data.size());
  std::vector<EpochReport> reports;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (mining && (epoch == 0 || !cfg.freeze_masks)) {
      masks = compute_spoof_masks(model, data, cfg.tau);
    }
    reports.push_back(run_epoch(model, adam, data, cfg, stage, epoch, rng, masks));
    if (cfg.on_epoch && !cfg.on_epoch(reports.back())) break;
  }
  return reports;
}

}  // namespace detail

/// Stage I: global supervision on whole images.
template <typename T>
std::vector<EpochReport> stage1_train(FcnModel<T>& model, const TrainingSet<T>& data,
                                      const TrainConfig& cfg,
                                      AdamState<T>* adam_state = nullptr) {
  return detail::run_stage(1, model, data, cfg, adam_state);
}

/// Stage II: regional fine-tuning. With the self_supervised strategy, spoof
/// regions are centered on the model's own hard-gated score maps (recomputed
/// each epoch unless freeze_masks is set); live images contribute uniformly
/// placed regions of the same per-batch size. The global strategy reduces
/// exactly to Stage I.
template <typename T>
std::vector<EpochReport> stage2_finetune(FcnModel<T>& model, const TrainingSet<T>& data,
                                         const TrainConfig& cfg,
                                         AdamState<T>* adam_state = nullptr) {
  return detail::run_stage(2, model, data, cfg, adam_state);
}

}  // namespace ssrfcn
