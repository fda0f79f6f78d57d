#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "ssrfcn/error.hpp"
#include "ssrfcn/rng.hpp"
#include "ssrfcn/tensor.hpp"

namespace ssrfcn {

/// Binary grid at score-map resolution. Each cell owns the `factor`-sized
/// pixel block starting at (factor*i, factor*j) of the source image.
struct BinaryMask {
  int h = 0, w = 0;
  int factor = 16;
  std::vector<std::uint8_t> cells;

  BinaryMask() = default;
  BinaryMask(int h_, int w_, int factor_)
      : h(h_), w(w_), factor(factor_), cells(static_cast<std::size_t>(h_) * w_, 0) {
    if (h_ < 1 || w_ < 1 || factor_ < 1) throw ConfigError("binary mask: bad dimensions");
  }

  std::uint8_t& at(int i, int j) { return cells[static_cast<std::size_t>(i) * w + j]; }
  std::uint8_t at(int i, int j) const { return cells[static_cast<std::size_t>(i) * w + j]; }

  bool any() const {
    for (std::uint8_t v : cells) {
      if (v) return true;
    }
    return false;
  }

  int popcount() const {
    int n = 0;
    for (std::uint8_t v : cells) n += v != 0;
    return n;
  }
};

/// Axis-aligned rectangle in image pixel coordinates, [top, top+height) x
/// [left, left+width).
struct Region {
  int top = 0, left = 0, height = 0, width = 0;

  bool inside(int image_h, int image_w) const {
    return top >= 0 && left >= 0 && height >= 1 && width >= 1 && top + height <= image_h &&
           left + width <= image_w;
  }
};

enum class RegionStrategy { self_supervised, global, fixed_eye, fixed_nose, fixed_mouth, random };

inline const char* to_string(RegionStrategy s) {
  switch (s) {
    case RegionStrategy::self_supervised: return "self_supervised";
    case RegionStrategy::global: return "global";
    case RegionStrategy::fixed_eye: return "fixed_eye";
    case RegionStrategy::fixed_nose: return "fixed_nose";
    case RegionStrategy::fixed_mouth: return "fixed_mouth";
    case RegionStrategy::random: return "random";
  }
  return "?";
}

inline RegionStrategy region_strategy_from_string(const std::string& s) {
  if (s == "self_supervised") return RegionStrategy::self_supervised;
  if (s == "global") return RegionStrategy::global;
  if (s == "fixed_eye") return RegionStrategy::fixed_eye;
  if (s == "fixed_nose") return RegionStrategy::fixed_nose;
  if (s == "fixed_mouth") return RegionStrategy::fixed_mouth;
  if (s == "random") return RegionStrategy::random;
  throw ConfigError("unknown region strategy '" + s + "'");
}

/// Min-max normalization of one score map (batch dim 1, channel dim 1) into
/// [0, 1]. A constant map has no spatial signal and maps to all zeros.
template <typename T>
Tensor<T> normalize_score_map(const Tensor<T>& score_map) {
  if (score_map.c != 1) throw ConfigError("normalize_score_map: expected one channel");
  Tensor<T> out(score_map.n, score_map.h, score_map.w, 1);
  const std::size_t cells = static_cast<std::size_t>(score_map.h) * score_map.w;
  for (int b = 0; b < score_map.n; ++b) {
    const T* src = score_map.data.data() + b * cells;
    T* dst = out.data.data() + b * cells;
    T lo = src[0], hi = src[0];
    for (std::size_t i = 1; i < cells; ++i) {
      lo = std::min(lo, src[i]);
      hi = std::max(hi, src[i]);
    }
    if (hi == lo) {
      std::fill(dst, dst + cells, T(0));
    } else {
      const T inv = T(1) / (hi - lo);
      for (std::size_t i = 0; i < cells; ++i) dst[i] = (src[i] - lo) * inv;
    }
  }
  return out;
}

/// Thresholds a normalized score map: cell is 1 iff its value >= tau.
template <typename T>
BinaryMask hard_gate(const Tensor<T>& normalized, T tau, int factor = 16) {
  if (normalized.n != 1 || normalized.c != 1) {
    throw ConfigError("hard_gate: expected a single single-channel map");
  }
  BinaryMask mask(normalized.h, normalized.w, factor);
  for (int i = 0; i < normalized.h; ++i) {
    for (int j = 0; j < normalized.w; ++j) {
      mask.at(i, j) = normalized.at(0, i, j, 0) >= tau ? 1 : 0;
    }
  }
  return mask;
}

/// A sampled region plus the center pixel that was drawn before the rectangle
/// was shifted to fit the image.
struct RegionDraw {
  Region region;
  int center_row = 0;
  int center_col = 0;
};

namespace detail {

inline void check_region_bounds(int image_h, int image_w, int min_side, int max_side) {
  if (min_side < 1 || max_side < min_side) {
    throw ConfigError("region sampler: need 1 <= min_side <= max_side");
  }
  if (image_h < min_side || image_w < min_side) {
    throw InputError("region sampler: image " + std::to_string(image_h) + "x" +
                     std::to_string(image_w) + " is smaller than min region side " +
                     std::to_string(min_side));
  }
}

/// Height is always drawn before width so seeded sequences are stable.
inline std::pair<int, int> draw_region_size(int image_h, int image_w, Rng& rng, int min_side,
                                            int max_side) {
  const int h = rng.uniform_int(min_side, std::min(max_side, image_h));
  const int w = rng.uniform_int(min_side, std::min(max_side, image_w));
  return {h, w};
}

}  // namespace detail

/// Uniform placement of an already-sized rectangle.
inline Region place_random_region(int image_h, int image_w, int height, int width, Rng& rng) {
  if (height < 1 || width < 1 || height > image_h || width > image_w) {
    throw ConfigError("place_random_region: size does not fit the image");
  }
  Region r;
  r.height = height;
  r.width = width;
  r.top = rng.uniform_int(0, image_h - height);
  r.left = rng.uniform_int(0, image_w - width);
  return r;
}

/// Mask-guided placement of an already-sized rectangle: the center is drawn
/// uniformly over the image pixels covered by mask-1 cells, then the
/// rectangle is shifted minimally to lie inside the image. An all-zero mask
/// falls back to uniform placement (the recorded center is then the final
/// rectangle's midpoint).
inline RegionDraw sample_spoof_region_at(const BinaryMask& mask, int image_h, int image_w,
                                         int height, int width, Rng& rng) {
  if (height < 1 || width < 1 || height > image_h || width > image_w) {
    throw ConfigError("sample_spoof_region_at: size does not fit the image");
  }

  // Each active cell contributes its pixel block clipped to the image; one
  // uniform index over the union picks the center.
  const int f = mask.factor;
  std::uint64_t total = 0;
  for (int i = 0; i < mask.h; ++i) {
    for (int j = 0; j < mask.w; ++j) {
      if (!mask.at(i, j)) continue;
      const int bh = std::min(f, image_h - i * f);
      const int bw = std::min(f, image_w - j * f);
      if (bh > 0 && bw > 0) total += static_cast<std::uint64_t>(bh) * bw;
    }
  }
  if (total == 0) {  // no active cell overlaps the image
    RegionDraw draw;
    draw.region = place_random_region(image_h, image_w, height, width, rng);
    draw.center_row = draw.region.top + height / 2;
    draw.center_col = draw.region.left + width / 2;
    return draw;
  }

  std::uint64_t pick = static_cast<std::uint64_t>(rng.uniform_index(total));
  int cy = 0, cx = 0;
  for (int i = 0; i < mask.h; ++i) {
    for (int j = 0; j < mask.w; ++j) {
      if (!mask.at(i, j)) continue;
      const int bh = std::min(f, image_h - i * f);
      const int bw = std::min(f, image_w - j * f);
      if (bh <= 0 || bw <= 0) continue;
      const std::uint64_t block = static_cast<std::uint64_t>(bh) * bw;
      if (pick < block) {
        cy = i * f + static_cast<int>(pick / bw);
        cx = j * f + static_cast<int>(pick % bw);
        i = mask.h;  // done
        break;
      }
      pick -= block;
    }
  }

  RegionDraw draw;
  draw.center_row = cy;
  draw.center_col = cx;
  draw.region.height = height;
  draw.region.width = width;
  draw.region.top = std::clamp(cy - height / 2, 0, image_h - height);
  draw.region.left = std::clamp(cx - width / 2, 0, image_w - width);
  return draw;
}

/// Uniform rectangle with sides in [min_side, min(max_side, image side)],
/// placed uniformly inside the image. Draw order: height, width, top, left.
inline Region sample_random_region(int image_h, int image_w, Rng& rng, int min_side = 64,
                                   int max_side = 256) {
  detail::check_region_bounds(image_h, image_w, min_side, max_side);
  const auto [h, w] = detail::draw_region_size(image_h, image_w, rng, min_side, max_side);
  return place_random_region(image_h, image_w, h, w, rng);
}

/// Size draw plus mask-guided placement; falls back to the unconstrained
/// sampler when the mask is all zeros.
inline RegionDraw sample_spoof_region(const BinaryMask& mask, int image_h, int image_w, Rng& rng,
                                      int min_side = 64, int max_side = 256) {
  detail::check_region_bounds(image_h, image_w, min_side, max_side);
  if (!mask.any()) {
    RegionDraw draw;
    draw.region = sample_random_region(image_h, image_w, rng, min_side, max_side);
    draw.center_row = draw.region.top + draw.region.height / 2;
    draw.center_col = draw.region.left + draw.region.width / 2;
    return draw;
  }
  const auto [h, w] = detail::draw_region_size(image_h, image_w, rng, min_side, max_side);
  return sample_spoof_region_at(mask, image_h, image_w, h, w, rng);
}

/// Hand-picked face areas on the 256x256 aligned template.
inline Region fixed_region(RegionStrategy kind, int image_h, int image_w) {
  if (image_h != 256 || image_w != 256) {
    throw InputError("fixed_region: defined only for 256x256 aligned faces");
  }
  switch (kind) {
    case RegionStrategy::fixed_eye: return {48, 32, 72, 192};
    case RegionStrategy::fixed_nose: return {96, 80, 80, 96};
    case RegionStrategy::fixed_mouth: return {160, 64, 72, 128};
    default: throw ConfigError("fixed_region: strategy has no fixed coordinates");
  }
}

/// Sub-array copy of every sample in the batch.
template <typename T>
Tensor<T> crop(const Tensor<T>& image, const Region& r) {
  if (!r.inside(image.h, image.w)) {
    throw ConfigError("crop: region [" + std::to_string(r.top) + "," + std::to_string(r.left) +
                      " " + std::to_string(r.height) + "x" + std::to_string(r.width) +
                      "] exceeds image " + std::to_string(image.h) + "x" +
                      std::to_string(image.w));
  }
  Tensor<T> out(image.n, r.height, r.width, image.c);
  const std::size_t row_bytes = static_cast<std::size_t>(r.width) * image.c;
  for (int b = 0; b < image.n; ++b) {
    for (int y = 0; y < r.height; ++y) {
      const T* src = image.px(b, r.top + y, r.left);
      std::copy(src, src + row_bytes, out.px(b, y, 0));
    }
  }
  return out;
}

}  // namespace ssrfcn
