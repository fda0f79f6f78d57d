#pragma once

#include <algorithm>
#include <cmath>

#include "ssrfcn/error.hpp"
#include "ssrfcn/image_io.hpp"
#include "ssrfcn/tensor.hpp"

namespace ssrfcn {

/// Bilinear upscale of a single single-channel map using half-pixel-center
/// coordinate mapping (display only; the training path maps score cells to
/// pixel blocks with nearest-neighbor semantics instead).
template <typename T>
Tensor<T> bilinear_upscale(const Tensor<T>& map, int out_h, int out_w) {
  if (map.n != 1 || map.c != 1) throw ConfigError("bilinear_upscale: expected a (1,h,w,1) map");
  if (out_h < 1 || out_w < 1) throw ConfigError("bilinear_upscale: empty output dims");
  Tensor<T> out(1, out_h, out_w, 1);
  const double scale_y = static_cast<double>(map.h) / out_h;
  const double scale_x = static_cast<double>(map.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double sy = std::max(0.0, (y + 0.5) * scale_y - 0.5);
    const int y0 = std::min(map.h - 1, static_cast<int>(sy));
    const int y1 = std::min(map.h - 1, y0 + 1);
    const double fy = sy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double sx = std::max(0.0, (x + 0.5) * scale_x - 0.5);
      const int x0 = std::min(map.w - 1, static_cast<int>(sx));
      const int x1 = std::min(map.w - 1, x0 + 1);
      const double fx = sx - x0;
      const double top = static_cast<double>(map.at(0, y0, x0, 0)) * (1.0 - fx) +
                         static_cast<double>(map.at(0, y0, x1, 0)) * fx;
      const double bottom = static_cast<double>(map.at(0, y1, x0, 0)) * (1.0 - fx) +
                            static_cast<double>(map.at(0, y1, x1, 0)) * fx;
      out.at(0, y, x, 0) = static_cast<T>(top * (1.0 - fy) + bottom * fy);
    }
  }
  return out;
}

/// 50/50 blend of the input with a red layer whose intensity follows the
/// normalized map (already upscaled to the image size, values in [0,1]).
template <typename T>
ImageU8 heatmap_overlay(const ImageU8& image, const Tensor<T>& heat) {
  if (heat.n != 1 || heat.c != 1 || heat.h != image.h || heat.w != image.w) {
    throw ConfigError("heatmap_overlay: heat map must match the image size");
  }
  ImageU8 out(image.h, image.w);
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x) {
      const double v =
          std::min(1.0, std::max(0.0, static_cast<double>(heat.at(0, y, x, 0))));
      const unsigned char* src = image.px(y, x);
      unsigned char* dst = out.px(y, x);
      dst[0] = static_cast<unsigned char>(std::round(0.5 * src[0] + 0.5 * 255.0 * v));
      dst[1] = static_cast<unsigned char>(std::round(0.5 * src[1]));
      dst[2] = static_cast<unsigned char>(std::round(0.5 * src[2]));
    }
  }
  return out;
}

}  // namespace ssrfcn
