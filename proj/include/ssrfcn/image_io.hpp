#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ssrfcn/error.hpp"
#include "ssrfcn/tensor.hpp"

namespace ssrfcn {

/// Interleaved 8-bit RGB image.
struct ImageU8 {
  int h = 0, w = 0;
  std::vector<unsigned char> pixels;  // h*w*3, row-major

  ImageU8() = default;
  ImageU8(int h_, int w_) : h(h_), w(w_), pixels(static_cast<std::size_t>(h_) * w_ * 3, 0) {
    if (h_ < 1 || w_ < 1) throw ConfigError("image dimensions must be positive");
  }

  unsigned char* px(int y, int x) {
    return pixels.data() + (static_cast<std::size_t>(y) * w + x) * 3;
  }
  const unsigned char* px(int y, int x) const {
    return pixels.data() + (static_cast<std::size_t>(y) * w + x) * 3;
  }
};

/// Decodes any libpng-readable file into 8-bit RGB.
inline ImageU8 read_png_rgb(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw InputError("cannot decode '" + path + "': " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  ImageU8 image;
  image.h = static_cast<int>(png.height);
  image.w = static_cast<int>(png.width);
  image.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, image.pixels.data(), 0, nullptr)) {
    const std::string message = png.message;
    png_image_free(&png);
    throw InputError("cannot decode '" + path + "': " + message);
  }
  return image;
}

/// Writes an 8-bit RGB PNG atomically (temp file + rename). Optional text
/// key/value pairs are stored as tEXt metadata chunks.
inline void write_png_rgb(const std::string& path, const ImageU8& image,
                          const std::vector<std::pair<std::string, std::string>>& text = {}) {
  if (image.h < 1 || image.w < 1 ||
      image.pixels.size() != static_cast<std::size_t>(image.h) * image.w * 3) {
    throw ConfigError("write_png_rgb: malformed image buffer");
  }
  const std::string tmp = path + ".tmp";
  std::FILE* fp = std::fopen(tmp.c_str(), "wb");
  if (!fp) throw IoError("cannot open '" + tmp + "' for writing");

  png_structp wr = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = wr ? png_create_info_struct(wr) : nullptr;
  if (!wr || !info) {
    if (wr) png_destroy_write_struct(&wr, info ? &info : nullptr);
    std::fclose(fp);
    std::remove(tmp.c_str());
    throw IoError("libpng writer initialization failed");
  }
  // libpng reports errors via longjmp; everything it can interrupt lives
  // between here and png_write_end, with no C++ objects constructed inside.
  if (setjmp(png_jmpbuf(wr))) {
    png_destroy_write_struct(&wr, &info);
    std::fclose(fp);
    std::remove(tmp.c_str());
    throw IoError("libpng failed while writing '" + tmp + "'");
  }
  png_init_io(wr, fp);
  png_set_IHDR(wr, info, static_cast<png_uint_32>(image.w), static_cast<png_uint_32>(image.h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_text> chunks(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    chunks[i] = png_text{};
    chunks[i].compression = PNG_TEXT_COMPRESSION_NONE;
    chunks[i].key = const_cast<char*>(text[i].first.c_str());
    chunks[i].text = const_cast<char*>(text[i].second.c_str());
    chunks[i].text_length = text[i].second.size();
  }
  if (!chunks.empty()) png_set_text(wr, info, chunks.data(), static_cast<int>(chunks.size()));
  png_write_info(wr, info);
  for (int y = 0; y < image.h; ++y) {
    png_write_row(wr, const_cast<png_bytep>(image.px(y, 0)));
  }
  png_write_end(wr, nullptr);
  png_destroy_write_struct(&wr, &info);
  if (std::fclose(fp) != 0) {
    std::remove(tmp.c_str());
    throw IoError("failed to finish writing '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw IoError("failed to move '" + tmp + "' to '" + path + "': " + ec.message());
  }
}

/// Reads the tEXt metadata chunks of a PNG file as key/value pairs.
inline std::vector<std::pair<std::string, std::string>> read_png_text(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw InputError("cannot open '" + path + "'");
  png_structp rd = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = rd ? png_create_info_struct(rd) : nullptr;
  if (!rd || !info) {
    if (rd) png_destroy_read_struct(&rd, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw IoError("libpng reader initialization failed");
  }
  std::vector<std::pair<std::string, std::string>> out;
  if (setjmp(png_jmpbuf(rd))) {
    png_destroy_read_struct(&rd, &info, nullptr);
    std::fclose(fp);
    throw InputError("cannot parse '" + path + "'");
  }
  png_init_io(rd, fp);
  png_read_info(rd, info);
  png_textp chunks = nullptr;
  int count = 0;
  png_get_text(rd, info, &chunks, &count);
  for (int i = 0; i < count; ++i) {
    out.emplace_back(chunks[i].key ? chunks[i].key : "",
                     chunks[i].text ? chunks[i].text : "");
  }
  png_destroy_read_struct(&rd, &info, nullptr);
  std::fclose(fp);
  return out;
}

/// Pixel bytes to network inputs: (u8 - 127.5) / 128, a value in
/// (-1, 1) that is exactly invertible on the 8-bit lattice.
template <typename T>
Tensor<T> preprocess(const ImageU8& image) {
  Tensor<T> out(1, image.h, image.w, 3);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    out.data[i] = (static_cast<T>(image.pixels[i]) - T(127.5)) / T(128.0);
  }
  return out;
}

/// Inverse of preprocess for a single-sample tensor: round(x*128 + 127.5),
/// clipped to [0, 255].
template <typename T>
ImageU8 unpreprocess(const Tensor<T>& t) {
  if (t.n != 1 || t.c != 3) throw ConfigError("unpreprocess: expected a (1,h,w,3) tensor");
  ImageU8 image(t.h, t.w);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = std::round(static_cast<double>(t.data[i]) * 128.0 + 127.5);
    image.pixels[i] = static_cast<unsigned char>(std::min(255.0, std::max(0.0, v)));
  }
  return image;
}

}  // namespace ssrfcn
