#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ssrfcn/adam.hpp"
#include "ssrfcn/error.hpp"
#include "ssrfcn/model.hpp"

namespace ssrfcn {

// Weight files are a short ASCII header followed by raw little-endian float32
// data. The header declares every tensor with its dimensions:
//
//   ssrfcn 1
//   tensor conv1.weight f32 3 3 3 64
//   tensor conv1.bias f32 64
//   ...
//   data
//
// Tensors appear in fixed order: per layer conv weights and bias, then the
// batch-norm gamma/beta/running_mean/running_var of hidden layers. A
// checkpoint optionally appends the optimizer block (adam.step plus paired
// adam.m.* / adam.v.* moments for every trainable tensor).

namespace detail {

struct TensorDecl {
  std::string name;
  std::vector<long long> dims;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (long long d : dims) n *= static_cast<std::size_t>(d);
    return n;
  }
};

inline void append_le_f32(std::string& out, float v) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

inline float read_le_f32(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

class WeightFileWriter {
 public:
  template <typename T>
  void add(const std::string& name, std::vector<long long> dims, const T* values,
           std::size_t count) {
    std::size_t expect = 1;
    for (long long d : dims) expect *= static_cast<std::size_t>(d);
    if (expect != count) throw FormatError("tensor '" + name + "': dims do not match data size");
    header_ += "tensor " + name + " f32";
    for (long long d : dims) header_ += " " + std::to_string(d);
    header_ += "\n";
    payload_.reserve(payload_.size() + count * 4);
    for (std::size_t i = 0; i < count; ++i) {
      append_le_f32(payload_, static_cast<float>(values[i]));
    }
  }

  /// Writes to a temporary sibling and renames it into place so a crash never
  /// leaves a half-written weight file behind.
  void commit(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot open '" + tmp + "' for writing");
      out << "ssrfcn 1\n" << header_ << "data\n";
      out.write(payload_.data(), static_cast<std::streamsize>(payload_.size()));
      out.flush();
      if (!out) throw IoError("failed writing '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
      std::filesystem::remove(tmp);
      throw IoError("failed to move '" + tmp + "' to '" + path + "': " + ec.message());
    }
  }

 private:
  std::string header_;
  std::string payload_;
};

class WeightFileReader {
 public:
  explicit WeightFileReader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weight file '" + path + "'");

    std::string line;
    if (!std::getline(in, line) || line != "ssrfcn 1") {
      throw FormatError("'" + path + "' is not a version-1 ssrfcn weight file");
    }
    bool saw_data = false;
    while (std::getline(in, line)) {
      if (line == "data") {
        saw_data = true;
        break;
      }
      std::istringstream fields(line);
      std::string keyword, name, dtype;
      if (!(fields >> keyword >> name >> dtype) || keyword != "tensor" || dtype != "f32") {
        throw FormatError("'" + path + "': malformed header line '" + line + "'");
      }
      TensorDecl decl;
      decl.name = name;
      long long d = 0;
      while (fields >> d) {
        if (d < 1) throw FormatError("tensor '" + name + "': non-positive dimension");
        decl.dims.push_back(d);
      }
      if (!fields.eof()) throw FormatError("tensor '" + name + "': malformed dimension list");
      if (decl.dims.empty()) throw FormatError("tensor '" + name + "': missing dimensions");
      decls_.push_back(std::move(decl));
    }
    if (!saw_data) throw FormatError("'" + path + "': header is missing the data terminator");

    std::size_t total = 0;
    for (const TensorDecl& d : decls_) total += d.element_count();
    payload_.resize(total * 4);
    in.read(reinterpret_cast<char*>(payload_.data()),
            static_cast<std::streamsize>(payload_.size()));
    if (static_cast<std::size_t>(in.gcount()) != payload_.size()) {
      throw FormatError("'" + path + "': truncated tensor data (tensor '" +
                        name_at_offset(static_cast<std::size_t>(in.gcount()) / 4) + "')");
    }
    char extra = 0;
    if (in.read(&extra, 1); in.gcount() != 0) {
      throw FormatError("'" + path + "': trailing bytes after tensor data");
    }
  }

  std::size_t tensor_count() const { return decls_.size(); }
  const TensorDecl& decl(std::size_t i) const { return decls_[i]; }

  bool has_tensor(const std::string& name) const {
    for (const TensorDecl& d : decls_) {
      if (d.name == name) return true;
    }
    return false;
  }

  /// Copies the next tensor into dst, enforcing name and element count.
  template <typename T>
  void take(const std::string& expect_name, std::vector<long long> expect_dims, T* dst,
            std::size_t count) {
    if (cursor_ >= decls_.size()) {
      throw FormatError("'" + path_ + "': missing tensor '" + expect_name + "'");
    }
    const TensorDecl& d = decls_[cursor_];
    if (d.name != expect_name) {
      throw FormatError("'" + path_ + "': expected tensor '" + expect_name + "', found '" +
                        d.name + "'");
    }
    if (d.dims != expect_dims || d.element_count() != count) {
      throw FormatError("tensor '" + d.name + "': dimensions do not match the model");
    }
    const unsigned char* src = payload_.data() + byte_offset_;
    for (std::size_t i = 0; i < count; ++i) {
      dst[i] = static_cast<T>(read_le_f32(src + i * 4));
    }
    byte_offset_ += count * 4;
    cursor_ += 1;
  }

  bool exhausted() const { return cursor_ == decls_.size(); }

  std::string next_name() const {
    return cursor_ < decls_.size() ? decls_[cursor_].name : std::string();
  }

 private:
  std::string name_at_offset(std::size_t element_index) const {
    std::size_t seen = 0;
    for (const TensorDecl& d : decls_) {
      seen += d.element_count();
      if (element_index < seen) return d.name;
    }
    return decls_.empty() ? "<none>" : decls_.back().name;
  }

  std::string path_;
  std::vector<TensorDecl> decls_;
  std::vector<unsigned char> payload_;
  std::size_t cursor_ = 0;
  std::size_t byte_offset_ = 0;
};

template <typename T>
std::vector<std::pair<std::string, std::vector<long long>>> trainable_layout(
    const FcnModel<T>& model) {
  std::vector<std::pair<std::string, std::vector<long long>>> layout;
  const int layers = model.config.layer_count();
  for (int i = 0; i < layers; ++i) {
    const ConvParams<T>& cv = model.conv[i];
    layout.push_back({param_name("conv", i, "weight"),
                      {cv.weights.n, cv.weights.h, cv.weights.w, cv.weights.c}});
    layout.push_back({param_name("conv", i, "bias"), {static_cast<long long>(cv.bias.size())}});
    if (i < layers - 1) {
      const long long ch = model.bn[i].channels();
      layout.push_back({param_name("bn", i, "gamma"), {ch}});
      layout.push_back({param_name("bn", i, "beta"), {ch}});
    }
  }
  return layout;
}

}  // namespace detail

/// Saves model weights; when `adam` is given, its moments and step counter are
/// appended so training can resume exactly.
template <typename T>
void save_model(const std::string& path, const FcnModel<T>& model,
                const AdamState<T>* adam = nullptr) {
  detail::WeightFileWriter writer;
  const int layers = model.config.layer_count();
  for (int i = 0; i < layers; ++i) {
    const ConvParams<T>& cv = model.conv[i];
    writer.add(param_name("conv", i, "weight"),
               {cv.weights.n, cv.weights.h, cv.weights.w, cv.weights.c},
               cv.weights.data.data(), cv.weights.size());
    writer.add(param_name("conv", i, "bias"), {static_cast<long long>(cv.bias.size())},
               cv.bias.data(), cv.bias.size());
    if (i < layers - 1) {
      const BatchNormParams<T>& bnp = model.bn[i];
      const long long ch = bnp.channels();
      writer.add(param_name("bn", i, "gamma"), {ch}, bnp.gamma.data(), bnp.gamma.size());
      writer.add(param_name("bn", i, "beta"), {ch}, bnp.beta.data(), bnp.beta.size());
      writer.add(param_name("bn", i, "running_mean"), {ch}, bnp.running_mean.data(),
                 bnp.running_mean.size());
      writer.add(param_name("bn", i, "running_var"), {ch}, bnp.running_var.data(),
                 bnp.running_var.size());
    }
  }

  if (adam) {
    const T step = static_cast<T>(adam->step_count);
    writer.add("adam.step", {1}, &step, 1);
    for (const auto& [name, dims] : detail::trainable_layout(model)) {
      std::size_t count = 1;
      for (long long d : dims) count *= static_cast<std::size_t>(d);
      const std::vector<T> zeros(count, T(0));
      auto mit = adam->m.find(name);
      auto vit = adam->v.find(name);
      const std::vector<T>& m = mit != adam->m.end() && !mit->second.empty() ? mit->second : zeros;
      const std::vector<T>& v = vit != adam->v.end() && !vit->second.empty() ? vit->second : zeros;
      if (m.size() != count || v.size() != count) {
        throw FormatError("tensor 'adam.m." + name + "': moment size does not match parameter");
      }
      writer.add("adam.m." + name, dims, m.data(), m.size());
      writer.add("adam.v." + name, dims, v.data(), v.size());
    }
  }
  writer.commit(path);
}

template <typename T>
struct Checkpoint {
  FcnModel<T> model;
  bool has_optimizer = false;
  AdamState<T> adam;
};

/// Loads a weight file into the architecture described by `config`. The file
/// must contain exactly the tensors that architecture defines, in order.
template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path, const FcnConfig& config = FcnConfig{}) {
  config.validate();
  detail::WeightFileReader reader(path);

  Checkpoint<T> ckpt;
  ckpt.model.config = config;
  int cin = config.in_channels;
  const int layers = config.layer_count();
  for (int i = 0; i < layers; ++i) {
    const int cout = config.channels[i];
    ConvParams<T> cv(config.kernel, config.kernel, cin, cout, config.strides[i]);
    reader.take(param_name("conv", i, "weight"),
                {config.kernel, config.kernel, cin, cout}, cv.weights.data.data(),
                cv.weights.size());
    reader.take(param_name("conv", i, "bias"), {cout}, cv.bias.data(), cv.bias.size());
    ckpt.model.conv.push_back(std::move(cv));
    if (i < layers - 1) {
      BatchNormParams<T> bnp(cout);
      reader.take(param_name("bn", i, "gamma"), {cout}, bnp.gamma.data(), bnp.gamma.size());
      reader.take(param_name("bn", i, "beta"), {cout}, bnp.beta.data(), bnp.beta.size());
      reader.take(param_name("bn", i, "running_mean"), {cout}, bnp.running_mean.data(),
                  bnp.running_mean.size());
      reader.take(param_name("bn", i, "running_var"), {cout}, bnp.running_var.data(),
                  bnp.running_var.size());
      ckpt.model.bn.push_back(std::move(bnp));
    }
    cin = cout;
  }

  if (!reader.exhausted()) {
    if (reader.next_name() != "adam.step") {
      throw FormatError("'" + path + "': unexpected tensor '" + reader.next_name() + "'");
    }
    T step = T(0);
    reader.take("adam.step", {1}, &step, 1);
    ckpt.has_optimizer = true;
    ckpt.adam.step_count = static_cast<long long>(step);
    for (const auto& [name, dims] : detail::trainable_layout(ckpt.model)) {
      std::size_t count = 1;
      for (long long d : dims) count *= static_cast<std::size_t>(d);
      std::vector<T> m(count), v(count);
      reader.take("adam.m." + name, dims, m.data(), count);
      reader.take("adam.v." + name, dims, v.data(), count);
      ckpt.adam.m[name] = std::move(m);
      ckpt.adam.v[name] = std::move(v);
    }
    if (!reader.exhausted()) {
      throw FormatError("'" + path + "': unexpected tensor '" + reader.next_name() + "'");
    }
  }
  return ckpt;
}

template <typename T>
FcnModel<T> load_model(const std::string& path, const FcnConfig& config = FcnConfig{}) {
  return load_checkpoint<T>(path, config).model;
}

}  // namespace ssrfcn
