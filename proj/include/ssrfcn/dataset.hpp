#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ssrfcn/error.hpp"
#include "ssrfcn/image_io.hpp"
#include "ssrfcn/tensor.hpp"

namespace ssrfcn {

inline constexpr const char* kManifestHeader =
    "image_path,label,spoof_type,video_id,subject_id,frame_index";

struct SampleRecord {
  std::string image_path;  // resolved against the manifest's directory
  bool is_spoof = false;
  std::string spoof_type;  // "live" for bona-fide samples
  std::string video_id;
  std::string subject_id;
  long long frame_index = 0;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

/// Parses a sample manifest: a header line followed by one comma-separated
/// record per line. Relative image paths are resolved against the manifest's
/// directory; every referenced file must exist. Errors carry "file:line".
inline std::vector<SampleRecord> load_manifest(const std::string& path,
                                               bool check_files_exist = true) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  const std::filesystem::path base = std::filesystem::path(path).parent_path();

  auto fail = [&path](int line_no, const std::string& msg) -> ParseError {
    return ParseError(path + ":" + std::to_string(line_no) + ": " + msg);
  };

  std::string line;
  int line_no = 0;
  if (!std::getline(in, line)) throw fail(1, "empty manifest, expected header line");
  line_no = 1;
  {
    std::string header = line;
    if (!header.empty() && header.back() == '\r') header.pop_back();
    if (header != kManifestHeader) {
      throw fail(1, "bad header, expected '" + std::string(kManifestHeader) + "'");
    }
  }

  std::vector<SampleRecord> records;
  std::set<std::pair<std::string, long long>> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> f = detail::split_csv_line(line);
    if (f.size() != 6) {
      throw fail(line_no, "expected 6 columns, found " + std::to_string(f.size()));
    }
    SampleRecord r;
    if (f[0].empty()) throw fail(line_no, "empty image_path");
    r.image_path = (base / f[0]).string();
    if (f[1] == "live") {
      r.is_spoof = false;
    } else if (f[1] == "spoof") {
      r.is_spoof = true;
    } else {
      throw fail(line_no, "unknown label '" + f[1] + "', expected live or spoof");
    }
    r.spoof_type = f[2];
    if (r.spoof_type.empty()) throw fail(line_no, "empty spoof_type");
    if (r.is_spoof == (r.spoof_type == "live")) {
      throw fail(line_no, "label '" + f[1] + "' is inconsistent with spoof_type '" + f[2] + "'");
    }
    r.video_id = f[3];
    r.subject_id = f[4];
    if (r.video_id.empty()) throw fail(line_no, "empty video_id");
    if (r.subject_id.empty()) throw fail(line_no, "empty subject_id");
    if (f[5].empty()) {
      r.frame_index = 0;
    } else {
      try {
        std::size_t used = 0;
        r.frame_index = std::stoll(f[5], &used);
        if (used != f[5].size()) throw std::invalid_argument("");
      } catch (const std::exception&) {
        throw fail(line_no, "frame_index '" + f[5] + "' is not an integer");
      }
    }
    if (!seen.insert({r.video_id, r.frame_index}).second) {
      throw fail(line_no, "duplicate (video_id, frame_index) = (" + r.video_id + ", " +
                              std::to_string(r.frame_index) + ")");
    }
    if (check_files_exist && !std::filesystem::exists(r.image_path)) {
      throw fail(line_no, "image file not found: " + r.image_path);
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) {
    std::cerr << "warning: manifest '" << path << "' contains no records\n";
  }
  return records;
}

/// Writes a manifest whose image paths are taken verbatim (callers pass
/// paths relative to the manifest's directory).
inline void save_manifest(const std::string& path,
                          const std::vector<std::pair<std::string, SampleRecord>>& rows) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out << kManifestHeader << "\n";
    for (const auto& [relative_path, r] : rows) {
      out << relative_path << ',' << (r.is_spoof ? "spoof" : "live") << ',' << r.spoof_type << ','
          << r.video_id << ',' << r.subject_id << ',' << r.frame_index << "\n";
    }
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

/// Keeps every stride-th frame of each video (by frame_index order of
/// appearance); stride 1 is the identity.
inline std::vector<SampleRecord> filter_frame_stride(const std::vector<SampleRecord>& records,
                                                     int stride) {
  if (stride < 1) throw ConfigError("frame stride must be >= 1");
  if (stride == 1) return records;
  std::vector<SampleRecord> out;
  for (const SampleRecord& r : records) {
    if (r.frame_index % stride == 0) out.push_back(r);
  }
  return out;
}

/// Reads a record's image and maps bytes to network inputs.
template <typename T>
Tensor<T> load_and_preprocess(const SampleRecord& record) {
  return preprocess<T>(read_png_rgb(record.image_path));
}

template <typename T>
struct TrainingSample {
  Tensor<T> image;  // (1, h, w, 3), preprocessed
  int label = 0;    // 1 = spoof
};

template <typename T>
using TrainingSet = std::vector<TrainingSample<T>>;

/// Loads every record into memory. All images must share one size; when
/// `expected_side` is positive, that size must be expected_side x
/// expected_side.
template <typename T>
TrainingSet<T> load_training_set(const std::vector<SampleRecord>& records,
                                 int expected_side = -1) {
  if (records.empty()) throw InputError("load_training_set: no records");
  TrainingSet<T> set;
  set.reserve(records.size());
  for (const SampleRecord& r : records) {
    TrainingSample<T> sample;
    sample.image = load_and_preprocess<T>(r);
    sample.label = r.is_spoof ? 1 : 0;
    if (expected_side > 0 && (sample.image.h != expected_side || sample.image.w != expected_side)) {
      throw InputError("'" + r.image_path + "' is " + std::to_string(sample.image.h) + "x" +
                       std::to_string(sample.image.w) + ", expected " +
                       std::to_string(expected_side) + "x" + std::to_string(expected_side));
    }
    if (!set.empty() && !(set.front().image.same_shape(sample.image))) {
      throw InputError("'" + r.image_path + "' does not match the size of the other samples");
    }
    set.push_back(std::move(sample));
  }
  return set;
}

}  // namespace ssrfcn
