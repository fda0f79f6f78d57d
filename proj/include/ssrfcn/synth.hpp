#pragma once

#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "ssrfcn/dataset.hpp"
#include "ssrfcn/error.hpp"
#include "ssrfcn/image_io.hpp"
#include "ssrfcn/region.hpp"
#include "ssrfcn/rng.hpp"

namespace ssrfcn {

// Synthetic stand-in for a face anti-spoofing corpus. Lives are smooth
// band-limited textures under an illumination gradient; spoofs add a
// high-frequency sinusoidal grid (a moire surrogate for print/replay
// artifacts) either across the whole frame or only inside a recorded box
// (partial-attack surrogate). The grid's period (3-5 px) sits far above the
// live textures' spatial frequencies (period >= 16 px), so the classes are
// separable by local texture, like the real task.

enum class ArtifactKind { global_texture, partial_patch };

inline const char* to_string(ArtifactKind k) {
  return k == ArtifactKind::global_texture ? "global_texture" : "partial_patch";
}

inline ArtifactKind artifact_kind_from_string(const std::string& s) {
  if (s == "global_texture") return ArtifactKind::global_texture;
  if (s == "partial_patch") return ArtifactKind::partial_patch;
  throw ConfigError("unknown artifact kind '" + s + "'");
}

struct SynthConfig {
  int image_side = 256;
  int frames_per_video = 2;
  int live_subjects = 8;
  int live_videos_per_subject = 1;
  int spoof_types = 1;
  int spoof_subjects_per_type = 8;  // disjoint subject set per type
  int spoof_videos_per_subject = 1;
  ArtifactKind artifact = ArtifactKind::global_texture;
  int box_min = 24, box_max = 32;      // partial_patch box side range, pixels
  double artifact_amplitude = 40.0;    // grid amplitude, 8-bit pixel units
  std::uint64_t seed = 1;

  void validate() const {
    if (image_side < 8) throw ConfigError("synth: image_side must be >= 8");
    if (frames_per_video < 1) throw ConfigError("synth: frames_per_video must be >= 1");
    if (live_subjects < 1 || live_videos_per_subject < 1) {
      throw ConfigError("synth: need at least one live subject and video");
    }
    if (spoof_types < 1 || spoof_types > 99) throw ConfigError("synth: spoof_types must be 1-99");
    if (spoof_subjects_per_type < 1 || spoof_videos_per_subject < 1) {
      throw ConfigError("synth: need at least one spoof subject and video");
    }
    if (artifact == ArtifactKind::partial_patch) {
      if (box_min < 1 || box_max < box_min || box_max > image_side) {
        throw ConfigError("synth: need 1 <= box_min <= box_max <= image_side");
      }
    }
    if (artifact_amplitude <= 0.0) throw ConfigError("synth: artifact_amplitude must be > 0");
  }

  int live_count() const { return live_subjects * live_videos_per_subject * frames_per_video; }
  int spoof_count() const {
    return spoof_types * spoof_subjects_per_type * spoof_videos_per_subject * frames_per_video;
  }
};

namespace synth_detail {

struct Wave {
  double amplitude = 0.0;
  double freq_x = 0.0, freq_y = 0.0;  // radians per pixel
  double phase = 0.0;
};

constexpr int kWaves = 4;
constexpr double kPi = 3.141592653589793238462643383279502884;

}  // namespace synth_detail

/// Everything needed to render one video deterministically, plus its
/// manifest identity. Produced by plan_videos, consumed by render_frame.
struct PlannedVideo {
  // identity
  bool is_spoof = false;
  std::string spoof_type;  // "live" or "typeNN"
  std::string subject_id;
  std::string video_id;
  int frames = 0;
  int side = 0;

  // live base texture
  std::array<synth_detail::Wave, synth_detail::kWaves> waves{};
  double grad_x = 0.0, grad_y = 0.0;        // illumination slope over the frame
  std::array<double, 3> channel_offset{};   // constant per-channel shift

  // artifact (spoof videos only)
  double artifact_period = 4.0;  // pixels
  double artifact_amplitude = 0.0;
  Region artifact_box;           // full frame for global_texture

  std::uint64_t frame_jitter_seed = 0;  // per-frame phase jitter stream
};

/// Deterministic plan for the whole dataset: live videos first, then spoof
/// videos grouped by type. Subject sets are disjoint between types.
inline std::vector<PlannedVideo> plan_videos(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<PlannedVideo> plan;
  int ordinal = 0;

  auto base_params = [&cfg, &ordinal](PlannedVideo& v) {
    Rng rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(ordinal)));
    for (synth_detail::Wave& wave : v.waves) {
      wave.amplitude = rng.uniform(8.0, 20.0);
      // Band-limited: period between 16 px and the frame side.
      const double period = rng.uniform(16.0, static_cast<double>(cfg.image_side));
      const double angle = rng.uniform(0.0, 2.0 * synth_detail::kPi);
      wave.freq_x = 2.0 * synth_detail::kPi / period * std::cos(angle);
      wave.freq_y = 2.0 * synth_detail::kPi / period * std::sin(angle);
      wave.phase = rng.uniform(0.0, 2.0 * synth_detail::kPi);
    }
    v.grad_x = rng.uniform(-30.0, 30.0);
    v.grad_y = rng.uniform(-30.0, 30.0);
    for (double& off : v.channel_offset) off = rng.uniform(-10.0, 10.0);
    if (v.is_spoof) {
      // Per-type base period in [3,5] px, jittered per video.
      int type_index = 0;
      (void)std::sscanf(v.spoof_type.c_str(), "type%d", &type_index);
      const double base_period = 3.0 + 2.0 * ((type_index - 1) % 5) / 4.0;
      v.artifact_period = std::min(5.0, std::max(3.0, base_period + rng.uniform(-0.2, 0.2)));
      v.artifact_amplitude = cfg.artifact_amplitude * rng.uniform(0.85, 1.15);
      if (cfg.artifact == ArtifactKind::partial_patch) {
        const int bh = rng.uniform_int(cfg.box_min, cfg.box_max);
        const int bw = rng.uniform_int(cfg.box_min, cfg.box_max);
        v.artifact_box.height = bh;
        v.artifact_box.width = bw;
        v.artifact_box.top = rng.uniform_int(0, cfg.image_side - bh);
        v.artifact_box.left = rng.uniform_int(0, cfg.image_side - bw);
      } else {
        v.artifact_box = {0, 0, cfg.image_side, cfg.image_side};
      }
    }
    v.frame_jitter_seed = derive_seed(cfg.seed, 2000000 + static_cast<std::uint64_t>(ordinal));
    v.frames = cfg.frames_per_video;
    v.side = cfg.image_side;
    ++ordinal;
  };

  char buf[64];
  for (int s = 0; s < cfg.live_subjects; ++s) {
    for (int vid = 0; vid < cfg.live_videos_per_subject; ++vid) {
      PlannedVideo v;
      v.is_spoof = false;
      v.spoof_type = "live";
      std::snprintf(buf, sizeof(buf), "live_s%02d", s);
      v.subject_id = buf;
      std::snprintf(buf, sizeof(buf), "live_s%02d_v%d", s, vid);
      v.video_id = buf;
      base_params(v);
      plan.push_back(std::move(v));
    }
  }
  for (int t = 1; t <= cfg.spoof_types; ++t) {
    for (int s = 0; s < cfg.spoof_subjects_per_type; ++s) {
      for (int vid = 0; vid < cfg.spoof_videos_per_subject; ++vid) {
        PlannedVideo v;
        v.is_spoof = true;
        std::snprintf(buf, sizeof(buf), "type%02d", t);
        v.spoof_type = buf;
        std::snprintf(buf, sizeof(buf), "t%02d_s%02d", t, s);
        v.subject_id = buf;
        std::snprintf(buf, sizeof(buf), "t%02d_s%02d_v%d", t, s, vid);
        v.video_id = buf;
        base_params(v);
        plan.push_back(std::move(v));
      }
    }
  }
  return plan;
}

/// Renders one frame of a planned video. Frames of a video share the texture
/// and differ only by per-frame phase jitter. With `with_artifact` false the
/// underlying live base is returned; a partial spoof frame is byte-identical
/// to its base everywhere outside the artifact box.
inline ImageU8 render_frame(const PlannedVideo& v, int frame_index, bool with_artifact) {
  if (frame_index < 0 || frame_index >= v.frames) {
    throw ConfigError("render_frame: frame index out of range");
  }
  Rng jitter(derive_seed(v.frame_jitter_seed, static_cast<std::uint64_t>(frame_index)));
  std::array<double, synth_detail::kWaves> phase;
  for (double& p : phase) p = jitter.uniform(0.0, 2.0 * synth_detail::kPi);
  const double art_phase_x = jitter.uniform(0.0, 2.0 * synth_detail::kPi);
  const double art_phase_y = jitter.uniform(0.0, 2.0 * synth_detail::kPi);

  const int side = v.side;
  std::vector<double> base(static_cast<std::size_t>(side) * side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double val = 128.0;
      for (int k = 0; k < synth_detail::kWaves; ++k) {
        const synth_detail::Wave& wv = v.waves[k];
        val += wv.amplitude * std::sin(wv.freq_x * x + wv.freq_y * y + wv.phase + phase[k]);
      }
      val += v.grad_x * (static_cast<double>(x) / side - 0.5) +
             v.grad_y * (static_cast<double>(y) / side - 0.5);
      base[static_cast<std::size_t>(y) * side + x] = val;
    }
  }

  auto quantize = [](double val) {
    return static_cast<unsigned char>(std::min(255.0, std::max(0.0, std::round(val))));
  };

  ImageU8 image(side, side);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double val = base[static_cast<std::size_t>(y) * side + x];
      unsigned char* px = image.px(y, x);
      for (int c = 0; c < 3; ++c) px[c] = quantize(val + v.channel_offset[c]);
    }
  }

  if (with_artifact && v.is_spoof) {
    const double omega = 2.0 * synth_detail::kPi / v.artifact_period;
    const Region& b = v.artifact_box;
    for (int y = b.top; y < b.top + b.height; ++y) {
      for (int x = b.left; x < b.left + b.width; ++x) {
        const double grid = v.artifact_amplitude * std::sin(omega * x + art_phase_x) *
                            std::sin(omega * y + art_phase_y);
        const double val = base[static_cast<std::size_t>(y) * side + x] + grid;
        unsigned char* px = image.px(y, x);
        for (int c = 0; c < 3; ++c) px[c] = quantize(val + v.channel_offset[c]);
      }
    }
  }
  return image;
}

struct SynthResult {
  std::string manifest_path;
  std::string sidecar_path;
  int live_count = 0;
  int spoof_count = 0;
};

/// Writes images/, manifest.csv and ground_truth.json under out_dir. The
/// sidecar records each image's artifact box ([top,left,h,w], null for
/// lives) for localization tests. Same config and seed give a byte-identical
/// dataset.
inline SynthResult synth_generate(const SynthConfig& cfg, const std::string& out_dir) {
  const std::vector<PlannedVideo> plan = plan_videos(cfg);
  const std::filesystem::path root(out_dir);
  std::filesystem::create_directories(root / "images");

  std::vector<std::pair<std::string, SampleRecord>> manifest_rows;
  nlohmann::json sidecar = nlohmann::json::array();
  SynthResult result;

  char buf[96];
  for (const PlannedVideo& v : plan) {
    for (int f = 0; f < v.frames; ++f) {
      std::snprintf(buf, sizeof(buf), "images/%s_f%02d.png", v.video_id.c_str(), f);
      const std::string rel_path = buf;
      write_png_rgb((root / rel_path).string(), render_frame(v, f, true));

      SampleRecord r;
      r.image_path = rel_path;  // stored relative; load_manifest resolves it
      r.is_spoof = v.is_spoof;
      r.spoof_type = v.spoof_type;
      r.video_id = v.video_id;
      r.subject_id = v.subject_id;
      r.frame_index = f;
      manifest_rows.emplace_back(rel_path, r);

      nlohmann::json entry;
      entry["image_path"] = rel_path;
      if (v.is_spoof) {
        entry["artifact_box"] = {v.artifact_box.top, v.artifact_box.left, v.artifact_box.height,
                                 v.artifact_box.width};
      } else {
        entry["artifact_box"] = nullptr;
      }
      sidecar.push_back(std::move(entry));
      (v.is_spoof ? result.spoof_count : result.live_count) += 1;
    }
  }

  result.manifest_path = (root / "manifest.csv").string();
  save_manifest(result.manifest_path, manifest_rows);

  result.sidecar_path = (root / "ground_truth.json").string();
  {
    const std::string tmp = result.sidecar_path + ".tmp";
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out << sidecar.dump(2) << "\n";
    out.flush();
    if (!out) throw IoError("failed writing '" + tmp + "'");
    out.close();
    std::error_code ec;
    std::filesystem::rename(tmp, result.sidecar_path, ec);
    if (ec) throw IoError("failed to move '" + tmp + "': " + ec.message());
  }
  return result;
}

/// Parses a ground-truth sidecar back into (relative path, optional box)
/// pairs; a missing box is represented by a zero-size region.
inline std::vector<std::pair<std::string, Region>> load_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open sidecar '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("sidecar '" + path + "': " + e.what());
  }
  if (!doc.is_array()) throw ParseError("sidecar '" + path + "': expected a JSON array");
  std::vector<std::pair<std::string, Region>> out;
  for (const auto& entry : doc) {
    if (!entry.contains("image_path") || !entry.contains("artifact_box")) {
      throw ParseError("sidecar '" + path + "': entry missing image_path or artifact_box");
    }
    Region box;
    if (!entry["artifact_box"].is_null()) {
      const auto& b = entry["artifact_box"];
      if (!b.is_array() || b.size() != 4) {
        throw ParseError("sidecar '" + path + "': artifact_box must be [top,left,h,w]");
      }
      box.top = b[0].get<int>();
      box.left = b[1].get<int>();
      box.height = b[2].get<int>();
      box.width = b[3].get<int>();
    }
    out.emplace_back(entry["image_path"].get<std::string>(), box);
  }
  return out;
}

}  // namespace ssrfcn
