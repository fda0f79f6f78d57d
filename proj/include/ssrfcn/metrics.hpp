#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ssrfcn/error.hpp"

namespace ssrfcn {

// All metrics treat spoof as the positive class and classify with the rule
// "spoof iff score >= threshold".

struct VideoScore {
  std::string video_id;
  double score = 0.0;
  bool is_spoof = false;
  std::string spoof_type;  // "live" for bona-fide videos
};

using ScoreSet = std::vector<VideoScore>;

struct FrameScore {
  std::string video_id;
  double score = 0.0;
  bool is_spoof = false;
  std::string spoof_type;
};

/// Temporal average of one video's frame scores.
inline double aggregate_video(const std::vector<double>& frame_scores) {
  if (frame_scores.empty()) throw InputError("aggregate_video: no frame scores");
  double sum = 0.0;
  for (double s : frame_scores) sum += s;
  return sum / static_cast<double>(frame_scores.size());
}

/// Groups frame scores by video (first-appearance order) and averages them.
inline ScoreSet aggregate_videos(const std::vector<FrameScore>& frames) {
  if (frames.empty()) throw InputError("aggregate_videos: no frame scores");
  ScoreSet videos;
  std::vector<std::size_t> counts;
  std::unordered_map<std::string, std::size_t> index;
  for (const FrameScore& f : frames) {
    if (!std::isfinite(f.score)) {
      throw InputError("aggregate_videos: non-finite score in video '" + f.video_id + "'");
    }
    auto [it, inserted] = index.try_emplace(f.video_id, videos.size());
    if (inserted) {
      videos.push_back({f.video_id, f.score, f.is_spoof, f.spoof_type});
      counts.push_back(1);
    } else {
      VideoScore& v = videos[it->second];
      if (v.is_spoof != f.is_spoof || v.spoof_type != f.spoof_type) {
        throw InputError("aggregate_videos: inconsistent labels within video '" + f.video_id +
                         "'");
      }
      v.score += f.score;
      counts[it->second] += 1;
    }
  }
  for (std::size_t i = 0; i < videos.size(); ++i) {
    videos[i].score /= static_cast<double>(counts[i]);
  }
  return videos;
}

struct ConfusionCounts {
  long long tp = 0, tn = 0, fp = 0, fn = 0;
};

inline ConfusionCounts confusion_at(const ScoreSet& scores, double threshold) {
  ConfusionCounts c;
  for (const VideoScore& v : scores) {
    const bool flagged = v.score >= threshold;
    if (v.is_spoof) {
      flagged ? ++c.tp : ++c.fn;
    } else {
      flagged ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

/// APCER = spoofs classified live / all spoofs; BPCER = lives classified
/// spoof / all lives.
inline std::pair<double, double> apcer_bpcer(const ConfusionCounts& c) {
  if (c.fn + c.tp <= 0) throw MetricError("apcer_bpcer: no attack presentations");
  if (c.fp + c.tn <= 0) throw MetricError("apcer_bpcer: no bona-fide presentations");
  const double apcer = static_cast<double>(c.fn) / static_cast<double>(c.fn + c.tp);
  const double bpcer = static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
  return {apcer, bpcer};
}

/// Per-spoof-type APCER at a fixed threshold.
inline std::map<std::string, double> per_type_apcer(const ScoreSet& scores, double threshold) {
  std::map<std::string, std::pair<long long, long long>> missed_and_total;
  for (const VideoScore& v : scores) {
    if (!v.is_spoof) continue;
    auto& [missed, total] = missed_and_total[v.spoof_type];
    total += 1;
    if (v.score < threshold) missed += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [type, counts] : missed_and_total) {
    out[type] = static_cast<double>(counts.first) / static_cast<double>(counts.second);
  }
  return out;
}

/// ACER = (worst per-type APCER + BPCER) / 2.
inline double acer(const std::map<std::string, double>& per_type, double bpcer) {
  if (per_type.empty()) throw InputError("acer: no per-type APCER values");
  double worst = 0.0;
  for (const auto& [type, a] : per_type) worst = std::max(worst, a);
  return (worst + bpcer) / 2.0;
}

namespace detail {

inline void split_scores(const ScoreSet& scores, std::vector<double>& lives,
                         std::vector<double>& spoofs, const char* op) {
  lives.clear();
  spoofs.clear();
  for (const VideoScore& v : scores) {
    if (!std::isfinite(v.score)) {
      throw InputError(std::string(op) + ": non-finite score in video '" + v.video_id + "'");
    }
    (v.is_spoof ? spoofs : lives).push_back(v.score);
  }
  if (lives.empty() || spoofs.empty()) {
    throw MetricError(std::string(op) + ": need at least one live and one spoof score");
  }
  std::sort(lives.begin(), lives.end());
  std::sort(spoofs.begin(), spoofs.end());
}

/// Number of sorted values < t.
inline long long count_below(const std::vector<double>& sorted, double t) {
  const auto it = std::lower_bound(sorted.begin(), sorted.end(), t);
  return static_cast<long long>(it - sorted.begin());
}

}  // namespace detail

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

/// Discrete EER: sweep the midpoints between consecutive distinct scores of
/// the pooled set (plus one sentinel below and above everything) and return
/// the threshold minimizing |APCER - BPCER|; ties go to the smaller
/// threshold. The reported EER is the mean of the two rates there.
///
/// The gap comparison is done on integer counts (cross-multiplied onto a
/// common denominator) so that mathematically tied thresholds are recognized
/// as ties regardless of floating-point rounding in the rates.
inline EerResult eer(const ScoreSet& scores) {
  std::vector<double> lives, spoofs;
  detail::split_scores(scores, lives, spoofs, "eer");

  std::vector<double> pooled;
  pooled.reserve(lives.size() + spoofs.size());
  pooled.insert(pooled.end(), lives.begin(), lives.end());
  pooled.insert(pooled.end(), spoofs.begin(), spoofs.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  std::vector<double> candidates;
  candidates.push_back(pooled.front() - 1.0);
  for (std::size_t i = 0; i + 1 < pooled.size(); ++i) {
    candidates.push_back(0.5 * (pooled[i] + pooled[i + 1]));
  }
  candidates.push_back(pooled.back() + 1.0);

  const long long n_live = static_cast<long long>(lives.size());
  const long long n_spoof = static_cast<long long>(spoofs.size());
  EerResult best;
  long long best_gap = std::numeric_limits<long long>::max();
  for (double t : candidates) {
    const long long missed_spoofs = detail::count_below(spoofs, t);
    const long long flagged_lives = n_live - detail::count_below(lives, t);
    // |APCER - BPCER| scaled by n_spoof * n_live.
    const long long gap = std::llabs(missed_spoofs * n_live - flagged_lives * n_spoof);
    if (gap < best_gap) {
      best_gap = gap;
      best.eer = 0.5 * (static_cast<double>(missed_spoofs) / static_cast<double>(n_spoof) +
                        static_cast<double>(flagged_lives) / static_cast<double>(n_live));
      best.threshold = t;
    }
  }
  return best;
}

/// True detection rate at a bounded false detection rate. Candidate
/// thresholds are the distinct live scores (the points where the FDR steps)
/// plus a sentinel just above the highest live score; t* is the smallest
/// candidate with frac(lives >= t*) <= fdr_target, and the result is
/// frac(spoofs >= t*).
inline double tdr_at_fdr(const ScoreSet& scores, double fdr_target = 0.02) {
  if (!(fdr_target >= 0.0 && fdr_target <= 1.0)) {
    throw ConfigError("tdr_at_fdr: fdr_target must lie in [0,1]");
  }
  std::vector<double> lives, spoofs;
  detail::split_scores(scores, lives, spoofs, "tdr_at_fdr");

  std::vector<double> candidates = lives;
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  candidates.push_back(std::nextafter(lives.back(), std::numeric_limits<double>::infinity()));

  const double n_live = static_cast<double>(lives.size());
  const double n_spoof = static_cast<double>(spoofs.size());
  for (double t : candidates) {
    const double fdr =
        static_cast<double>(static_cast<long long>(lives.size()) - detail::count_below(lives, t)) /
        n_live;
    if (fdr <= fdr_target) {
      return static_cast<double>(static_cast<long long>(spoofs.size()) -
                                 detail::count_below(spoofs, t)) /
             n_spoof;
    }
  }
  return 0.0;  // unreachable: the sentinel always satisfies fdr = 0
}

/// Half total error rate: mean of the false detection rate (lives flagged
/// spoof) and the false rejection rate (spoofs passed as live).
inline double hter(double fdr, double frr) { return 0.5 * (fdr + frr); }

}  // namespace ssrfcn
