#pragma once

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ssrfcn/dataset.hpp"
#include "ssrfcn/error.hpp"
#include "ssrfcn/metrics.hpp"
#include "ssrfcn/rng.hpp"

namespace ssrfcn {

enum class ProtocolKind { leave_one_spoof_out, known_split, cross_dataset };

inline const char* to_string(ProtocolKind k) {
  switch (k) {
    case ProtocolKind::leave_one_spoof_out: return "leave_one_spoof_out";
    case ProtocolKind::known_split: return "known_split";
    case ProtocolKind::cross_dataset: return "cross_dataset";
  }
  return "?";
}

inline ProtocolKind protocol_kind_from_string(const std::string& s) {
  if (s == "leave_one_spoof_out") return ProtocolKind::leave_one_spoof_out;
  if (s == "known_split") return ProtocolKind::known_split;
  if (s == "cross_dataset") return ProtocolKind::cross_dataset;
  throw ConfigError("unknown protocol '" + s + "'");
}

struct ProtocolSpec {
  ProtocolKind kind = ProtocolKind::leave_one_spoof_out;
  double live_holdout_fraction = 0.2;  // lives moved to the test side of each LOSO cell
  double test_fraction = 0.4;          // known_split test share
  std::uint64_t seed = 0;
  double fdr_target = 0.02;
  double decision_threshold = 0.5;
  std::string only_type;  // LOSO: evaluate a single held-out type when non-empty

  void validate() const {
    if (!(live_holdout_fraction > 0.0 && live_holdout_fraction < 1.0)) {
      throw ConfigError("protocol: live_holdout_fraction must lie in (0,1)");
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
      throw ConfigError("protocol: test_fraction must lie in (0,1)");
    }
    if (!(fdr_target >= 0.0 && fdr_target <= 1.0)) {
      throw ConfigError("protocol: fdr_target must lie in [0,1]");
    }
  }
};

/// Scores one frame; produced by a CellTrainer, consumed on the test side.
using FrameScorer = std::function<double(const SampleRecord&)>;

/// Trains on one cell's training records with a derived seed and returns the
/// frame scorer to evaluate. Protocol structure is independent of what the
/// trainer actually does, which keeps protocol tests cheap.
using CellTrainer = std::function<FrameScorer(const std::vector<SampleRecord>&, std::uint64_t)>;

struct CellReport {
  std::string name;
  std::size_t train_count = 0, test_count = 0;  // frames
  double apcer = 0.0, bpcer = 0.0, acer = 0.0;  // at the decision threshold
  double eer = 0.0, eer_threshold = 0.0;
  double tdr = 0.0;
  double hter = std::numeric_limits<double>::quiet_NaN();  // cross_dataset only
  bool degenerate_single_type = false;
};

struct SummaryStat {
  double mean = 0.0, stddev = 0.0;  // population std over cells
};

struct ProtocolReport {
  ProtocolKind kind = ProtocolKind::leave_one_spoof_out;
  double fdr_target = 0.02;
  double decision_threshold = 0.5;
  std::vector<CellReport> cells;
  SummaryStat acer_stat, eer_stat, tdr_stat;

  nlohmann::json to_json() const {
    nlohmann::json doc;
    doc["protocol"] = to_string(kind);
    doc["decision_threshold"] = decision_threshold;
    doc["fdr_target"] = fdr_target;
    doc["cells"] = nlohmann::json::array();
    for (const CellReport& c : cells) {
      nlohmann::json cell;
      cell["name"] = c.name;
      cell["train_count"] = c.train_count;
      cell["test_count"] = c.test_count;
      cell["apcer"] = c.apcer;
      cell["bpcer"] = c.bpcer;
      cell["acer"] = c.acer;
      cell["eer"] = c.eer;
      cell["eer_threshold"] = c.eer_threshold;
      cell["tdr_at_fdr"] = c.tdr;
      if (!std::isnan(c.hter)) cell["hter"] = c.hter;
      if (c.degenerate_single_type) cell["degenerate_single_type"] = true;
      doc["cells"].push_back(std::move(cell));
    }
    auto stat = [](const SummaryStat& s) {
      return nlohmann::json{{"mean", s.mean}, {"std", s.stddev}};
    };
    doc["summary"] = {{"acer", stat(acer_stat)}, {"eer", stat(eer_stat)},
                      {"tdr_at_fdr", stat(tdr_stat)}};
    return doc;
  }

  std::string table() const {
    std::ostringstream out;
    out << "protocol: " << to_string(kind) << "  (decision threshold "
        << std::fixed << std::setprecision(2) << decision_threshold << ", TDR @ "
        << std::setprecision(1) << fdr_target * 100.0 << "% FDR)\n";
    out << std::left << std::setw(16) << "cell" << std::right << std::setw(7) << "train"
        << std::setw(7) << "test" << std::setw(9) << "APCER" << std::setw(9) << "BPCER"
        << std::setw(9) << "ACER" << std::setw(9) << "EER" << std::setw(9) << "TDR";
    const bool with_hter = kind == ProtocolKind::cross_dataset;
    if (with_hter) out << std::setw(9) << "HTER";
    out << "\n";
    out << std::setprecision(4);
    for (const CellReport& c : cells) {
      out << std::left << std::setw(16)
          << (c.name + (c.degenerate_single_type ? "*" : "")) << std::right << std::setw(7)
          << c.train_count << std::setw(7) << c.test_count << std::setw(9) << c.apcer
          << std::setw(9) << c.bpcer << std::setw(9) << c.acer << std::setw(9) << c.eer
          << std::setw(9) << c.tdr;
      if (with_hter) out << std::setw(9) << c.hter;
      out << "\n";
    }
    out << "mean +- std     ACER " << acer_stat.mean << " +- " << acer_stat.stddev << " | EER "
        << eer_stat.mean << " +- " << eer_stat.stddev << " | TDR " << tdr_stat.mean << " +- "
        << tdr_stat.stddev << "\n";
    for (const CellReport& c : cells) {
      if (c.degenerate_single_type) {
        out << "* single spoof type: cell evaluated with known-split semantics\n";
        break;
      }
    }
    return out.str();
  }
};

namespace detail {

inline std::vector<std::string> sorted_distinct_subjects(
    const std::vector<SampleRecord>& records,
    const std::function<bool(const SampleRecord&)>& keep = nullptr) {
  std::set<std::string> subjects;
  for (const SampleRecord& r : records) {
    if (!keep || keep(r)) subjects.insert(r.subject_id);
  }
  return {subjects.begin(), subjects.end()};
}

/// Seeded pick of round(fraction * n) subjects, clamped so both sides stay
/// non-empty.
inline std::set<std::string> pick_subjects(std::vector<std::string> subjects, double fraction,
                                           Rng& rng, const char* what) {
  const std::size_t n = subjects.size();
  if (n < 2) {
    throw ProtocolError(std::string("protocol: need at least 2 ") + what +
                        " subjects to split, found " + std::to_string(n));
  }
  for (std::size_t i = n; i > 1; --i) {
    std::swap(subjects[i - 1], subjects[rng.uniform_index(i)]);
  }
  std::size_t k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  k = std::min(n - 1, std::max<std::size_t>(1, k));
  return {subjects.begin(), subjects.begin() + static_cast<long>(k)};
}

inline void verify_subject_disjoint(const std::vector<SampleRecord>& train,
                                    const std::vector<SampleRecord>& test,
                                    const std::string& cell) {
  std::set<std::string> train_subjects;
  for (const SampleRecord& r : train) train_subjects.insert(r.subject_id);
  for (const SampleRecord& r : test) {
    if (train_subjects.count(r.subject_id)) {
      throw ProtocolError("protocol cell '" + cell + "': subject '" + r.subject_id +
                          "' appears in both train and test");
    }
  }
}

inline CellReport evaluate_cell(const std::string& name, const CellTrainer& trainer,
                                const std::vector<SampleRecord>& train,
                                const std::vector<SampleRecord>& test, const ProtocolSpec& spec,
                                std::uint64_t cell_seed, bool check_subjects) {
  if (train.empty()) throw ProtocolError("protocol cell '" + name + "': empty training set");
  if (test.empty()) throw ProtocolError("protocol cell '" + name + "': empty test set");
  if (check_subjects) verify_subject_disjoint(train, test, name);

  bool has_live = false, has_spoof = false;
  for (const SampleRecord& r : test) (r.is_spoof ? has_spoof : has_live) = true;
  if (!has_live || !has_spoof) {
    throw ProtocolError("protocol cell '" + name + "': test side needs both classes");
  }

  const FrameScorer scorer = trainer(train, cell_seed);
  std::vector<FrameScore> frames;
  frames.reserve(test.size());
  for (const SampleRecord& r : test) {
    frames.push_back({r.video_id, scorer(r), r.is_spoof, r.spoof_type});
  }
  const ScoreSet videos = aggregate_videos(frames);

  CellReport cell;
  cell.name = name;
  cell.train_count = train.size();
  cell.test_count = test.size();
  const auto [apcer, bpcer] = apcer_bpcer(confusion_at(videos, spec.decision_threshold));
  cell.apcer = apcer;
  cell.bpcer = bpcer;
  cell.acer = acer(per_type_apcer(videos, spec.decision_threshold), bpcer);
  const EerResult e = eer(videos);
  cell.eer = e.eer;
  cell.eer_threshold = e.threshold;
  cell.tdr = tdr_at_fdr(videos, spec.fdr_target);
  return cell;
}

inline void summarize(ProtocolReport& report) {
  auto stat = [&report](const std::function<double(const CellReport&)>& get) {
    SummaryStat s;
    if (report.cells.empty()) return s;
    double sum = 0.0, sum_sq = 0.0;
    for (const CellReport& c : report.cells) {
      const double v = get(c);
      sum += v;
      sum_sq += v * v;
    }
    const double n = static_cast<double>(report.cells.size());
    s.mean = sum / n;
    s.stddev = std::sqrt(std::max(0.0, sum_sq / n - s.mean * s.mean));
    return s;
  };
  report.acer_stat = stat([](const CellReport& c) { return c.acer; });
  report.eer_stat = stat([](const CellReport& c) { return c.eer; });
  report.tdr_stat = stat([](const CellReport& c) { return c.tdr; });
}

inline CellReport known_split_cell(const std::string& name, const ProtocolSpec& spec,
                                   const CellTrainer& trainer,
                                   const std::vector<SampleRecord>& records,
                                   std::uint64_t cell_seed) {
  Rng rng(derive_seed(spec.seed, 7));
  const std::set<std::string> test_subjects =
      pick_subjects(sorted_distinct_subjects(records), spec.test_fraction, rng, "manifest");
  std::vector<SampleRecord> train, test;
  for (const SampleRecord& r : records) {
    (test_subjects.count(r.subject_id) ? test : train).push_back(r);
  }
  return evaluate_cell(name, trainer, train, test, spec, cell_seed, true);
}

}  // namespace detail

/// Runs a protocol over one manifest (or two for cross_dataset: the first is
/// trained on, the second scored). Every split is subject-disjoint, which is
/// verified, not assumed.
inline ProtocolReport run_protocol(const ProtocolSpec& spec, const CellTrainer& trainer,
                                   const std::vector<SampleRecord>& records,
                                   const std::vector<SampleRecord>* cross_test = nullptr) {
  spec.validate();
  if (records.empty()) throw ProtocolError("protocol: empty manifest");
  for (const SampleRecord& r : records) {
    if (r.subject_id.empty() || r.video_id.empty() || r.spoof_type.empty()) {
      throw ProtocolError("protocol: records must carry subject, video and spoof-type tags");
    }
  }

  ProtocolReport report;
  report.kind = spec.kind;
  report.fdr_target = spec.fdr_target;
  report.decision_threshold = spec.decision_threshold;

  switch (spec.kind) {
    case ProtocolKind::known_split: {
      report.cells.push_back(detail::known_split_cell("known_split", spec, trainer, records,
                                                      derive_seed(spec.seed, 0)));
      break;
    }

    case ProtocolKind::cross_dataset: {
      if (!cross_test) {
        throw ProtocolError("protocol: cross_dataset needs a second (test) manifest");
      }
      if (cross_test->empty()) throw ProtocolError("protocol: empty test manifest");
      // Subjects come from different corpora here, so identical subject ids
      // would denote different people; the disjointness check is skipped.
      CellReport cell = detail::evaluate_cell("cross_dataset", trainer, records, *cross_test,
                                              spec, derive_seed(spec.seed, 0), false);
      cell.hter = hter(cell.bpcer, cell.apcer);
      report.cells.push_back(std::move(cell));
      break;
    }

    case ProtocolKind::leave_one_spoof_out: {
      std::set<std::string> type_set;
      for (const SampleRecord& r : records) {
        if (r.is_spoof) type_set.insert(r.spoof_type);
      }
      if (type_set.empty()) throw ProtocolError("protocol: manifest has no spoof samples");
      const std::vector<std::string> types(type_set.begin(), type_set.end());

      if (types.size() == 1) {
        // Nothing to hold out: fall back to known-split semantics and say so.
        std::cerr << "warning: single spoof type '" << types[0]
                  << "', leave-one-out degenerates to a known split\n";
        CellReport cell = detail::known_split_cell(types[0], spec, trainer, records,
                                                   derive_seed(spec.seed, 0));
        cell.degenerate_single_type = true;
        report.cells.push_back(std::move(cell));
        break;
      }

      for (std::size_t k = 0; k < types.size(); ++k) {
        const std::string& held_out = types[k];
        if (!spec.only_type.empty() && held_out != spec.only_type) continue;

        Rng rng(derive_seed(spec.seed, 100 + k));
        const std::set<std::string> live_holdout = detail::pick_subjects(
            detail::sorted_distinct_subjects(
                records, [](const SampleRecord& r) { return !r.is_spoof; }),
            spec.live_holdout_fraction, rng, "live");

        std::set<std::string> test_subjects = live_holdout;
        for (const SampleRecord& r : records) {
          if (r.is_spoof && r.spoof_type == held_out) test_subjects.insert(r.subject_id);
        }

        std::vector<SampleRecord> train, test;
        for (const SampleRecord& r : records) {
          if (r.is_spoof && r.spoof_type == held_out) {
            test.push_back(r);
          } else if (!r.is_spoof && live_holdout.count(r.subject_id)) {
            test.push_back(r);
          } else if (!test_subjects.count(r.subject_id)) {
            train.push_back(r);
          }  // remaining records share a subject with the test side and are dropped
        }
        report.cells.push_back(detail::evaluate_cell(held_out, trainer, train, test, spec,
                                                     derive_seed(spec.seed, k), true));
      }
      if (report.cells.empty()) {
        throw ProtocolError("protocol: spoof type '" + spec.only_type + "' not in the manifest");
      }
      break;
    }
  }

  detail::summarize(report);
  return report;
}

}  // namespace ssrfcn
