// Command-line front end: synthesize benchmark data, train both stages,
// evaluate protocols, score single images, and render spoof heatmaps.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "ssrfcn/ssrfcn.hpp"

namespace {

using Scalar = float;

struct CommonTrainFlags {
  std::string manifest;
  std::string out;
  std::string log_path;
  int epochs = 20;
  int batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double flip_probability = 0.5;
  int frame_stride = 1;
  int image_side = 0;  // 0: any size, enforced uniform
  bool save_optimizer = false;
};

void add_train_flags(CLI::App* cmd, CommonTrainFlags& f) {
  cmd->add_option("--manifest", f.manifest, "Training manifest CSV")->required();
  cmd->add_option("--out", f.out, "Output weight file");
  cmd->add_option("--log", f.log_path, "JSON-lines epoch log (default: <out>.log.jsonl)");
  cmd->add_option("--epochs", f.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch-size", f.batch_size, "Mini-batch size")->capture_default_str();
  cmd->add_option("--learning-rate", f.learning_rate, "Adam learning rate")
      ->capture_default_str();
  cmd->add_option("--seed", f.seed, "PRNG seed")->capture_default_str();
  cmd->add_option("--flip-probability", f.flip_probability, "Horizontal flip probability")
      ->capture_default_str();
  cmd->add_option("--frame-stride", f.frame_stride, "Keep every n-th frame of each video")
      ->capture_default_str();
  cmd->add_option("--image-side", f.image_side,
                  "Expected square image side (0 accepts any uniform size)")
      ->capture_default_str();
  cmd->add_flag("--save-optimizer", f.save_optimizer,
                "Store Adam state in the weight file for exact resumption");
}

ssrfcn::TrainingSet<Scalar> load_set(const CommonTrainFlags& f) {
  const auto records =
      ssrfcn::filter_frame_stride(ssrfcn::load_manifest(f.manifest), f.frame_stride);
  return ssrfcn::load_training_set<Scalar>(records, f.image_side > 0 ? f.image_side : -1);
}

/// Appends epoch reports to a JSON-lines log and echoes them to stderr.
class EpochLogger {
 public:
  EpochLogger(std::string path, bool strict) : strict_(strict) {
    out_.open(path, std::ios::trunc);
    if (!out_) throw ssrfcn::IoError("cannot open log file '" + path + "'");
  }

  bool operator()(const ssrfcn::EpochReport& r) {
    nlohmann::json line;
    line["stage"] = r.stage;
    line["epoch"] = r.epoch;
    line["mean_loss"] = r.mean_loss;
    line["accuracy"] = r.accuracy;
    line["wall_time_sec"] = strict_ ? 0.0 : r.wall_time_sec;
    out_ << line.dump() << "\n";
    out_.flush();
    std::cerr << "stage " << r.stage << " epoch " << r.epoch << ": loss " << r.mean_loss
              << ", accuracy " << r.accuracy << "\n";
    return true;
  }

 private:
  std::ofstream out_;
  bool strict_;
};

int cmd_synth(const ssrfcn::SynthConfig& cfg, const std::string& out_dir) {
  const ssrfcn::SynthResult result = ssrfcn::synth_generate(cfg, out_dir);
  std::cout << "wrote " << result.live_count << " live and " << result.spoof_count
            << " spoof frames\nmanifest: " << result.manifest_path
            << "\nground truth: " << result.sidecar_path << "\n";
  return 0;
}

int cmd_train(const CommonTrainFlags& flags, bool strict) {
  const auto data = load_set(flags);
  ssrfcn::FcnModel<Scalar> model = ssrfcn::init_model<Scalar>(ssrfcn::FcnConfig{}, flags.seed);
  ssrfcn::AdamState<Scalar> adam;

  ssrfcn::TrainConfig cfg;
  cfg.learning_rate = flags.learning_rate;
  cfg.batch_size = flags.batch_size;
  cfg.epochs = flags.epochs;
  cfg.seed = flags.seed;
  cfg.flip_probability = flags.flip_probability;
  cfg.record_wall_time = !strict;
  EpochLogger logger(flags.log_path, strict);
  cfg.on_epoch = std::ref(logger);

  ssrfcn::stage1_train(model, data, cfg, &adam);
  ssrfcn::save_model(flags.out, model, flags.save_optimizer ? &adam : nullptr);
  std::cout << "wrote " << flags.out << "\n";
  return 0;
}

struct FinetuneFlags {
  std::string weights;
  std::string strategy = "self_supervised";
  int min_region = 64;
  int max_region = 256;
  int regions_per_image = 1;
  double tau = 0.5;
  bool freeze_masks = false;
  double full_image_mix = 0.0;
};

int cmd_finetune(const CommonTrainFlags& flags, const FinetuneFlags& ft, bool strict) {
  const auto data = load_set(flags);
  auto checkpoint = ssrfcn::load_checkpoint<Scalar>(ft.weights);
  ssrfcn::FcnModel<Scalar>& model = checkpoint.model;
  ssrfcn::AdamState<Scalar> adam;  // fine-tuning restarts the optimizer

  ssrfcn::TrainConfig cfg;
  cfg.learning_rate = flags.learning_rate;
  cfg.batch_size = flags.batch_size;
  cfg.epochs = flags.epochs;
  cfg.seed = flags.seed;
  cfg.flip_probability = flags.flip_probability;
  cfg.strategy = ssrfcn::region_strategy_from_string(ft.strategy);
  cfg.min_region = ft.min_region;
  cfg.max_region = ft.max_region;
  cfg.regions_per_spoof_image = ft.regions_per_image;
  cfg.tau = ft.tau;
  cfg.freeze_masks = ft.freeze_masks;
  cfg.full_image_mix = ft.full_image_mix;
  cfg.record_wall_time = !strict;
  EpochLogger logger(flags.log_path, strict);
  cfg.on_epoch = std::ref(logger);

  ssrfcn::stage2_finetune(model, data, cfg, &adam);
  ssrfcn::save_model(flags.out, model, flags.save_optimizer ? &adam : nullptr);
  std::cout << "wrote " << flags.out << "\n";
  return 0;
}

/// Frame scorer backed by a fixed set of weights.
ssrfcn::FrameScorer model_scorer(std::shared_ptr<ssrfcn::FcnModel<Scalar>> model) {
  return [model](const ssrfcn::SampleRecord& r) {
    const auto input = ssrfcn::load_and_preprocess<Scalar>(r);
    return static_cast<double>(ssrfcn::spoofness_scores(ssrfcn::model_infer(*model, input))[0]);
  };
}

struct EvalFlags {
  std::string manifest;
  std::string test_manifest;
  std::string weights;
  std::string protocol = "leave_one_spoof_out";
  std::string only_type;
  double live_holdout = 0.2;
  double test_fraction = 0.4;
  double fdr = 0.02;
  double threshold = 0.5;
  std::uint64_t seed = 0;
  int frame_stride = 1;
  std::string report_json = "report.json";
  std::string report_table;
  bool train_cells = false;
  int epochs = 20;
  int finetune_epochs = 0;
  int batch_size = 128;
  double learning_rate = 1e-3;
  int min_region = 64;
  int max_region = 256;
  int image_side = 0;
};

int cmd_eval(const EvalFlags& flags, bool strict) {
  const auto records =
      ssrfcn::filter_frame_stride(ssrfcn::load_manifest(flags.manifest), flags.frame_stride);

  ssrfcn::ProtocolSpec spec;
  spec.kind = ssrfcn::protocol_kind_from_string(flags.protocol);
  spec.live_holdout_fraction = flags.live_holdout;
  spec.test_fraction = flags.test_fraction;
  spec.seed = flags.seed;
  spec.fdr_target = flags.fdr;
  spec.decision_threshold = flags.threshold;
  spec.only_type = flags.only_type;

  ssrfcn::CellTrainer trainer;
  if (flags.train_cells) {
    trainer = [&flags, strict](const std::vector<ssrfcn::SampleRecord>& train,
                               std::uint64_t seed) {
      auto data = ssrfcn::load_training_set<Scalar>(train,
                                                    flags.image_side > 0 ? flags.image_side : -1);
      auto model = std::make_shared<ssrfcn::FcnModel<Scalar>>(
          ssrfcn::init_model<Scalar>(ssrfcn::FcnConfig{}, seed));
      ssrfcn::TrainConfig cfg;
      cfg.learning_rate = flags.learning_rate;
      cfg.batch_size = flags.batch_size;
      cfg.epochs = flags.epochs;
      cfg.seed = seed;
      cfg.record_wall_time = !strict;
      ssrfcn::stage1_train(*model, data, cfg);
      if (flags.finetune_epochs > 0) {
        cfg.epochs = flags.finetune_epochs;
        cfg.min_region = flags.min_region;
        cfg.max_region = flags.max_region;
        cfg.strategy = ssrfcn::RegionStrategy::self_supervised;
        ssrfcn::stage2_finetune(*model, data, cfg);
      }
      return model_scorer(model);
    };
  } else {
    if (flags.weights.empty()) {
      throw ssrfcn::UsageError("eval needs --weights (or --train-cells to train per cell)");
    }
    auto model = std::make_shared<ssrfcn::FcnModel<Scalar>>(
        ssrfcn::load_model<Scalar>(flags.weights));
    trainer = [model](const std::vector<ssrfcn::SampleRecord>&, std::uint64_t) {
      return model_scorer(model);
    };
  }

  std::unique_ptr<std::vector<ssrfcn::SampleRecord>> cross;
  if (spec.kind == ssrfcn::ProtocolKind::cross_dataset) {
    if (flags.test_manifest.empty()) {
      throw ssrfcn::UsageError("cross_dataset needs --test-manifest");
    }
    cross = std::make_unique<std::vector<ssrfcn::SampleRecord>>(ssrfcn::filter_frame_stride(
        ssrfcn::load_manifest(flags.test_manifest), flags.frame_stride));
  }

  const ssrfcn::ProtocolReport report =
      ssrfcn::run_protocol(spec, trainer, records, cross.get());

  const std::string table = report.table();
  std::cout << table;
  if (!flags.report_table.empty()) {
    std::ofstream out(flags.report_table, std::ios::trunc);
    if (!out) throw ssrfcn::IoError("cannot open '" + flags.report_table + "'");
    out << table;
  }
  if (!flags.report_json.empty()) {
    std::ofstream out(flags.report_json, std::ios::trunc);
    if (!out) throw ssrfcn::IoError("cannot open '" + flags.report_json + "'");
    out << report.to_json().dump(2) << "\n";
  }
  return 0;
}

int cmd_infer(const std::string& weights, const std::string& image_path, double threshold,
              bool as_json) {
  const auto model = ssrfcn::load_model<Scalar>(weights);
  const auto input = ssrfcn::preprocess<Scalar>(ssrfcn::read_png_rgb(image_path));
  const double score =
      static_cast<double>(ssrfcn::spoofness_scores(ssrfcn::model_infer(model, input))[0]);
  const bool spoof = score >= threshold;
  if (as_json) {
    nlohmann::json doc;
    doc["spoofness"] = score;
    doc["decision"] = spoof ? "spoof" : "live";
    doc["threshold"] = threshold;
    std::cout << doc.dump() << "\n";
  } else {
    std::cout << "spoofness " << score << "\n" << (spoof ? "spoof" : "live") << "\n";
  }
  return 0;
}

int cmd_visualize(const std::string& weights, const std::string& image_path,
                  const std::string& out_path) {
  const auto model = ssrfcn::load_model<Scalar>(weights);
  const ssrfcn::ImageU8 image = ssrfcn::read_png_rgb(image_path);
  const auto input = ssrfcn::preprocess<Scalar>(image);
  const auto score_map = ssrfcn::model_infer(model, input);
  const double score = static_cast<double>(ssrfcn::spoofness_scores(score_map)[0]);
  const auto heat =
      ssrfcn::bilinear_upscale(ssrfcn::normalize_score_map(score_map), image.h, image.w);
  ssrfcn::write_png_rgb(out_path, ssrfcn::heatmap_overlay(image, heat),
                        {{"spoofness", std::to_string(score)}});
  std::cout << "spoofness " << score << "\nwrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ssrfcn: face anti-spoofing with self-supervised regional fine-tuning"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from an INI-style config file (flags win)");
  bool strict = false;
  app.add_flag("--strict-determinism", strict,
               "Single-threaded, wall-time-free output for bit-reproducible runs");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic live/spoof dataset");
  ssrfcn::SynthConfig synth_cfg;
  std::string synth_out;
  std::string artifact = "global_texture";
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--image-side", synth_cfg.image_side)->capture_default_str();
  synth->add_option("--frames-per-video", synth_cfg.frames_per_video)->capture_default_str();
  synth->add_option("--live-subjects", synth_cfg.live_subjects)->capture_default_str();
  synth->add_option("--live-videos-per-subject", synth_cfg.live_videos_per_subject)
      ->capture_default_str();
  synth->add_option("--spoof-types", synth_cfg.spoof_types)->capture_default_str();
  synth->add_option("--spoof-subjects-per-type", synth_cfg.spoof_subjects_per_type)
      ->capture_default_str();
  synth->add_option("--spoof-videos-per-subject", synth_cfg.spoof_videos_per_subject)
      ->capture_default_str();
  synth->add_option("--artifact", artifact, "global_texture or partial_patch")
      ->check(CLI::IsMember({"global_texture", "partial_patch"}))
      ->capture_default_str();
  synth->add_option("--box-min", synth_cfg.box_min, "Partial artifact box minimum side")
      ->capture_default_str();
  synth->add_option("--box-max", synth_cfg.box_max, "Partial artifact box maximum side")
      ->capture_default_str();
  synth->add_option("--artifact-amplitude", synth_cfg.artifact_amplitude)
      ->capture_default_str();
  synth->add_option("--seed", synth_cfg.seed)->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Stage I: train on whole images");
  CommonTrainFlags train_flags;
  train_flags.out = "stage1.ssrfcn";
  add_train_flags(train, train_flags);

  // finetune
  auto* finetune =
      app.add_subcommand("finetune", "Stage II: regional fine-tuning of stage-I weights");
  CommonTrainFlags ft_flags;
  ft_flags.out = "stage2.ssrfcn";
  add_train_flags(finetune, ft_flags);
  FinetuneFlags ft;
  finetune->add_option("--weights", ft.weights, "Stage-I weight file")->required();
  finetune->add_option("--strategy", ft.strategy,
                       "self_supervised, global, fixed_eye, fixed_nose, fixed_mouth or random")
      ->check(CLI::IsMember({"self_supervised", "global", "fixed_eye", "fixed_nose",
                             "fixed_mouth", "random"}))
      ->capture_default_str();
  finetune->add_option("--min-region", ft.min_region)->capture_default_str();
  finetune->add_option("--max-region", ft.max_region)->capture_default_str();
  finetune->add_option("--regions-per-image", ft.regions_per_image,
                       "Regions drawn per image per epoch")
      ->capture_default_str();
  finetune->add_option("--tau", ft.tau, "Hard-gate threshold for region mining")
      ->capture_default_str();
  finetune->add_flag("--freeze-masks", ft.freeze_masks,
                     "Mine spoof masks once instead of every epoch");
  finetune->add_option("--full-image-mix", ft.full_image_mix,
                       "Fraction of entries trained as full images")
      ->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "Run an evaluation protocol and write reports");
  EvalFlags ev;
  eval->add_option("--manifest", ev.manifest, "Manifest CSV (training side for cross_dataset)")
      ->required();
  eval->add_option("--test-manifest", ev.test_manifest, "Test manifest for cross_dataset");
  eval->add_option("--weights", ev.weights, "Weight file scored as-is in every cell");
  eval->add_option("--protocol", ev.protocol,
                   "leave_one_spoof_out, known_split or cross_dataset")
      ->check(CLI::IsMember({"leave_one_spoof_out", "known_split", "cross_dataset"}))
      ->capture_default_str();
  eval->add_option("--only-type", ev.only_type, "Evaluate a single held-out spoof type");
  eval->add_option("--live-holdout", ev.live_holdout, "Live fraction tested per LOSO cell")
      ->capture_default_str();
  eval->add_option("--test-fraction", ev.test_fraction, "known_split test share")
      ->capture_default_str();
  eval->add_option("--fdr", ev.fdr, "FDR target for the TDR metric")->capture_default_str();
  eval->add_option("--threshold", ev.threshold, "Decision threshold")->capture_default_str();
  eval->add_option("--seed", ev.seed)->capture_default_str();
  eval->add_option("--frame-stride", ev.frame_stride)->capture_default_str();
  eval->add_option("--report-json", ev.report_json, "Machine-readable report path")
      ->capture_default_str();
  eval->add_option("--report-table", ev.report_table, "Also write the table to this path");
  eval->add_flag("--train-cells", ev.train_cells,
                 "Train a fresh model per cell instead of scoring fixed weights");
  eval->add_option("--epochs", ev.epochs, "Stage-I epochs per cell (with --train-cells)")
      ->capture_default_str();
  eval->add_option("--finetune-epochs", ev.finetune_epochs,
                   "Stage-II epochs per cell, 0 to skip (with --train-cells)")
      ->capture_default_str();
  eval->add_option("--batch-size", ev.batch_size)->capture_default_str();
  eval->add_option("--learning-rate", ev.learning_rate)->capture_default_str();
  eval->add_option("--min-region", ev.min_region)->capture_default_str();
  eval->add_option("--max-region", ev.max_region)->capture_default_str();
  eval->add_option("--image-side", ev.image_side)->capture_default_str();

  // infer
  auto* infer = app.add_subcommand("infer", "Score one image");
  std::string in_weights, in_image;
  double in_threshold = 0.5;
  bool in_json = false;
  infer->add_option("--weights", in_weights)->required();
  infer->add_option("--image", in_image)->required();
  infer->add_option("--threshold", in_threshold)->capture_default_str();
  infer->add_flag("--json", in_json, "Emit a JSON object instead of plain text");

  // visualize
  auto* visualize = app.add_subcommand("visualize", "Write a spoof-region heatmap overlay");
  std::string vis_weights, vis_image, vis_out;
  visualize->add_option("--weights", vis_weights)->required();
  visualize->add_option("--image", vis_image)->required();
  visualize->add_option("--out", vis_out, "Output PNG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    // Log the fully resolved configuration so every run is reproducible from
    // its log alone.
    std::cerr << "resolved config:\n" << app.config_to_str(true, false);

    if (*synth) {
      synth_cfg.artifact = ssrfcn::artifact_kind_from_string(artifact);
      return cmd_synth(synth_cfg, synth_out);
    }
    if (*train) {
      if (train_flags.log_path.empty()) train_flags.log_path = train_flags.out + ".log.jsonl";
      return cmd_train(train_flags, strict);
    }
    if (*finetune) {
      if (ft_flags.log_path.empty()) ft_flags.log_path = ft_flags.out + ".log.jsonl";
      return cmd_finetune(ft_flags, ft, strict);
    }
    if (*eval) return cmd_eval(ev, strict);
    if (*infer) return cmd_infer(in_weights, in_image, in_threshold, in_json);
    if (*visualize) return cmd_visualize(vis_weights, vis_image, vis_out);
    throw ssrfcn::UsageError("no subcommand selected");
  } catch (const ssrfcn::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
