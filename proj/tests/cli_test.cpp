// End-to-end tests that drive the installed `ssrfcn` binary through a shell,
// covering exit codes, the synth -> train -> finetune pipeline, strict-mode
// byte reproducibility, and the report/infer/visualize outputs.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ssrfcn/dataset.hpp"
#include "ssrfcn/image_io.hpp"

#ifndef SSRFCN_CLI_PATH
#error "SSRFCN_CLI_PATH must point at the built ssrfcn binary"
#endif

namespace {

namespace fs = std::filesystem;

struct RunResult {
  int exit_code = -1;
  std::string out, err;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / ("cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Runs the CLI with `args` inside `workdir`, capturing exit code and streams.
RunResult run_cli(const std::string& args, const fs::path& workdir) {
  const fs::path out_file = workdir / ".cli_stdout";
  const fs::path err_file = workdir / ".cli_stderr";
  const std::string command = "cd '" + workdir.string() + "' && '" SSRFCN_CLI_PATH "' " + args +
                              " >'" + out_file.string() + "' 2>'" + err_file.string() + "'";
  const int status = std::system(command.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out_file);
  r.err = read_file(err_file);
  return r;
}

// Small, fast dataset: 32 px frames keep full-model passes cheap.
const char* kSynthArgs =
    "synth --out data --image-side 32 --frames-per-video 2 --live-subjects 3 "
    "--spoof-types 2 --spoof-subjects-per-type 2 --artifact global_texture --seed 5";
const char* kTrainArgs =
    "--strict-determinism train --manifest data/manifest.csv --image-side 32 "
    "--epochs 2 --batch-size 4 --learning-rate 1e-3 --seed 7 --out s1.ssrfcn";
const char* kFinetuneArgs =
    "--strict-determinism finetune --manifest data/manifest.csv --image-side 32 "
    "--weights s1.ssrfcn --strategy self_supervised --min-region 16 --max-region 32 "
    "--epochs 1 --batch-size 4 --seed 8 --out s2.ssrfcn";

// One shared pipeline run; the fixture asserts it succeeded before each test.
class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(fresh_dir("pipeline"));
    synth_ = new RunResult(run_cli(kSynthArgs, *dir_));
    train_ = new RunResult(run_cli(kTrainArgs, *dir_));
    finetune_ = new RunResult(run_cli(kFinetuneArgs, *dir_));
  }

  static void TearDownTestSuite() {
    delete synth_;
    delete train_;
    delete finetune_;
    delete dir_;
  }

  void require_pipeline() {
    ASSERT_EQ(synth_->exit_code, 0) << synth_->err;
    ASSERT_EQ(train_->exit_code, 0) << train_->err;
    ASSERT_EQ(finetune_->exit_code, 0) << finetune_->err;
  }

  static fs::path* dir_;
  static RunResult *synth_, *train_, *finetune_;
};

fs::path* CliPipeline::dir_ = nullptr;
RunResult* CliPipeline::synth_ = nullptr;
RunResult* CliPipeline::train_ = nullptr;
RunResult* CliPipeline::finetune_ = nullptr;

TEST(CliBasics, HelpExitsZeroAndListsSubcommands) {
  const fs::path dir = fresh_dir("help");
  const RunResult r = run_cli("--help", dir);
  EXPECT_EQ(r.exit_code, 0);
  for (const char* sub : {"synth", "train", "finetune", "eval", "infer", "visualize"}) {
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  }
}

TEST(CliBasics, UsageMistakesExitTwo) {
  const fs::path dir = fresh_dir("usage");
  EXPECT_EQ(run_cli("", dir).exit_code, 2);             // a subcommand is required
  EXPECT_EQ(run_cli("resolve", dir).exit_code, 2);      // unknown subcommand
  EXPECT_EQ(run_cli("train", dir).exit_code, 2);        // --manifest is required
  EXPECT_EQ(run_cli("train --manifest m.csv --bogus-flag", dir).exit_code, 2);
  EXPECT_EQ(run_cli("finetune --manifest m.csv", dir).exit_code, 2);  // no --weights
  EXPECT_EQ(run_cli("synth --out d --artifact holographic", dir).exit_code, 2);
}

TEST(CliBasics, MissingInputsAreRuntimeErrorsNotCrashes) {
  const fs::path dir = fresh_dir("missing");
  const RunResult r = run_cli("train --manifest no_such_manifest.csv --epochs 1", dir);
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("no_such_manifest.csv"), std::string::npos);

  const RunResult r2 = run_cli("infer --weights nothing.ssrfcn --image nothing.png", dir);
  EXPECT_EQ(r2.exit_code, 1);
}

TEST_F(CliPipeline, CommandsSucceedAndReportOutputs) {
  require_pipeline();
  EXPECT_NE(synth_->out.find("manifest:"), std::string::npos);
  EXPECT_NE(train_->out.find("wrote s1.ssrfcn"), std::string::npos);
  EXPECT_NE(finetune_->out.find("wrote s2.ssrfcn"), std::string::npos);
  EXPECT_TRUE(fs::exists(*dir_ / "data" / "manifest.csv"));
  EXPECT_TRUE(fs::exists(*dir_ / "data" / "ground_truth.json"));
  EXPECT_TRUE(fs::exists(*dir_ / "s1.ssrfcn"));
  EXPECT_TRUE(fs::exists(*dir_ / "s2.ssrfcn"));
  // Every run logs its fully resolved configuration to stderr.
  EXPECT_NE(train_->err.find("resolved config"), std::string::npos);
}

TEST_F(CliPipeline, LogsAreJsonLinesWithZeroedWallTimeInStrictMode) {
  require_pipeline();
  // --log was not passed, so logs land next to the weight files by default.
  const fs::path log1 = *dir_ / "s1.ssrfcn.log.jsonl";
  const fs::path log2 = *dir_ / "s2.ssrfcn.log.jsonl";
  ASSERT_TRUE(fs::exists(log1));
  ASSERT_TRUE(fs::exists(log2));

  auto check = [](const fs::path& path, int stage, int epochs) {
    std::ifstream in(path);
    std::string line;
    int count = 0;
    while (std::getline(in, line)) {
      const nlohmann::json doc = nlohmann::json::parse(line);
      EXPECT_EQ(doc.at("stage").get<int>(), stage);
      EXPECT_EQ(doc.at("epoch").get<int>(), count);
      EXPECT_TRUE(doc.at("mean_loss").is_number());
      EXPECT_TRUE(doc.at("accuracy").is_number());
      EXPECT_DOUBLE_EQ(doc.at("wall_time_sec").get<double>(), 0.0);
      ++count;
    }
    EXPECT_EQ(count, epochs) << path;
  };
  check(log1, 1, 2);
  check(log2, 2, 1);
}

TEST_F(CliPipeline, StrictModeRerunsAreByteIdentical) {
  require_pipeline();
  const fs::path dir2 = fresh_dir("pipeline_rerun");
  ASSERT_EQ(run_cli(kSynthArgs, dir2).exit_code, 0);
  ASSERT_EQ(run_cli(kTrainArgs, dir2).exit_code, 0);
  ASSERT_EQ(run_cli(kFinetuneArgs, dir2).exit_code, 0);

  for (const char* rel : {"data/manifest.csv", "data/ground_truth.json", "s1.ssrfcn",
                          "s2.ssrfcn", "s1.ssrfcn.log.jsonl", "s2.ssrfcn.log.jsonl"}) {
    const std::string a = read_file(*dir_ / rel);
    const std::string b = read_file(dir2 / rel);
    ASSERT_FALSE(a.empty()) << rel;
    EXPECT_EQ(a, b) << rel << " differs between identical strict runs";
  }
}

TEST_F(CliPipeline, InferPrintsScoreAndDecision) {
  require_pipeline();
  const auto records = ssrfcn::load_manifest((*dir_ / "data" / "manifest.csv").string());
  ASSERT_FALSE(records.empty());
  const std::string image = records.front().image_path;

  const RunResult plain =
      run_cli("infer --weights s2.ssrfcn --image '" + image + "'", *dir_);
  ASSERT_EQ(plain.exit_code, 0) << plain.err;
  EXPECT_NE(plain.out.find("spoofness "), std::string::npos);
  const bool says_live = plain.out.find("\nlive") != std::string::npos;
  const bool says_spoof = plain.out.find("\nspoof") != std::string::npos;
  EXPECT_TRUE(says_live || says_spoof);

  const RunResult json =
      run_cli("infer --json --weights s2.ssrfcn --image '" + image + "'", *dir_);
  ASSERT_EQ(json.exit_code, 0) << json.err;
  const nlohmann::json doc = nlohmann::json::parse(json.out);
  EXPECT_TRUE(doc.at("spoofness").is_number());
  EXPECT_TRUE(doc.at("decision") == "live" || doc.at("decision") == "spoof");
  EXPECT_DOUBLE_EQ(doc.at("threshold").get<double>(), 0.5);

  // An extreme threshold forces the live decision deterministically.
  const RunResult low = run_cli(
      "infer --json --threshold 2.0 --weights s2.ssrfcn --image '" + image + "'", *dir_);
  ASSERT_EQ(low.exit_code, 0);
  EXPECT_EQ(nlohmann::json::parse(low.out).at("decision"), "live");
}

TEST_F(CliPipeline, VisualizeWritesAnOverlayPngTaggedWithTheScore) {
  require_pipeline();
  const auto records = ssrfcn::load_manifest((*dir_ / "data" / "manifest.csv").string());
  ASSERT_FALSE(records.empty());
  const std::string image = records.front().image_path;

  const RunResult r = run_cli(
      "visualize --weights s2.ssrfcn --image '" + image + "' --out overlay.png", *dir_);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const fs::path overlay = *dir_ / "overlay.png";
  ASSERT_TRUE(fs::exists(overlay));

  const ssrfcn::ImageU8 png = ssrfcn::read_png_rgb(overlay.string());
  EXPECT_EQ(png.h, 32);
  EXPECT_EQ(png.w, 32);
  const auto text = ssrfcn::read_png_text(overlay.string());
  bool tagged = false;
  for (const auto& [key, value] : text) {
    if (key == "spoofness" && !value.empty()) tagged = true;
  }
  EXPECT_TRUE(tagged);
}

TEST_F(CliPipeline, EvalWithFixedWeightsWritesTableAndJsonReports) {
  require_pipeline();
  const RunResult r = run_cli(
      "eval --manifest data/manifest.csv --weights s2.ssrfcn --protocol known_split "
      "--seed 1 --report-json report.json --report-table report.txt",
      *dir_);
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("known_split"), std::string::npos);
  EXPECT_NE(r.out.find("mean +- std"), std::string::npos);

  ASSERT_TRUE(fs::exists(*dir_ / "report.txt"));
  EXPECT_EQ(read_file(*dir_ / "report.txt"), r.out);

  ASSERT_TRUE(fs::exists(*dir_ / "report.json"));
  const nlohmann::json doc = nlohmann::json::parse(read_file(*dir_ / "report.json"));
  EXPECT_EQ(doc.at("protocol"), "known_split");
  ASSERT_EQ(doc.at("cells").size(), 1u);
  EXPECT_TRUE(doc.at("summary").at("eer").contains("mean"));
}

TEST_F(CliPipeline, EvalNeedsAWeightSourceAndCrossDatasetNeedsATestManifest) {
  require_pipeline();
  const RunResult no_weights = run_cli("eval --manifest data/manifest.csv", *dir_);
  EXPECT_EQ(no_weights.exit_code, 2);
  EXPECT_NE(no_weights.err.find("--weights"), std::string::npos);

  const RunResult no_test = run_cli(
      "eval --manifest data/manifest.csv --weights s2.ssrfcn --protocol cross_dataset",
      *dir_);
  EXPECT_EQ(no_test.exit_code, 2);
  EXPECT_NE(no_test.err.find("--test-manifest"), std::string::npos);
}

TEST_F(CliPipeline, ConfigFileSuppliesDefaultsAndFlagsWin) {
  require_pipeline();
  const fs::path dir = fresh_dir("config");
  ASSERT_EQ(run_cli(kSynthArgs, dir).exit_code, 0);

  std::ofstream cfg(dir / "run.ini");
  cfg << "strict-determinism=true\n\n[train]\n"
      << "manifest=data/manifest.csv\nimage-side=32\nepochs=2\nbatch-size=4\nseed=7\n"
      << "out=from_config.ssrfcn\n";
  cfg.close();

  // Config alone drives a full run.
  const RunResult from_cfg = run_cli("--config run.ini train", dir);
  ASSERT_EQ(from_cfg.exit_code, 0) << from_cfg.err;
  ASSERT_TRUE(fs::exists(dir / "from_config.ssrfcn"));
  std::ifstream log(dir / "from_config.ssrfcn.log.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line);) ++lines;
  EXPECT_EQ(lines, 2);  // epochs taken from the config file

  // A command-line flag overrides the same key from the file.
  const RunResult overridden =
      run_cli("--config run.ini train --epochs 1 --out cli_wins.ssrfcn", dir);
  ASSERT_EQ(overridden.exit_code, 0) << overridden.err;
  std::ifstream log2(dir / "cli_wins.ssrfcn.log.jsonl");
  lines = 0;
  for (std::string line; std::getline(log2, line);) ++lines;
  EXPECT_EQ(lines, 1);

  // Same seed and data: the weights must match the flag-driven pipeline run.
  EXPECT_EQ(read_file(dir / "from_config.ssrfcn"), read_file(*CliPipeline::dir_ / "s1.ssrfcn"));
}

}  // namespace
