#include <gtest/gtest.h>
#include <sys/wait.h>

#include <json.hpp>
#include <cstdio>
#include <regex>

#include "fixtures.hpp"
#include "spvit/data.hpp"

using namespace spvit;
using namespace spvit::testing;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(SPVIT_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return {-1, "popen failed"};
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

const char* kSmallConfig =
    "[model]\n"
    "kind = vit\n"
    "image_size = 16\n"
    "patch_size = 4\n"
    "dim = 8\n"
    "depth = 1\n"
    "heads = 2\n"
    "mlp_dim = 16\n"
    "[train]\n"
    "learning_rate = 1e-3\n"
    "batch_size = 8\n"
    "epochs = 2\n"
    "seed = 11\n"
    "[sweep]\n"
    "learning_rates = 1e-3, 1e-2\n"
    "batch_sizes = 4, 64\n"
    "epochs = 1\n"
    "[synth]\n"
    "train_days = 3\n"
    "test_sunny_days = 1\n"
    "test_cloudy_days = 1\n"
    "samples_per_day = 7\n"
    "image_size = 16\n";

std::size_t count_ext(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    write_file(*dir_ / "small.ini", kSmallConfig);
    synth_ = run_cli("synth-data --config " + cfg() + " --out " + (*dir_ / "data").string());
    train_ = run_cli("train --config " + cfg() + " --data " + (*dir_ / "data").string() + " --out " +
                   (*dir_ / "run").string());
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::string cfg() { return (*dir_ / "small.ini").string(); }
  static fs::path data() { return *dir_ / "data"; }
  static fs::path run() { return *dir_ / "run"; }

  static TempDir* dir_;
  static CliResult synth_, train_;
};

TempDir* Cli::dir_ = nullptr;
CliResult Cli::synth_, Cli::train_;

}  // namespace

TEST_F(Cli, SynthDataWritesManifests) {
  ASSERT_EQ(synth_.code, 0) << synth_.output;
  for (const char* m : {"pool.csv", "train.csv", "val.csv", "test.csv"}) EXPECT_TRUE(fs::exists(data() / m)) << m;
  const auto train = load_manifest(data() / "train.csv");
  const auto val = load_manifest(data() / "val.csv");
  EXPECT_EQ(train.size() + val.size(), 3u * 7);
  EXPECT_EQ(load_manifest(data() / "test.csv").size(), 2u * 7);
  EXPECT_NE(synth_.output.find("1 sunny, 1 cloudy"), std::string::npos) << synth_.output;
}

TEST_F(Cli, SameSeedGivesIdenticalManifests) {
  const auto again = *dir_ / "again";
  ASSERT_EQ(run_cli("synth-data --config " + cfg() + " --out " + again.string()).code, 0);
  for (const char* m : {"train.csv", "val.csv", "test.csv"}) {
    // Paths are stored relative to the manifest directory, so the files compare directly.
    EXPECT_EQ(read_file(again / m), read_file(data() / m)) << m;
  }
  const auto other = *dir_ / "other";
  ASSERT_EQ(run_cli("synth-data --config " + cfg() + " --seed 99 --out " + other.string()).code, 0);
  EXPECT_NE(read_file(other / "test.csv"), read_file(data() / "test.csv"));
}

TEST_F(Cli, ConfigErrorsExitWithTwo) {
  write_file(*dir_ / "bad.ini", "[train]\nepochs = 2\nbatch = 8\n");
  auto r = run_cli("synth-data --config " + (*dir_ / "bad.ini").string() + " --out " + (*dir_ / "never").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("bad.ini:3"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("'batch'"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(*dir_ / "never"));

  r = run_cli("train --config " + cfg() + " --set train.epochs=zero --data x --out y");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("train.epochs"), std::string::npos) << r.output;
  EXPECT_EQ(run_cli("frobnicate").code, 2);
  EXPECT_EQ(run_cli("train --data x").code, 2);
}

TEST_F(Cli, MissingDataExitsWithFour) {
  auto r = run_cli("train --config " + cfg() + " --data " + (*dir_ / "nothing").string() + " --out " +
                 (*dir_ / "r2").string());
  EXPECT_EQ(r.code, 4) << r.output;
}

TEST_F(Cli, TrainWritesArtifacts) {
  ASSERT_EQ(train_.code, 0) << train_.output;
  for (const char* f : {"checkpoint.spvt", "loss_history.csv", "config.ini", "report.json"})
    EXPECT_TRUE(fs::exists(run() / f)) << f;
  const auto hist = read_file(run() / "loss_history.csv");
  EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 3);
  EXPECT_TRUE(std::regex_search(train_.output, std::regex("final val MSE: [0-9.]+")));
}

TEST_F(Cli, HeadOnlyReportListsTrainableSet) {
  auto r = run_cli("train --config " + cfg() + " --set train.freeze=head_only --data " + data().string() + " --out " +
                 (*dir_ / "frozen").string());
  ASSERT_EQ(r.code, 0) << r.output;
  auto j = nlohmann::json::parse(read_file(*dir_ / "frozen" / "report.json"));
  EXPECT_EQ(j["freeze"], "head_only");
  EXPECT_EQ(j["trainable"].get<std::vector<std::string>>(),
            (std::vector<std::string>{"final_norm.beta", "final_norm.gamma", "head.W", "head.b", "pooler.W",
                                      "pooler.b"}));
}

TEST_F(Cli, EvaluateWritesMetricsAndSeries) {
  ASSERT_EQ(train_.code, 0);
  const auto out = *dir_ / "eval";
  auto r = run_cli("evaluate --checkpoint " + (run() / "checkpoint.spvt").string() + " --test-manifest " +
                 (data() / "test.csv").string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  auto j = nlohmann::json::parse(read_file(out / "metrics.json"));
  EXPECT_EQ(j.size(), 5u);
  for (const char* k : {"rmse_sunny", "rmse_cloudy", "rmse_overall", "n_sunny", "n_cloudy"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["n_sunny"].get<int>() + j["n_cloudy"].get<int>(), 14);
  EXPECT_EQ(count_ext(out / "series", ".svg"), 2u);
  EXPECT_EQ(count_ext(out / "series", ".csv"), 2u);
  const auto preds = read_file(out / "predictions.csv");
  EXPECT_EQ(std::count(preds.begin(), preds.end(), '\n'), 15);
}

TEST_F(Cli, EvaluateRejectsMismatchedCheckpoint) {
  ASSERT_EQ(train_.code, 0);
  auto r = run_cli("evaluate --config " + cfg() + " --set model.dim=12 --checkpoint " +
                 (run() / "checkpoint.spvt").string() + " --test-manifest " + (data() / "test.csv").string() +
                 " --out " + (*dir_ / "eval_bad").string());
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.output.find("does not match"), std::string::npos) << r.output;
}

TEST_F(Cli, PredictPrintsOneNumber) {
  ASSERT_EQ(train_.code, 0);
  const auto test = load_manifest(data() / "test.csv");
  const auto image = (data() / test.records[3].image_path).string();
  auto r = run_cli("predict --checkpoint " + (run() / "checkpoint.spvt").string() + " --image " + image);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(std::regex_match(r.output, std::regex("-?[0-9]+\\.[0-9]+\n"))) << r.output;
}

TEST_F(Cli, ExportFeaturesWritesOnePng) {
  ASSERT_EQ(train_.code, 0);
  const auto test = load_manifest(data() / "test.csv");
  const auto out = *dir_ / "features";
  auto r = run_cli("export-features --checkpoint " + (run() / "checkpoint.spvt").string() + " --image " +
                 (data() / test.records[0].image_path).string() + " --channels 4 --out " + (out / "grid.png").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(count_ext(out, ".png"), 1u);
  const auto grid = read_png(out / "grid.png");
  EXPECT_EQ(grid.width, 2u * 4 + 1);
}

TEST_F(Cli, SweepTwoByTwo) {
  ASSERT_EQ(synth_.code, 0);
  const auto out = *dir_ / "sweep";
  auto r = run_cli("sweep --config " + cfg() + " --data " + data().string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto table = read_file(out / "results.csv");
  EXPECT_EQ(table.substr(0, table.find('\n')),
            "learning_rate,batch_size,rmse_sunny,rmse_cloudy,rmse_overall,final_val_loss");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 5);
  EXPECT_TRUE(fs::exists(out / "best.json"));
  EXPECT_TRUE(fs::exists(out / "best.spvt"));
  EXPECT_EQ(std::count(r.output.begin(), r.output.end(), '*'), 1) << r.output;
  auto best = nlohmann::json::parse(read_file(out / "best.json"));
  EXPECT_TRUE(best["run"].is_string());
}
