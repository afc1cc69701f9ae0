#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sys/wait.h>

#include <json.hpp>

#include "forgeloc/checkpoint.hpp"
#include "forgeloc/image_io.hpp"
#include "forgeloc/metrics.hpp"
#include "forgeloc/synth.hpp"
#include "forgeloc/trainer.hpp"
#include "forgeloc/version.hpp"

namespace fl = forgeloc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("forgeloc_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

/// Runs the CLI with the given arguments; returns its exit code.
int cli(const std::string& args) {
  const std::string cmd = std::string(FORGELOC_CLI_PATH) + " " + args + " > " +
                          (work_dir() / "last_stdout.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

/// A 32x32 model small enough to train in seconds.
fs::path tiny_config() {
  const fs::path path = work_dir() / "tiny.json";
  if (!fs::exists(path)) {
    json j{{"model",
            {{"backbone", {{"stage_channels", {4, 8, 8, 8}}, {"stem_channels", 4}}},
             {"encoder", {{"d_model", 8}, {"num_layers", 1}, {"num_heads", 2}, {"ffn_dim", 16}}}}},
           {"train", {{"input_size", 32}, {"epochs", 2}, {"learning_rate", 1e-3}}}};
    std::ofstream(path) << j.dump(2);
  }
  return path;
}

const fs::path& dataset() {
  static const fs::path dir = [] {
    const fs::path d = work_dir() / "data";
    EXPECT_EQ(cli("gen-data --out " + q(d) + " --count 20 --size 32 --seed 3"), 0);
    return d;
  }();
  return dir;
}

const fs::path& trained_run() {
  static const fs::path dir = [] {
    const fs::path d = work_dir() / "run";
    EXPECT_EQ(cli("train --config " + q(tiny_config()) + " --data " + q(dataset()) + " --out " + q(d) +
                  " --seed 4"),
              0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli(""), 1);
  EXPECT_EQ(cli("no-such-command"), 1);
  EXPECT_EQ(cli("train --data x"), 1);
  EXPECT_EQ(cli("--version"), 0);
}

TEST(Cli, GenDataSplitsAndRefusesOverwrite) {
  const fs::path d = work_dir() / "gen100";
  ASSERT_EQ(cli("gen-data --out " + q(d) + " --count 100 --size 32 --seed 1"), 0);
  size_t counts[3] = {0, 0, 0};
  const char* names[3] = {"train", "val", "test"};
  for (int s = 0; s < 3; ++s)
    for (const auto& e : fs::directory_iterator(d / names[s]))
      counts[s] += e.path().string().ends_with("_img.png");
  EXPECT_EQ(counts[0], 80u);
  EXPECT_EQ(counts[1], 10u);
  EXPECT_EQ(counts[2], 10u);
  EXPECT_TRUE(fs::exists(d / "manifest.json"));
  const json run = json::parse(slurp(d / "run.json"));
  EXPECT_EQ(run.at("version"), fl::version_string());
  EXPECT_EQ(run.at("config").at("count"), 100);
  EXPECT_EQ(cli("gen-data --out " + q(d) + " --count 100 --size 32 --seed 1"), 1);
}

TEST(Cli, GenDataIsByteIdentical) {
  const fs::path a = work_dir() / "gen_a", b = work_dir() / "gen_b";
  ASSERT_EQ(cli("gen-data --out " + q(a) + " --count 12 --size 32 --seed 8"), 0);
  ASSERT_EQ(cli("gen-data --out " + q(b) + " --count 12 --size 32 --seed 8"), 0);
  ASSERT_EQ(cli("gen-data --out " + q(b) + " --count 12 --size 32 --seed 8 --force"), 0);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 12 * 2 + 2);
}

TEST(Cli, GenDataKinds) {
  const fs::path d = work_dir() / "gen_cm";
  ASSERT_EQ(cli("gen-data --out " + q(d) + " --count 10 --size 32 --kinds copy_move"), 0);
  const auto m = fl::read_manifest(d.string());
  for (auto s : {fl::Split::kTrain, fl::Split::kVal, fl::Split::kTest})
    for (const auto& e : m.split(s)) EXPECT_EQ(e.kind, fl::ForgeryKind::kCopyMove);
  EXPECT_EQ(cli("gen-data --out " + q(work_dir() / "gen_bad") + " --count 10 --kinds blur"), 1);
  EXPECT_EQ(cli("gen-data --out " + q(work_dir() / "gen_small") + " --count 5"), 1);
}

TEST(Cli, TrainWritesRunDirectory) {
  const fs::path d = trained_run();
  for (const char* f : {"best.ckpt", "last.ckpt", "metrics.csv", "config.json", "run.json"})
    EXPECT_TRUE(fs::exists(d / f)) << f;
  const json cfg = json::parse(slurp(d / "config.json"));
  EXPECT_EQ(cfg.at("train").at("seed"), 4);
  EXPECT_EQ(cfg.at("train").at("epochs"), 2);
  EXPECT_EQ(json::parse(slurp(d / "run.json")).at("command"), "train");
  const std::string csv = slurp(d / "metrics.csv");
  EXPECT_EQ(csv.rfind("epoch,train_loss,loss_c2,loss_c3,loss_c4,loss_c5,val_auc\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Cli, TrainIsReproducible) {
  const fs::path d = work_dir() / "run_again";
  ASSERT_EQ(cli("train --config " + q(tiny_config()) + " --data " + q(dataset()) + " --out " + q(d) +
                " --seed 4"),
            0);
  EXPECT_EQ(slurp(d / "metrics.csv"), slurp(trained_run() / "metrics.csv"));
  EXPECT_EQ(slurp(d / "last.ckpt"), slurp(trained_run() / "last.ckpt"));
}

TEST(Cli, DownsampleOrderingEnforced) {
  const std::string base = "train --config " + q(tiny_config()) + " --data " + q(dataset()) + " --out ";
  EXPECT_EQ(cli(base + q(work_dir() / "ds_bad") + " --override loss.mode=downsample"), 1);
  EXPECT_EQ(cli(base + q(work_dir() / "ds_ok") +
                " --override loss.mode=downsample --override 'loss.lambdas=[0.4,0.3,0.2,0.1]'"
                " --override train.epochs=1"),
            0);
  EXPECT_EQ(cli(base + q(work_dir() / "bad_key") + " --override train.learning_rat=1"), 1);
  EXPECT_EQ(cli(base + q(work_dir() / "bad_size") + " --override train.input_size=64"), 1);
}

TEST(Cli, EvalReportsEveryBranch) {
  const fs::path ck = trained_run() / "best.ckpt";
  for (const char* b : {"C2", "C3", "C4", "C5"}) {
    const fs::path out = work_dir() / (std::string("eval_") + b);
    ASSERT_EQ(cli("eval --ckpt " + q(ck) + " --data " + q(dataset()) + " --split test --branch " + b +
                  " --out " + q(out)),
              0);
    const json r = json::parse(slurp(out / "report.json"));
    EXPECT_EQ(r.at("branch"), b);
    EXPECT_GE(r.at("pixel_auc").get<double>(), 0.0);
    EXPECT_TRUE(fs::exists(out / "run.json"));
  }
  EXPECT_EQ(cli("eval --ckpt " + q(ck) + " --data " + q(dataset()) + " --branch C6"), 1);
  EXPECT_EQ(cli("eval --ckpt " + q(work_dir() / "none.ckpt") + " --data " + q(dataset())), 2);
}

TEST(Cli, InferWritesMaskAndProbability) {
  const fs::path ck = trained_run() / "best.ckpt";
  const auto m = fl::read_manifest(dataset().string());
  const auto& entry = m.test.at(0);
  const fs::path img = dataset() / "test" / (entry.id + "_img.png");
  const fs::path mask = work_dir() / "pred_mask.png", prob = work_dir() / "pred_prob.png";
  ASSERT_EQ(cli("infer --ckpt " + q(ck) + " --image " + q(img) + " --out-mask " + q(mask) +
                " --out-prob " + q(prob) + " --branch C2"),
            0);
  const fl::Image8 mask8 = fl::read_png(mask.string(), 1);
  std::set<int> values(mask8.pixels.begin(), mask8.pixels.end());
  for (int v : values) EXPECT_TRUE(v == 0 || v == 255) << v;

  // Probability PNG is the finalized mask quantized to 8 bits.
  const auto model = fl::model_from_checkpoint(fl::load_checkpoint(ck.string()));
  const auto sample = fl::load_split(dataset().string(), m, fl::Split::kTest).at(0);
  const fl::TensorF p = fl::predict(*model, sample.image, 2);
  const fl::Image8 expected = fl::tensor_to_image(p);
  EXPECT_EQ(fl::read_png(prob.string(), 1).pixels, expected.pixels);
  for (size_t i = 0; i < mask8.pixels.size(); ++i)
    ASSERT_EQ(mask8.pixels[i], p.data()[i] >= 0.5f ? 255 : 0);

  // The image's score matches the eval harness up to 8-bit quantization.
  const auto report = fl::evaluate(*model, {sample}, 2);
  const fl::TensorF q8 = fl::image_to_tensor(fl::read_png(prob.string(), 1));
  const auto auc = fl::pixel_auc(q8.data(), sample.mask.data());
  ASSERT_TRUE(auc.has_value());
  ASSERT_EQ(report.per_image_auc.size(), 1u);
  EXPECT_NEAR(*auc, report.per_image_auc[0], 0.02);

  EXPECT_EQ(cli("infer --ckpt " + q(ck) + " --image " + q(work_dir() / "missing.png") +
                " --out-mask " + q(mask)),
            2);
}

TEST(Cli, InferPadsOddSizes) {
  const fs::path ck = trained_run() / "best.ckpt";
  fl::Image8 img{40, 35, 3, std::vector<uint8_t>(40 * 35 * 3, 120)};
  const fs::path in = work_dir() / "odd.png", mask = work_dir() / "odd_mask.png";
  fl::write_png(in.string(), img);
  EXPECT_EQ(cli("infer --ckpt " + q(ck) + " --image " + q(in) + " --out-mask " + q(mask)), 1);
  ASSERT_EQ(cli("infer --ckpt " + q(ck) + " --image " + q(in) + " --out-mask " + q(mask) + " --pad"), 0);
  const fl::Image8 out = fl::read_png(mask.string(), 1);
  EXPECT_EQ(out.width, 40);
  EXPECT_EQ(out.height, 35);
  EXPECT_TRUE(fs::exists(work_dir() / "odd_mask_prob.png"));
  const auto run = json::parse(slurp(work_dir() / "run.json"));
  EXPECT_EQ(run.at("command"), "infer");
  EXPECT_EQ(run.at("config").at("pad"), true);
}

TEST(Cli, GradcheckExitCodes) {
  EXPECT_EQ(cli("gradcheck --op relu --op matmul"), 0);
  EXPECT_EQ(cli("gradcheck --model"), 0);
  // An impossible tolerance must fail with the runtime exit code.
  EXPECT_EQ(cli("gradcheck --op sigmoid --tol 0"), 2);
  EXPECT_EQ(cli("gradcheck --op nope"), 1);
}

TEST(Cli, PruneReportListsAllBranches) {
  const fs::path out = work_dir() / "prune";
  ASSERT_EQ(cli("prune-report --ckpt " + q(trained_run() / "best.ckpt") + " --data " + q(dataset()) +
                " --split val --repeats 1 --out " + q(out)),
            0);
  const std::string csv = slurp(out / "prune_report.csv");
  for (const char* b : {"\nC2,", "\nC3,", "\nC4,", "\nC5,"}) EXPECT_NE(csv.find(b), std::string::npos) << b;
  EXPECT_TRUE(fs::exists(out / "run.json"));
}

class CliCleanup : public ::testing::Environment {
 public:
  void TearDown() override { fs::remove_all(work_dir()); }
};

const auto* const kCleanup = ::testing::AddGlobalTestEnvironment(new CliCleanup);
