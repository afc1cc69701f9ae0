#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "forgeloc/checkpoint.hpp"
#include "forgeloc/errors.hpp"
#include "forgeloc/synth.hpp"
#include "forgeloc/trainer.hpp"

namespace fl = forgeloc;
namespace fs = std::filesystem;

namespace {

fl::TrainConfig small_config() {
  fl::TrainConfig c;
  c.input_size = 32;
  c.model.backbone.stage_channels = {4, 8, 8, 8};
  c.model.backbone.stem_channels = 4;
  c.model.backbone.norm = fl::NormKind::kBatch;  // exercises buffers too
  c.model.encoder = fl::EncoderConfig{8, 1, 2, 16, 0.0};
  c.model.init_seed = 11;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("forgeloc_ckpt_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

/// A trained-for-two-steps model with non-trivial optimizer state.
fl::Checkpoint trained_checkpoint(const fl::TrainConfig& cfg) {
  fl::ForgeryLocalizer<float> model(cfg.model);
  fl::AdamState<float> adam;
  const auto s = fl::make_sample(3, fl::ForgeryKind::kSplicing, 32, 32);
  auto [img, gt] = fl::make_batch({s, s});
  for (uint64_t step = 0; step < 2; ++step) {
    model.parameters().zero_grad();
    auto out = model.forward(img, fl::ForwardContext{true, 1, step});
    fl::joint_loss(out, gt, cfg.loss).total.backward();
    fl::adam_step(model.parameters(), adam, 1e-3);
  }
  return fl::make_checkpoint(model, cfg, adam, 2, 0xABCDEF);
}

}  // namespace

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  const auto cfg = small_config();
  const fl::Checkpoint ck = trained_checkpoint(cfg);
  fl::save_checkpoint(ck, (dir_ / "a.ckpt").string());
  const fl::Checkpoint back = fl::load_checkpoint((dir_ / "a.ckpt").string());
  fl::save_checkpoint(back, (dir_ / "b.ckpt").string());
  EXPECT_EQ(slurp(dir_ / "a.ckpt"), slurp(dir_ / "b.ckpt"));
  EXPECT_EQ(back.digest, ck.digest);
  EXPECT_EQ(back.epoch, 2);
  EXPECT_EQ(back.rng_state, 0xABCDEFu);
  EXPECT_EQ(back.optimizer.step, 2);
  ASSERT_EQ(back.entries.size(), ck.entries.size());
  for (size_t i = 0; i < ck.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].name, ck.entries[i].name);
    EXPECT_EQ(back.entries[i].shape, ck.entries[i].shape);
    EXPECT_EQ(back.entries[i].values, ck.entries[i].values);
  }
  EXPECT_EQ(fl::to_json(back.config), fl::to_json(ck.config));
}

TEST_F(CheckpointTest, EvaluationIdenticalAfterReload) {
  const auto cfg = small_config();
  const fl::Checkpoint ck = trained_checkpoint(cfg);
  const auto before = fl::model_from_checkpoint(ck);
  fl::save_checkpoint(ck, (dir_ / "m.ckpt").string());
  const auto after = fl::model_from_checkpoint(fl::load_checkpoint((dir_ / "m.ckpt").string()));
  const auto img = fl::make_sample(9, fl::ForgeryKind::kCopyMove, 32, 32).image;
  for (int k = fl::kFirstBranch; k <= fl::kLastBranch; ++k) {
    const auto a = fl::predict(*before, img, k), b = fl::predict(*after, img, k);
    ASSERT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin())) << k;
  }
}

TEST_F(CheckpointTest, DigestMismatchRefused) {
  const auto cfg = small_config();
  const fl::Checkpoint ck = trained_checkpoint(cfg);
  fl::ModelConfig other = cfg.model;
  other.encoder.num_heads = 1;
  fl::ForgeryLocalizer<float> model(other);
  EXPECT_THROW(fl::restore_model(ck, model), fl::ConfigError);
}

TEST_F(CheckpointTest, CorruptFilesRejected) {
  const auto cfg = small_config();
  fl::save_checkpoint(trained_checkpoint(cfg), (dir_ / "c.ckpt").string());
  const std::string bytes = slurp(dir_ / "c.ckpt");
  auto write = [&](const std::string& name, const std::string& data) {
    std::ofstream out(dir_ / name, std::ios::binary);
    out << data;
    return (dir_ / name).string();
  };
  EXPECT_THROW(fl::load_checkpoint(write("magic.ckpt", "XFCK" + bytes.substr(4))), fl::IoError);
  EXPECT_THROW(fl::load_checkpoint(write("short.ckpt", bytes.substr(0, bytes.size() / 2))), fl::IoError);
  EXPECT_THROW(fl::load_checkpoint(write("long.ckpt", bytes + "x")), fl::IoError);
  std::string wrong_digest = bytes;
  wrong_digest[8] ^= 1;
  EXPECT_THROW(fl::load_checkpoint(write("digest.ckpt", wrong_digest)), fl::ConfigError);
  EXPECT_THROW(fl::load_checkpoint((dir_ / "missing.ckpt").string()), fl::IoError);
}
