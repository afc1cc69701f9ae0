#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "forgeloc/config.hpp"
#include "forgeloc/errors.hpp"

namespace fl = forgeloc;
using nlohmann::json;

TEST(Config, DefaultsValidate) {
  fl::TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.batch_size, 2);
  EXPECT_EQ(c.epochs, 20);
  EXPECT_EQ(c.input_size, 64);
  EXPECT_EQ(c.output_branch, 2);
}

TEST(Config, JsonRoundTrip) {
  fl::TrainConfig c;
  c.learning_rate = 3e-4;
  c.model.fusion = fl::FusionMode::kAdd;
  c.model.backbone.norm = fl::NormKind::kBatch;
  c.loss.mode = fl::LossMode::kDownsample;
  c.loss.lambdas = {0.4, 0.3, 0.2, 0.1};
  c.seed = 0xFFFFFFFFFFFFFFFFULL;
  const json j = fl::to_json(c);
  const fl::TrainConfig r = fl::train_config_from_json(j);
  EXPECT_EQ(fl::to_json(r), j);
  EXPECT_EQ(r.seed, c.seed);
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_THROW(fl::train_config_from_json(json{{"trian", json::object()}}), fl::ConfigError);
  EXPECT_THROW(fl::train_config_from_json(json{{"train", {{"lr", 1}}}}), fl::ConfigError);
  EXPECT_THROW(fl::train_config_from_json(json{{"model", {{"fusion", "concat"}}}}), fl::ConfigError);
  EXPECT_THROW(fl::train_config_from_json(json{{"train", {{"epochs", "many"}}}}), fl::ConfigError);
}

TEST(Config, InvariantsRejected) {
  fl::TrainConfig c;
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), fl::ConfigError);
  c = {};
  c.input_size = 48;
  EXPECT_THROW(c.validate(), fl::ConfigError);
  c = {};
  c.output_branch = 6;
  EXPECT_THROW(c.validate(), fl::ConfigError);
  c = {};
  c.loss.mode = fl::LossMode::kDownsample;  // increasing weights violate the downsample ordering
  EXPECT_THROW(c.validate(), fl::ConfigError);
}

TEST(Config, OverridesApplyAfterFile) {
  const auto path = std::filesystem::temp_directory_path() / "forgeloc_cfg_test.json";
  {
    std::ofstream out(path);
    out << R"({"train": {"epochs": 3, "learning_rate": 0.01}, "model": {"encoder": {"num_layers": 1}}})";
  }
  const auto c = fl::load_train_config(path.string(), {"train.epochs=5", "model.fusion=add",
                                                        "loss.lambdas=[0.4,0.3,0.2,0.1]",
                                                        "loss.mode=downsample"});
  EXPECT_EQ(c.epochs, 5);
  EXPECT_EQ(c.learning_rate, 0.01);
  EXPECT_EQ(c.model.encoder.num_layers, 1);
  EXPECT_EQ(c.model.fusion, fl::FusionMode::kAdd);
  EXPECT_EQ(c.loss.mode, fl::LossMode::kDownsample);
  std::filesystem::remove(path);
}

TEST(Config, BadOverrides) {
  json j = json::object();
  EXPECT_THROW(fl::apply_overrides(j, {"novalue"}), fl::ConfigError);
  EXPECT_THROW(fl::apply_overrides(j, {"a..b=1"}), fl::ConfigError);
  EXPECT_THROW(fl::load_train_config("", {"loss.mode=downsample"}), fl::ConfigError);
  EXPECT_THROW(fl::load_train_config("/nonexistent/cfg.json", {}), fl::IoError);
}

TEST(Config, DigestTracksModelConfig) {
  fl::ModelConfig a, b;
  EXPECT_EQ(a.digest(), b.digest());
  b.encoder.num_layers = 3;
  EXPECT_NE(a.digest(), b.digest());
}
