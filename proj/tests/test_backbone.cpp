#include <gtest/gtest.h>

#include <cmath>

#include "forgeloc/backbone.hpp"
#include "forgeloc/errors.hpp"
#include "forgeloc/random.hpp"

using namespace forgeloc;

namespace {

TensorF random_image(uint64_t seed, int64_t b, int64_t h, int64_t w) {
  Rng rng(seed);
  std::vector<float> v(static_cast<size_t>(b * 3 * h * w));
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return TensorF({b, 3, h, w}, std::move(v));
}

struct Built {
  ParameterStore<float> store;
  std::unique_ptr<Backbone<float>> net;
  explicit Built(BackboneConfig cfg, uint64_t seed = 1) {
    net = std::make_unique<Backbone<float>>(store, Initializer{seed}, "backbone", cfg);
  }
};

}  // namespace

TEST(Backbone, ToyPyramidShapes) {
  Built b(BackboneConfig{});
  NoGradGuard g;
  auto pyr = b.net->forward(random_image(0, 2, 64, 64), ForwardContext{});
  EXPECT_EQ(pyr.level(2).shape(), (Shape{2, 16, 16, 16}));
  EXPECT_EQ(pyr.level(3).shape(), (Shape{2, 32, 8, 8}));
  EXPECT_EQ(pyr.level(4).shape(), (Shape{2, 64, 4, 4}));
  EXPECT_EQ(pyr.level(5).shape(), (Shape{2, 128, 2, 2}));
}

TEST(Backbone, FullScalePyramidShapes) {
  BackboneConfig cfg;
  cfg.stage_channels = {256, 512, 1024, 2048};
  cfg.stem_channels = 64;
  cfg.bottleneck = true;
  Built b(cfg);
  NoGradGuard g;
  auto pyr = b.net->forward(random_image(0, 1, 512, 512), ForwardContext{});
  EXPECT_EQ(pyr.level(2).shape(), (Shape{1, 256, 128, 128}));
  EXPECT_EQ(pyr.level(3).shape(), (Shape{1, 512, 64, 64}));
  EXPECT_EQ(pyr.level(4).shape(), (Shape{1, 1024, 32, 32}));
  EXPECT_EQ(pyr.level(5).shape(), (Shape{1, 2048, 16, 16}));
}

TEST(Backbone, ParameterNamesEncodeProvenance) {
  Built b(BackboneConfig{});
  EXPECT_NE(b.store.find("backbone.stage2.block0.conv1.weight"), nullptr);
  EXPECT_NE(b.store.find("backbone.stage5.block0.shortcut.weight"), nullptr);
  EXPECT_NE(b.store.find("backbone.stem.conv.weight"), nullptr);
}

TEST(Backbone, ZeroImageGivesFiniteOutputs) {
  for (NormKind norm : {NormKind::kGroup, NormKind::kBatch}) {
    BackboneConfig cfg;
    cfg.norm = norm;
    Built b(cfg);
    NoGradGuard g;
    auto pyr = b.net->forward(TensorF::zeros({1, 3, 64, 64}), ForwardContext{});
    for (int i = 2; i <= 5; ++i)
      for (float v : pyr.level(i).data()) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(Backbone, IndivisibleInputRejected) {
  Built b(BackboneConfig{});
  EXPECT_THROW(b.net->forward(TensorF::zeros({1, 3, 48, 64}), ForwardContext{}), InputError);
  EXPECT_THROW(b.net->forward(TensorF::zeros({1, 1, 64, 64}), ForwardContext{}), InputError);
}

TEST(Backbone, InvalidConfigRejected) {
  BackboneConfig cfg;
  cfg.stage_channels[1] = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

// Group statistics couple all spatial positions, so locality and
// translation properties are checked with per-channel affine normalization
// (batch norm in eval mode).
TEST(Backbone, ReceptiveFieldLocality) {
  BackboneConfig cfg;
  cfg.norm = NormKind::kBatch;
  Built b(cfg, 3);
  NoGradGuard g;
  TensorF img = random_image(5, 1, 64, 64);
  auto base = b.net->forward(img, ForwardContext{}).level(2);
  const int64_t pr = 29, pc = 40;
  TensorF bumped = img.clone();
  bumped.data_mut()[(0 * 64 + pr) * 64 + pc] += 0.5f;
  auto moved = b.net->forward(bumped, ForwardContext{}).level(2);
  // A C2 point u covers input rows/cols [4u - 9, 4u + 11].
  int changed_inside = 0;
  for (int64_t c = 0; c < 16; ++c)
    for (int64_t u = 0; u < 16; ++u)
      for (int64_t v = 0; v < 16; ++v) {
        const size_t k = static_cast<size_t>((c * 16 + u) * 16 + v);
        const bool covers = 4 * u - 9 <= pr && pr <= 4 * u + 11 && 4 * v - 9 <= pc && pc <= 4 * v + 11;
        if (!covers) {
          EXPECT_EQ(base.data()[k], moved.data()[k]) << "point " << u << "," << v;
        } else if (base.data()[k] != moved.data()[k]) {
          ++changed_inside;
        }
      }
  EXPECT_GT(changed_inside, 0);
}

TEST(Backbone, StemTranslationCovariance) {
  BackboneConfig cfg;
  cfg.norm = NormKind::kBatch;
  Built b(cfg, 4);
  NoGradGuard g;
  TensorF img = random_image(6, 1, 64, 64);
  TensorF shifted = TensorF::zeros({1, 3, 64, 64});
  for (int64_t ch = 0; ch < 3; ++ch)
    for (int64_t r = 0; r < 64; ++r)
      for (int64_t c = 4; c < 64; ++c)
        shifted.data_mut()[(ch * 64 + r) * 64 + c] = img.data()[(ch * 64 + r) * 64 + c - 4];
  auto a = b.net->forward(img, ForwardContext{}).level(2);
  auto s = b.net->forward(shifted, ForwardContext{}).level(2);
  // Interior points whose receptive field avoids padding in both images.
  for (int64_t c = 0; c < 16; ++c)
    for (int64_t u = 3; u <= 12; ++u)
      for (int64_t v = 3; v <= 12; ++v)
        EXPECT_NEAR(s.data()[(c * 16 + u) * 16 + v + 1], a.data()[(c * 16 + u) * 16 + v], 1e-5);
}
