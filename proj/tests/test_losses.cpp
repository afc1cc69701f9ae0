#include <gtest/gtest.h>

#include <cmath>

#include "forgeloc/errors.hpp"
#include "forgeloc/gradcheck.hpp"
#include "forgeloc/losses.hpp"
#include "forgeloc/random.hpp"

using namespace forgeloc;

namespace {

TensorD td(Shape s, std::vector<double> v) { return TensorD(std::move(s), std::move(v)); }

BranchOutputs<double> random_branches(uint64_t seed, int64_t b = 1) {
  Rng rng(seed);
  BranchOutputs<double> out;
  int64_t s = 16;
  for (size_t i = 0; i < 4; ++i, s /= 2) {
    std::vector<double> v(static_cast<size_t>(b * s * s));
    for (auto& x : v) x = rng.uniform(-2.0, 2.0);
    out.logits[i] = TensorD({b, 1, s, s}, std::move(v));
  }
  return out;
}

TensorD square_mask(int64_t b, int64_t size) {
  std::vector<double> m(static_cast<size_t>(b * size * size), 0.0);
  for (int64_t n = 0; n < b; ++n)
    for (int64_t y = 8; y < 40; ++y)
      for (int64_t x = 16 + n; x < 48; ++x) m[static_cast<size_t>((n * size + y) * size + x)] = 1.0;
  return td({b, 1, size, size}, std::move(m));
}

}  // namespace

TEST(Dice, IdenticalBinaryMasksGiveZero) {
  TensorD y = td({6}, {1, 0, 1, 1, 0, 0});
  EXPECT_NEAR(dice_loss(y, y, 0.0).item(), 0.0, 1e-12);
  EXPECT_NEAR(dice_loss(y, y, 1.0).item(), 0.0, 1e-12);
}

TEST(Dice, DisjointMasksGiveOne) {
  EXPECT_NEAR(dice_loss(td({2}, {1, 0}), td({2}, {0, 1}), 0.0).item(), 1.0, 1e-12);
}

TEST(Dice, TabulatedExample) {
  TensorD y = td({4}, {1, 1, 0, 0}), p = td({4}, {1, 0.5, 0.5, 0});
  EXPECT_NEAR(dice_loss(y, p, 0.0).item(), 1.0 - 2.0 * 1.5 / 4.0, 1e-12);
  EXPECT_NEAR(dice_loss(y, p, 0.0).item(), 0.25, 1e-6);
  // Smoothed variant: 1 - (2 * 1.5 + 1) / (4 + 1).
  EXPECT_NEAR(dice_loss(y, p, 1.0).item(), 0.2, 1e-12);
}

TEST(Dice, EmptyMasksAreZeroLoss) {
  TensorD z = TensorD::zeros({5});
  EXPECT_DOUBLE_EQ(dice_loss(z, z, 1.0).item(), 0.0);
  EXPECT_DOUBLE_EQ(dice_loss(z, z, 0.0).item(), 0.0);
}

TEST(Dice, RangeAndSymmetry) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> y(20), p(20), q(20);
    for (size_t i = 0; i < 20; ++i) {
      y[i] = rng.bernoulli(0.4);
      p[i] = rng.uniform();
      q[i] = rng.bernoulli(0.5);
    }
    const double d = dice_loss(td({20}, y), td({20}, p), 1.0).item();
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
    EXPECT_DOUBLE_EQ(dice_loss(td({20}, y), td({20}, q), 1.0).item(),
                     dice_loss(td({20}, q), td({20}, y), 1.0).item());
  }
}

TEST(Dice, ShapeMismatchRejected) {
  EXPECT_THROW(dice_loss(TensorD({4}), TensorD({2, 2})), DimensionError);
  EXPECT_THROW(focal_loss(TensorD({4}), TensorD({5})), DimensionError);
}

TEST(Focal, ReducesToHalfCrossEntropy) {
  TensorD y = td({4}, {1, 0, 1, 0}), p = td({4}, {0.9, 0.2, 0.3, 0.6});
  double ce = 0;
  for (int i = 0; i < 4; ++i) {
    const double pt = y.data()[i] > 0.5 ? p.data()[i] : 1 - p.data()[i];
    ce -= std::log(pt) / 4;
  }
  EXPECT_NEAR(focal_loss(y, p, 0.5, 0.0).item(), 0.5 * ce, 1e-12);
}

TEST(Focal, SinglePixelExample) {
  const double v = focal_loss(td({1}, {1}), td({1}, {0.5}), 0.25, 2.0).item();
  EXPECT_NEAR(v, -0.25 * 0.25 * std::log(0.5), 1e-12);
  EXPECT_NEAR(v, 0.043322, 1e-6);
}

TEST(Focal, NegativePixelUsesComplementWeights) {
  const double v = focal_loss(td({1}, {0}), td({1}, {0.3}), 0.25, 2.0).item();
  EXPECT_NEAR(v, -0.75 * 0.3 * 0.3 * std::log(0.7), 1e-12);
}

TEST(Focal, ConfidentCorrectPredictionVanishes) {
  EXPECT_LT(focal_loss(td({1}, {1}), td({1}, {1.0 - 1e-4}), 0.25, 2.0).item(), 1e-12);
  // The clamp keeps p = 0 finite.
  const double worst = focal_loss(td({1}, {1}), td({1}, {0.0}), 0.25, 2.0).item();
  EXPECT_TRUE(std::isfinite(worst));
  EXPECT_NEAR(worst, -0.25 * std::pow(1 - 1e-6, 2) * std::log(1e-6), 1e-9);
}

TEST(Focal, NonNegative) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> y(10), p(10);
    for (size_t i = 0; i < 10; ++i) {
      y[i] = rng.bernoulli(0.5);
      p[i] = rng.uniform();
    }
    EXPECT_GE(focal_loss(td({10}, y), td({10}, p)).item(), 0.0);
  }
}

TEST(Losses, GradcheckBoundedAwayFromEdges) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    for (const auto& r : gradcheck_ops(seed, 1e-4, {"dice_loss", "dice_loss_unsmoothed", "focal_loss"}))
      EXPECT_TRUE(r.passed) << r.name << " " << r.max_error;
  }
}

TEST(JointLoss, OneBranchWithUnitWeightIsDicePlusFocal) {
  BranchOutputs<double> b;
  b.lowest_branch = 5;
  Rng rng(1);
  std::vector<double> v(4);
  for (auto& x : v) x = rng.uniform(-1, 1);
  b.logits[3] = td({1, 1, 2, 2}, v);
  TensorD gt = square_mask(1, 64);
  LossConfig cfg;
  cfg.require_standard_weights = false;
  cfg.lambdas = {1, 1, 1, 1};
  const double total = joint_loss(b, gt, cfg).total.item();
  TensorD prob = nearest_resize(sigmoid(b.logits[3]), 64, 64);
  const double expected = dice_loss(gt, prob, 1.0, true).item() + focal_loss(gt, prob).item();
  EXPECT_NEAR(total, expected, 1e-12);
}

TEST(JointLoss, WeightedSumOfBranches) {
  auto b = random_branches(2, 2);
  TensorD gt = square_mask(2, 64);
  LossConfig cfg;
  auto jl = joint_loss(b, gt, cfg);
  double expected = 0;
  for (int i = 0; i < 4; ++i) {
    EXPECT_TRUE(std::isfinite(jl.branch_loss[i]));
    expected += cfg.lambdas[i] * jl.branch_loss[i];
  }
  EXPECT_NEAR(jl.total.item(), expected, 1e-12);
  EXPECT_GE(jl.total.item(), 0.0);
}

TEST(JointLoss, UpsampleOrdering) {
  auto b = random_branches(3);
  TensorD gt = square_mask(1, 64);
  LossConfig cfg;
  cfg.lambdas = {0.1, 0.2, 0.3, 0.4};
  EXPECT_NO_THROW(joint_loss(b, gt, cfg));
  cfg.lambdas = {0.4, 0.3, 0.2, 0.1};
  EXPECT_THROW(joint_loss(b, gt, cfg), ConfigError);
}

TEST(JointLoss, DownsampleOrdering) {
  auto b = random_branches(3);
  TensorD gt = square_mask(1, 64);
  LossConfig cfg;
  cfg.mode = LossMode::kDownsample;
  cfg.lambdas = {0.4, 0.3, 0.2, 0.1};
  EXPECT_NO_THROW(joint_loss(b, gt, cfg));
  cfg.lambdas = {0.1, 0.2, 0.3, 0.4};
  EXPECT_THROW(joint_loss(b, gt, cfg), ConfigError);
}

TEST(JointLoss, AllPermutationsClassifiedByOrdering) {
  std::array<double, 4> l{0.1, 0.2, 0.3, 0.4};
  int accepted_up = 0, accepted_down = 0;
  do {
    for (LossMode mode : {LossMode::kUpsample, LossMode::kDownsample}) {
      LossConfig cfg;
      cfg.mode = mode;
      cfg.lambdas = l;
      const bool increasing = l[0] < l[1] && l[1] < l[2] && l[2] < l[3];
      const bool decreasing = l[0] > l[1] && l[1] > l[2] && l[2] > l[3];
      const bool ok = mode == LossMode::kUpsample ? increasing : decreasing;
      if (ok) {
        EXPECT_NO_THROW(cfg.validate());
        ++(mode == LossMode::kUpsample ? accepted_up : accepted_down);
      } else {
        EXPECT_THROW(cfg.validate(), ConfigError);
      }
    }
  } while (std::next_permutation(l.begin(), l.end()));
  EXPECT_EQ(accepted_up, 1);
  EXPECT_EQ(accepted_down, 1);
}

TEST(JointLoss, WeightsOutsideStandardSetRejected) {
  LossConfig cfg;
  cfg.lambdas = {0.1, 0.2, 0.3, 0.5};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.lambdas = {0.1, 0.1, 0.3, 0.4};
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(JointLoss, PrunedBranchesOnlyOrderPresentOnes) {
  auto full = random_branches(4);
  BranchOutputs<double> b;
  b.lowest_branch = 4;
  b.logits[2] = full.logits[2];
  b.logits[3] = full.logits[3];
  LossConfig cfg;
  cfg.lambdas = {0.4, 0.1, 0.2, 0.3};  // C2, C3 absent; C4 < C5 holds
  auto jl = joint_loss(b, square_mask(1, 64), cfg);
  EXPECT_TRUE(std::isnan(jl.branch_loss[0]));
  EXPECT_TRUE(std::isfinite(jl.branch_loss[2]));
}

TEST(JointLoss, BadGroundTruthShapeRejected) {
  auto b = random_branches(5);
  EXPECT_THROW(joint_loss(b, TensorD({1, 64, 64}), LossConfig{}), DimensionError);
}

TEST(DownsampleMask, NearestAndMajority) {
  TensorD gt = td({1, 1, 2, 4}, {1, 1, 0, 1, 0, 0, 0, 1});
  auto n = downsample_mask(gt, 1, 2, MaskDownsample::kNearest);
  EXPECT_EQ(std::vector<double>(n.data().begin(), n.data().end()), (std::vector<double>{1, 0}));
  auto m = downsample_mask(gt, 1, 2, MaskDownsample::kMajority);
  EXPECT_EQ(std::vector<double>(m.data().begin(), m.data().end()), (std::vector<double>{1, 1}));
  EXPECT_THROW(downsample_mask(gt, 1, 3, MaskDownsample::kMajority), DimensionError);
}
