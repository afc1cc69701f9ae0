#include <gtest/gtest.h>

#include <cmath>

#include "forgeloc/model.hpp"
#include "forgeloc/random.hpp"

using namespace forgeloc;

namespace {

template <class T>
Tensor<T> random_t(uint64_t seed, Shape s, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<T> v(static_cast<size_t>(shape_numel(s)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(s), std::move(v));
}

template <class T>
std::vector<T> vec(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

struct GateFixture {
  ParameterStore<double> store;
  Conv2d<double> gate{store, Initializer{1}, "gate", 4, 4, 1, 1, 0};
  void saturate(double bias) {
    auto w = gate.weight().data_mut();
    std::fill(w.begin(), w.end(), 0.0);
    auto b = gate.bias().data_mut();
    std::fill(b.begin(), b.end(), bias);
  }
};

ModelConfig toy_config(uint64_t seed = 0) {
  ModelConfig cfg;
  cfg.init_seed = seed;
  return cfg;
}

}  // namespace

TEST(Fuse, SaturatedOpenGatePassesLowFeatures) {
  GateFixture f;
  f.saturate(20.0);
  auto a = random_t<double>(1, {1, 4, 4, 4}), b = random_t<double>(2, {1, 4, 2, 2});
  auto out = fuse_multiply(a, b, f.gate);
  for (size_t i = 0; i < out.data().size(); ++i) EXPECT_NEAR(out.data()[i], a.data()[i], 1e-6);
}

TEST(Fuse, SaturatedClosedGateSuppresses) {
  GateFixture f;
  f.saturate(-20.0);
  auto a = random_t<double>(1, {1, 4, 4, 4}), b = random_t<double>(2, {1, 4, 2, 2});
  const auto out = fuse_multiply(a, b, f.gate);
  for (double v : out.data()) EXPECT_NEAR(v, 0.0, 1e-6);
}

TEST(Fuse, MatchesDirectRecomputation) {
  GateFixture f;
  auto a = random_t<double>(3, {2, 4, 6, 4}), b = random_t<double>(4, {2, 4, 3, 2});
  auto out = fuse_multiply(a, b, f.gate);
  // Oracle in the stated order: upsample, then project, then sigmoid.
  auto up = nearest_upsample(b, 2);
  auto proj = conv2d(up, f.gate.weight(), f.gate.bias(), 1, 0);
  for (size_t i = 0; i < out.data().size(); ++i) {
    const double g = 1.0 / (1.0 + std::exp(-proj.data()[i]));
    EXPECT_NEAR(out.data()[i], a.data()[i] * g, 1e-14);
  }
}

TEST(Fuse, SizeMismatchRejected) {
  GateFixture f;
  EXPECT_THROW(fuse_multiply(TensorD({1, 4, 4, 4}), TensorD({1, 4, 3, 2}), f.gate), DimensionError);
  EXPECT_THROW(fuse_multiply(TensorD({1, 4, 4, 4}), TensorD({1, 4, 4, 4}), f.gate), DimensionError);
  EXPECT_THROW(fuse_add(TensorD({1, 4, 4, 4}), TensorD({2, 4, 2, 2}), f.gate), DimensionError);
}

TEST(Fuse, GateValuesBounded) {
  GateFixture f;
  auto a = TensorD::ones({1, 4, 8, 8});
  auto b = random_t<double>(5, {1, 4, 4, 4}, -3.0, 3.0);
  const auto out = fuse_multiply(a, b, f.gate);
  for (double g : out.data()) {
    EXPECT_GT(g, 0.0);
    EXPECT_LT(g, 1.0);
  }
}

TEST(Fuse, MonotoneDampening) {
  GateFixture f;
  auto a = random_t<double>(6, {1, 4, 4, 4}), b = random_t<double>(7, {1, 4, 2, 2});
  auto before = fuse_multiply(a, b, f.gate);
  for (auto& v : f.gate.bias().data_mut()) v -= 0.5;  // every gate value decreases
  auto after = fuse_multiply(a, b, f.gate);
  for (size_t i = 0; i < before.data().size(); ++i)
    EXPECT_LE(std::abs(after.data()[i]), std::abs(before.data()[i]));
}

TEST(Correction, ToyBranchShapes) {
  ForgeryLocalizer<float> model(toy_config());
  NoGradGuard g;
  auto out = model.forward(random_t<float>(1, {2, 3, 64, 64}, 0.0, 1.0), ForwardContext{});
  EXPECT_EQ(out.branch(2).shape(), (Shape{2, 1, 16, 16}));
  EXPECT_EQ(out.branch(3).shape(), (Shape{2, 1, 8, 8}));
  EXPECT_EQ(out.branch(4).shape(), (Shape{2, 1, 4, 4}));
  EXPECT_EQ(out.branch(5).shape(), (Shape{2, 1, 2, 2}));
  EXPECT_EQ(out.fused_final.shape(), (Shape{2, 1, 64, 64}));
}

TEST(Correction, PruneToC5TouchesOnlyE5) {
  ParameterStore<float> store;
  DenseCorrection<float> corr(store, Initializer{2}, "correction", 8, FusionMode::kMultiply);
  std::array<TensorF, 4> encoded;
  encoded[3] = random_t<float>(3, {1, 8, 2, 2});
  auto out = corr.forward(encoded, 5);
  EXPECT_FALSE(out.has(2));
  EXPECT_FALSE(out.has(4));
  EXPECT_EQ(vec(out.branch(5)), vec(corr.head(5)(encoded[3])));
  EXPECT_THROW(out.branch(4), ConfigError);
}

TEST(Correction, MissingScaleIsConfigError) {
  ParameterStore<float> store;
  DenseCorrection<float> corr(store, Initializer{2}, "correction", 8, FusionMode::kMultiply);
  std::array<TensorF, 4> encoded;
  encoded[3] = random_t<float>(3, {1, 8, 2, 2});
  encoded[1] = random_t<float>(4, {1, 8, 8, 8});
  EXPECT_THROW(corr.forward(encoded, 3), ConfigError);
}

TEST(Correction, C5IndependentOfLowerBranches) {
  ParameterStore<double> store;
  DenseCorrection<double> corr(store, Initializer{2}, "correction", 8, FusionMode::kMultiply);
  std::array<TensorD, 4> encoded{random_t<double>(1, {1, 8, 16, 16}), random_t<double>(2, {1, 8, 8, 8}),
                                 random_t<double>(3, {1, 8, 4, 4}), random_t<double>(4, {1, 8, 2, 2})};
  auto a = corr.forward(encoded, 2);
  encoded[0] = random_t<double>(11, {1, 8, 16, 16});
  encoded[1] = random_t<double>(12, {1, 8, 8, 8});
  encoded[2] = random_t<double>(13, {1, 8, 4, 4});
  auto b = corr.forward(encoded, 2);
  EXPECT_EQ(vec(a.branch(5)), vec(b.branch(5)));
  EXPECT_NE(vec(a.branch(4)), vec(b.branch(4)));
}

TEST(Correction, PruningIsBitExactForEveryBranch) {
  ForgeryLocalizer<float> model(toy_config(7));
  NoGradGuard g;
  TensorF img = random_t<float>(9, {2, 3, 64, 64}, 0.0, 1.0);
  auto full = model.forward(img, ForwardContext{});
  for (int k = 2; k <= 5; ++k) {
    auto pruned = model.forward(img, ForwardContext{}, k);
    for (int j = 2; j < k; ++j) EXPECT_FALSE(pruned.has(j));
    for (int j = k; j <= 5; ++j) EXPECT_EQ(vec(pruned.branch(j)), vec(full.branch(j))) << "C" << j;
    EXPECT_EQ(pruned.output_branch, k);
  }
}

TEST(Correction, AdditiveAblationRuns) {
  ModelConfig cfg = toy_config(1);
  cfg.fusion = FusionMode::kAdd;
  ForgeryLocalizer<float> model(cfg);
  NoGradGuard g;
  auto out = model.forward(random_t<float>(2, {1, 3, 64, 64}, 0.0, 1.0), ForwardContext{});
  for (float v : out.branch(2).data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Model, ParameterNamesUnique) {
  ForgeryLocalizer<float> model(toy_config());
  std::set<std::string> names;
  for (const auto& e : model.parameters().entries()) EXPECT_TRUE(names.insert(e.name).second) << e.name;
  EXPECT_NE(model.parameters().find("encoder3.encoder.layer1.self_attn.q_proj.weight"), nullptr);
  EXPECT_NE(model.parameters().find("correction.gate2.weight"), nullptr);
  EXPECT_NE(model.parameters().find("correction.head5.weight"), nullptr);
}

TEST(Model, InitIsSeededAndPrecisionIndependent) {
  ForgeryLocalizer<float> a(toy_config(3)), b(toy_config(3)), c(toy_config(4));
  ForgeryLocalizer<double> d(toy_config(3));
  const auto& ea = a.parameters().entries();
  bool any_diff = false;
  for (size_t i = 0; i < ea.size(); ++i) {
    EXPECT_EQ(vec(ea[i].tensor), vec(b.parameters().entries()[i].tensor));
    if (vec(ea[i].tensor) != vec(c.parameters().entries()[i].tensor)) any_diff = true;
    auto dv = d.parameters().entries()[i].tensor.data();
    for (size_t k = 0; k < dv.size(); ++k) ASSERT_EQ(static_cast<float>(dv[k]), ea[i].tensor.data()[k]);
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, AttentionTracesRowStochastic) {
  ForgeryLocalizer<float> model(toy_config(2));
  std::array<AttentionTrace<float>, 4> traces;
  NoGradGuard g;
  model.forward(random_t<float>(3, {1, 3, 64, 64}, 0.0, 1.0), ForwardContext{true, 1, 1}, 2, 0, &traces);
  for (const auto& trace : traces) {
    ASSERT_EQ(trace.size(), 2u);
    for (const auto& t : trace) {
      const int64_t n = t.dim(-1);
      for (int64_t r = 0; r < t.numel() / n; ++r) {
        double s = 0;
        for (int64_t k = 0; k < n; ++k) s += t.data()[r * n + k];
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST(FinalizeMask, Definitions) {
  auto p = finalize_mask(TensorF::zeros({1, 1, 2, 2}), 4, 4);
  for (float v : p.data()) EXPECT_FLOAT_EQ(v, 0.5f);
  auto q = finalize_mask(TensorF::full({1, 1, 1, 1}, 20.0f), 2, 2);
  for (float v : q.data()) EXPECT_NEAR(v, 1.0f, 1e-6);
  auto r = finalize_mask(TensorD({1, 1, 2, 2}, {-1.0, 0.0, 1.0, 2.0}), 4, 4);
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 4; ++x) {
      const double logit = -1.0 + static_cast<double>((y / 2) * 2 + x / 2);
      EXPECT_DOUBLE_EQ(r.data()[y * 4 + x], 1.0 / (1.0 + std::exp(-logit)));
    }
  EXPECT_THROW(finalize_mask(TensorF({1, 1, 4, 4}), 2, 2), DimensionError);
  auto bin = binarize(TensorF({4}, {0.2f, 0.5f, 0.7f, 0.49f}));
  EXPECT_EQ(vec(bin), (std::vector<float>{0, 1, 1, 0}));
}
