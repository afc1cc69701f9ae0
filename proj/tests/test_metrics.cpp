#include <gtest/gtest.h>

#include <cmath>

#include "forgeloc/errors.hpp"
#include "forgeloc/metrics.hpp"
#include "forgeloc/random.hpp"

using namespace forgeloc;

namespace {

/// Brute force over all positive-negative pairs; ties count one half.
double pair_auc(const std::vector<float>& s, const std::vector<float>& g) {
  double wins = 0;
  int64_t pairs = 0;
  for (size_t i = 0; i < s.size(); ++i)
    for (size_t j = 0; j < s.size(); ++j)
      if (g[i] > 0.5f && g[j] <= 0.5f) {
        ++pairs;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / static_cast<double>(pairs);
}

}  // namespace

TEST(Auc, PerfectSeparation) {
  EXPECT_DOUBLE_EQ(*pixel_auc(std::vector<float>{0.9f, 0.8f, 0.2f, 0.1f}, std::vector<float>{1, 1, 0, 0}), 1.0);
}

TEST(Auc, AllTiedIsHalf) {
  EXPECT_DOUBLE_EQ(*pixel_auc(std::vector<float>(6, 0.3f), std::vector<float>{1, 0, 0, 1, 0, 1}), 0.5);
}

TEST(Auc, InterleavedExamples) {
  const std::vector<float> gt{1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(*pixel_auc(std::vector<float>{0.9f, 0.4f, 0.6f, 0.1f}, gt), 1.0);
  EXPECT_DOUBLE_EQ(*pixel_auc(std::vector<float>{0.4f, 0.9f, 0.1f, 0.6f}, gt), 0.0);
}

TEST(Auc, DegenerateGroundTruthIsSkipped) {
  EXPECT_FALSE(pixel_auc(std::vector<float>{0.1f, 0.2f}, std::vector<float>{0, 0}).has_value());
  EXPECT_FALSE(pixel_auc(std::vector<float>{0.1f, 0.2f}, std::vector<float>{1, 1}).has_value());
  EXPECT_THROW(pixel_auc(std::vector<float>{0.1f}, std::vector<float>{0, 1}), DimensionError);
}

TEST(Auc, MatchesPairOracleWithTies) {
  Rng rng(21);
  for (int t = 0; t < 200; ++t) {
    const size_t n = static_cast<size_t>(rng.range(2, 64));
    std::vector<float> s(n), g(n);
    for (size_t i = 0; i < n; ++i) {
      s[i] = static_cast<float>(rng.below(8)) / 8.0f;  // coarse values force ties
      g[i] = rng.bernoulli(0.4) ? 1.0f : 0.0f;
    }
    auto auc = pixel_auc(s, g);
    const bool degenerate = std::all_of(g.begin(), g.end(), [&](float v) { return v == g[0]; });
    ASSERT_EQ(auc.has_value(), !degenerate);
    if (auc) EXPECT_NEAR(*auc, pair_auc(s, g), 1e-12);
  }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  Rng rng(22);
  for (int t = 0; t < 10; ++t) {
    std::vector<float> s(64), g(64), e(64);
    for (size_t i = 0; i < 64; ++i) {
      s[i] = static_cast<float>(rng.uniform());
      g[i] = i % 3 == 0 ? 1.0f : 0.0f;
      e[i] = s[i] * s[i] * s[i] + 2.0f;
    }
    EXPECT_DOUBLE_EQ(*pixel_auc(s, g), *pixel_auc(e, g));
  }
}

TEST(F1, PerfectAndEmptyPredictions) {
  std::vector<float> gt{1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(f1_score(gt, gt), 1.0);
  EXPECT_DOUBLE_EQ(f1_score(std::vector<float>(4, 0.1f), gt), 0.0);
  EXPECT_DOUBLE_EQ(f1_score(std::vector<float>(4, 0.1f), std::vector<float>(4, 0.0f)), 0.0);
}

TEST(F1, CountingOracle) {
  std::vector<float> pred(16, 0.0f), gt(16, 0.0f);
  for (int i : {0, 1, 2, 3}) pred[i] = 0.9f;
  for (int i : {2, 3, 4, 5}) gt[i] = 1.0f;
  const auto c = confusion(pred, gt);
  EXPECT_EQ(c.tp, 2);
  EXPECT_EQ(c.fp, 2);
  EXPECT_EQ(c.fn, 2);
  EXPECT_DOUBLE_EQ(c.precision(), 0.5);
  EXPECT_DOUBLE_EQ(c.recall(), 0.5);
  EXPECT_DOUBLE_EQ(f1_score(pred, gt), 0.5);
}

TEST(F1, ThresholdIsInclusive) {
  EXPECT_DOUBLE_EQ(f1_score(std::vector<float>{0.5f}, std::vector<float>{1.0f}), 1.0);
  EXPECT_DOUBLE_EQ(f1_score(std::vector<float>{0.5f}, std::vector<float>{1.0f}, 0.6), 0.0);
}

TEST(EvalReport, PooledAucMatchesBruteForce) {
  Rng rng(23);
  EvalAccumulator acc;
  std::vector<float> all_s, all_g;
  for (int img = 0; img < 6; ++img) {
    std::vector<float> s(16), g(16);
    for (size_t i = 0; i < 16; ++i) {
      s[i] = static_cast<float>(rng.uniform());
      g[i] = img == 2 ? 0.0f : (rng.bernoulli(0.3) || i == 0 ? 1.0f : 0.0f);
    }
    acc.add(s, g);
    if (img != 2) {
      all_s.insert(all_s.end(), s.begin(), s.end());
      all_g.insert(all_g.end(), g.begin(), g.end());
    }
  }
  const EvalReport r = acc.finish(3);
  EXPECT_EQ(r.num_images, 6);
  EXPECT_EQ(r.num_skipped, 1);
  EXPECT_EQ(r.per_image_auc.size(), 5u);
  EXPECT_NEAR(r.pixel_auc, pair_auc(all_s, all_g), 1e-12);
  EXPECT_GE(r.f1, 0.0);
  EXPECT_LE(r.f1, 1.0);
  EXPECT_NE(r.to_text().find("branch=C3"), std::string::npos);
  EXPECT_EQ(r.to_json()["num_skipped"], 1);
  EXPECT_EQ(r.to_json()["branch"], "C3");
}
