#include <gtest/gtest.h>

#include "forgeloc/gradcheck.hpp"

using namespace forgeloc;

TEST(Gradcheck, EveryRegisteredOpPasses) {
  for (uint64_t seed : {0ULL, 1ULL}) {
    const auto results = gradcheck_ops(seed, 1e-4);
    EXPECT_EQ(results.size(), gradcheck_op_names().size());
    for (const auto& r : results) {
      EXPECT_TRUE(r.passed) << r.name << " seed " << seed << " error " << r.max_error;
      EXPECT_GT(r.checked, 0) << r.name;
    }
  }
}

TEST(Gradcheck, DetectsWrongGradient) {
  // detach() hides a dependency from the tape, so the analytic gradient is wrong.
  ScalarFn f = [](const std::vector<TensorD>& x) { return sum(mul(x[0], x[0].detach())); };
  auto r = gradcheck("broken", f, {TensorD({3}, {1.0, 2.0, 3.0}, true)});
  EXPECT_FALSE(r.passed);
}

TEST(Gradcheck, UnknownOpNameRejected) {
  EXPECT_THROW(gradcheck_ops(0, 1e-4, {"no_such_op"}), ConfigError);
}

TEST(Gradcheck, EndToEndModel) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto r = gradcheck_model(seed);
    EXPECT_EQ(r.checked, 20);
    EXPECT_TRUE(r.passed) << "seed " << seed << ": " << r.max_error;
  }
}

TEST(Gradcheck, ModelRejectsSizesBelowStride) {
  EXPECT_THROW(gradcheck_model(0, 16), InputError);
}
