#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "forgeloc/model.hpp"
#include "forgeloc/tensor.hpp"

namespace forgeloc {

struct GradcheckResult {
  std::string name;
  /// max |analytic - numeric| / max(1, |numeric|) over the checked elements.
  double max_error = 0.0;
  int64_t checked = 0;
  double tolerance = 0.0;
  bool passed = false;
};

using ScalarFn = std::function<TensorD(const std::vector<TensorD>&)>;

/// Compares the tape gradient of f with central differences for every
/// element of every input.
GradcheckResult gradcheck(const std::string& name, const ScalarFn& f,
                          std::vector<TensorD> inputs, double eps = 1e-3, double tol = 1e-4);

/// Names of the registered op checks, in run order.
std::vector<std::string> gradcheck_op_names();

/// Runs the registered op checks (all when names is empty).
std::vector<GradcheckResult> gradcheck_ops(uint64_t seed, double tol = 1e-4,
                                           const std::vector<std::string>& names = {});

/// Smallest model configuration that the end-to-end check builds.
ModelConfig gradcheck_model_config(uint64_t seed);

/// End-to-end check of the joint loss w.r.t. a random subset of model
/// parameter elements, on a size x size input in double precision.
/// At 32x32 the C5 map is 1x1 and every norm group holds one value, so the
/// freshly initialized model sits on relu kinks; 64 is the smallest size
/// where the loss is differentiable at init. The small eps keeps the
/// perturbation from crossing the kinks of the many near-zero activations.
GradcheckResult gradcheck_model(uint64_t seed, int64_t size = 64, int num_elements = 20,
                                double eps = 1e-5, double tol = 1e-3);

}  // namespace forgeloc
