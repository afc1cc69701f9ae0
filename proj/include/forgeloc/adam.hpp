#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "forgeloc/nn.hpp"

namespace forgeloc {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments of one parameter.
template <class T>
struct AdamSlot {
  std::string name;
  std::vector<T> m, v;
};

template <class T>
struct AdamState {
  int64_t step = 0;
  std::vector<AdamSlot<T>> slots;

  const AdamSlot<T>* find(const std::string& name) const {
    for (const auto& s : slots)
      if (s.name == name) return &s;
    return nullptr;
  }
};

/// One bias-corrected Adam update of every trainable parameter that
/// requires grad. Frozen parameters (requires_grad off) are skipped and keep
/// their moments. Throws TrainingError naming the first parameter without a
/// gradient.
template <class T>
void adam_step(ParameterStore<T>& params, AdamState<T>& state, double lr,
               const AdamOptions& opt = {});

}  // namespace forgeloc
