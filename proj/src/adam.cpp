#include "forgeloc/adam.hpp"

#include <cmath>

#include "forgeloc/errors.hpp"

namespace forgeloc {

template <class T>
void adam_step(ParameterStore<T>& params, AdamState<T>& state, double lr, const AdamOptions& opt) {
  std::vector<typename ParameterStore<T>::Entry*> active;
  for (auto& e : params.entries()) {
    if (!e.trainable || !e.tensor.requires_grad()) continue;
    if (!e.tensor.has_grad()) throw TrainingError("adam: parameter " + e.name + " has no gradient");
    active.push_back(&e);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t), c2 = 1.0 - std::pow(opt.beta2, t);
  for (auto* e : active) {
    AdamSlot<T>* slot = nullptr;
    for (auto& s : state.slots)
      if (s.name == e->name) slot = &s;
    const size_t n = static_cast<size_t>(e->tensor.numel());
    if (!slot) {
      state.slots.push_back({e->name, std::vector<T>(n, T(0)), std::vector<T>(n, T(0))});
      slot = &state.slots.back();
    }
    if (slot->m.size() != n) throw TrainingError("adam: moment size mismatch for " + e->name);
    auto p = e->tensor.data_mut();
    auto g = e->tensor.grad();
    for (size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      const double m = opt.beta1 * slot->m[i] + (1.0 - opt.beta1) * gi;
      const double v = opt.beta2 * slot->v[i] + (1.0 - opt.beta2) * gi * gi;
      slot->m[i] = static_cast<T>(m);
      slot->v[i] = static_cast<T>(v);
      p[i] = static_cast<T>(p[i] - lr * (m / c1) / (std::sqrt(v / c2) + opt.eps));
    }
  }
}

template void adam_step(ParameterStore<float>&, AdamState<float>&, double, const AdamOptions&);
template void adam_step(ParameterStore<double>&, AdamState<double>&, double, const AdamOptions&);

}  // namespace forgeloc
