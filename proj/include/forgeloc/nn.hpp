#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "forgeloc/errors.hpp"
#include "forgeloc/ops.hpp"
#include "forgeloc/random.hpp"
#include "forgeloc/tensor.hpp"

namespace forgeloc {

/// Per-forward settings shared by every layer of a model.
struct ForwardContext {
  bool training = false;
  uint64_t seed = 0;  // dropout stream
  uint64_t step = 0;  // advanced once per optimizer step
};

/// Named tensors of a model: trainable parameters plus non-trainable buffers
/// (batch-norm running statistics). Names are unique hierarchical paths.
template <class T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool trainable = true;
  };

  Tensor<T> add_parameter(const std::string& name, Tensor<T> t) {
    t.set_requires_grad(true);
    insert(name, t, true);
    return t;
  }
  Tensor<T> add_buffer(const std::string& name, Tensor<T> t) {
    insert(name, t, false);
    return t;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  int64_t num_parameters() const {
    int64_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

 private:
  void insert(const std::string& name, const Tensor<T>& t, bool trainable) {
    if (find(name)) throw ConfigError("duplicate parameter name: " + name);
    entries_.push_back({name, t, trainable});
  }
  std::vector<Entry> entries_;
};

/// Deterministic initializers. Each tensor draws from a stream keyed by the
/// model seed and its own name, so values do not depend on creation order.
struct Initializer {
  uint64_t seed = 0;

  Rng stream(const std::string& name) const {
    return Rng(hash_mix({seed, fnv1a64(name.data(), name.size())}));
  }

  /// He-style normal init, stddev sqrt(2 / fan_in).
  template <class T>
  Tensor<T> he_normal(const std::string& name, Shape shape, int64_t fan_in) const {
    Rng rng = stream(name);
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<T>(static_cast<float>(rng.normal(0.0, sd)));
    return Tensor<T>(std::move(shape), std::move(v));
  }

  /// Xavier-uniform init, bound sqrt(6 / (fan_in + fan_out)).
  template <class T>
  Tensor<T> xavier_uniform(const std::string& name, Shape shape, int64_t fan_in,
                           int64_t fan_out) const {
    Rng rng = stream(name);
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<T>(static_cast<float>(rng.uniform(-a, a)));
    return Tensor<T>(std::move(shape), std::move(v));
  }
};

enum class InitKind { kHe, kXavier };

template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore<T>& store, const Initializer& init, const std::string& name,
         int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t stride,
         int64_t padding, bool with_bias = true, InitKind kind = InitKind::kHe)
      : stride_(stride), padding_(padding) {
    if (in_channels < 1 || out_channels < 1 || kernel < 1) {
      throw ConfigError("conv " + name + ": channel counts and kernel must be positive");
    }
    Shape shape{out_channels, in_channels, kernel, kernel};
    const int64_t fan_in = in_channels * kernel * kernel;
    Tensor<T> w = kind == InitKind::kHe
                      ? init.he_normal<T>(name + ".weight", shape, fan_in)
                      : init.xavier_uniform<T>(name + ".weight", shape, fan_in,
                                               out_channels * kernel * kernel);
    weight_ = store.add_parameter(name + ".weight", std::move(w));
    if (with_bias) bias_ = store.add_parameter(name + ".bias", Tensor<T>::zeros({out_channels}));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv2d(x, weight_, bias_, stride_, padding_);
  }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> weight_, bias_;
  int64_t stride_ = 1, padding_ = 0;
};

template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore<T>& store, const Initializer& init, const std::string& name,
         int64_t in_features, int64_t out_features) {
    weight_ = store.add_parameter(
        name + ".weight", init.xavier_uniform<T>(name + ".weight", {out_features, in_features},
                                                 in_features, out_features));
    bias_ = store.add_parameter(name + ".bias", Tensor<T>::zeros({out_features}));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight_, bias_); }

  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> weight_, bias_;
};

template <class T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& store, const std::string& name, int64_t dim) {
    gamma_ = store.add_parameter(name + ".weight", Tensor<T>::ones({dim}));
    beta_ = store.add_parameter(name + ".bias", Tensor<T>::zeros({dim}));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma_, beta_); }

 private:
  Tensor<T> gamma_, beta_;
};

enum class NormKind { kGroup, kBatch };

/// Largest group count <= 8 dividing the channel count.
inline int64_t default_groups(int64_t channels) {
  for (int64_t g = std::min<int64_t>(8, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

/// Spatial normalization for backbone feature maps.
template <class T>
class Norm2d {
 public:
  Norm2d() = default;
  Norm2d(ParameterStore<T>& store, const std::string& name, int64_t channels, NormKind kind)
      : kind_(kind), groups_(default_groups(channels)) {
    gamma_ = store.add_parameter(name + ".weight", Tensor<T>::ones({channels}));
    beta_ = store.add_parameter(name + ".bias", Tensor<T>::zeros({channels}));
    if (kind == NormKind::kBatch) {
      running_mean_ = store.add_buffer(name + ".running_mean", Tensor<T>::zeros({channels}));
      running_var_ = store.add_buffer(name + ".running_var", Tensor<T>::ones({channels}));
    }
  }

  Tensor<T> operator()(const Tensor<T>& x, const ForwardContext& ctx) const {
    if (kind_ == NormKind::kGroup) return group_norm(x, groups_, gamma_, beta_);
    Tensor<T> rm = running_mean_, rv = running_var_;
    return batch_norm(x, gamma_, beta_, rm, rv, ctx.training);
  }

 private:
  NormKind kind_ = NormKind::kGroup;
  int64_t groups_ = 1;
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
};

/// Stable op id for a dropout site, derived from its hierarchical name.
inline uint64_t site_id(const std::string& name) { return fnv1a64(name.data(), name.size()); }

}  // namespace forgeloc
