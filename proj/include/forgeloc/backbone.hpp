#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "forgeloc/nn.hpp"

namespace forgeloc {

struct BackboneConfig {
  std::array<int64_t, 4> stage_channels{16, 32, 64, 128};
  std::array<int64_t, 4> blocks_per_stage{1, 1, 1, 1};
  int64_t stem_channels = 16;
  NormKind norm = NormKind::kGroup;
  bool bottleneck = false;

  void validate() const;
};

/// Stage outputs at strides 4, 8, 16, 32; level(i) for i in 2..5.
template <class T>
struct FeaturePyramid {
  std::array<Tensor<T>, 4> levels;

  Tensor<T>& level(int i) { return levels.at(static_cast<size_t>(i - 2)); }
  const Tensor<T>& level(int i) const { return levels.at(static_cast<size_t>(i - 2)); }
};

/// Two 3x3 convs (basic) or 1x1-3x3-1x1 (bottleneck), each followed by
/// normalization, with an identity or 1x1-projected shortcut.
template <class T>
class ResidualBlock {
 public:
  ResidualBlock(ParameterStore<T>& store, const Initializer& init, const std::string& name,
                int64_t in_channels, int64_t out_channels, int64_t stride, NormKind norm,
                bool bottleneck);

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx) const;

 private:
  bool bottleneck_;
  std::vector<Conv2d<T>> convs_;
  std::vector<Norm2d<T>> norms_;
  bool project_ = false;
  Conv2d<T> proj_;
  Norm2d<T> proj_norm_;
};

template <class T>
class Backbone {
 public:
  Backbone(ParameterStore<T>& store, const Initializer& init, const std::string& prefix,
           const BackboneConfig& cfg);

  /// image: [B, 3, H, W] with H, W divisible by 32.
  FeaturePyramid<T> forward(const Tensor<T>& image, const ForwardContext& ctx) const;

  const BackboneConfig& config() const { return cfg_; }

 private:
  BackboneConfig cfg_;
  Conv2d<T> stem_conv_;
  Norm2d<T> stem_norm_;
  std::array<std::vector<ResidualBlock<T>>, 4> stages_;
};

}  // namespace forgeloc
