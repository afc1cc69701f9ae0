#include "forgeloc/backbone.hpp"

namespace forgeloc {

void BackboneConfig::validate() const {
  if (stem_channels < 1) throw ConfigError("backbone.stem_channels must be positive");
  for (size_t i = 0; i < 4; ++i) {
    if (stage_channels[i] < 1) throw ConfigError("backbone.stage_channels must be positive");
    if (blocks_per_stage[i] < 1) throw ConfigError("backbone.blocks_per_stage must be >= 1");
    if (bottleneck && stage_channels[i] % 4 != 0) {
      throw ConfigError("bottleneck blocks need stage channels divisible by 4");
    }
  }
}

template <class T>
ResidualBlock<T>::ResidualBlock(ParameterStore<T>& store, const Initializer& init,
                                const std::string& name, int64_t in_channels,
                                int64_t out_channels, int64_t stride, NormKind norm,
                                bool bottleneck)
    : bottleneck_(bottleneck) {
  if (bottleneck) {
    const int64_t mid = out_channels / 4;
    convs_.emplace_back(store, init, name + ".conv1", in_channels, mid, 1, 1, 0, false);
    norms_.emplace_back(store, name + ".norm1", mid, norm);
    convs_.emplace_back(store, init, name + ".conv2", mid, mid, 3, stride, 1, false);
    norms_.emplace_back(store, name + ".norm2", mid, norm);
    convs_.emplace_back(store, init, name + ".conv3", mid, out_channels, 1, 1, 0, false);
    norms_.emplace_back(store, name + ".norm3", out_channels, norm);
  } else {
    convs_.emplace_back(store, init, name + ".conv1", in_channels, out_channels, 3, stride, 1,
                        false);
    norms_.emplace_back(store, name + ".norm1", out_channels, norm);
    convs_.emplace_back(store, init, name + ".conv2", out_channels, out_channels, 3, 1, 1, false);
    norms_.emplace_back(store, name + ".norm2", out_channels, norm);
  }
  if (stride != 1 || in_channels != out_channels) {
    project_ = true;
    proj_ = Conv2d<T>(store, init, name + ".shortcut", in_channels, out_channels, 1, stride, 0,
                      false);
    proj_norm_ = Norm2d<T>(store, name + ".shortcut_norm", out_channels, norm);
  }
}

template <class T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x, const ForwardContext& ctx) const {
  Tensor<T> h = x;
  for (size_t i = 0; i < convs_.size(); ++i) {
    h = norms_[i](convs_[i](h), ctx);
    if (i + 1 < convs_.size()) h = relu(h);
  }
  Tensor<T> shortcut = project_ ? proj_norm_(proj_(x), ctx) : x;
  return relu(add(h, shortcut));
}

template <class T>
Backbone<T>::Backbone(ParameterStore<T>& store, const Initializer& init,
                      const std::string& prefix, const BackboneConfig& cfg)
    : cfg_(cfg) {
  cfg_.validate();
  stem_conv_ = Conv2d<T>(store, init, prefix + ".stem.conv", 3, cfg.stem_channels, 3, 2, 1, false);
  stem_norm_ = Norm2d<T>(store, prefix + ".stem.norm", cfg.stem_channels, cfg.norm);
  int64_t in = cfg.stem_channels;
  for (size_t s = 0; s < 4; ++s) {
    const std::string stage = prefix + ".stage" + std::to_string(s + 2);
    for (int64_t b = 0; b < cfg.blocks_per_stage[s]; ++b) {
      // The stem already reduces by 4; later stages halve in their first block.
      const int64_t stride = (b == 0 && s > 0) ? 2 : 1;
      stages_[s].emplace_back(store, init, stage + ".block" + std::to_string(b), in,
                              cfg.stage_channels[s], stride, cfg.norm, cfg.bottleneck);
      in = cfg.stage_channels[s];
    }
  }
}

template <class T>
FeaturePyramid<T> Backbone<T>::forward(const Tensor<T>& image, const ForwardContext& ctx) const {
  if (image.ndim() != 4 || image.dim(1) != 3) {
    throw InputError("backbone expects [B,3,H,W], got " + shape_str(image.shape()));
  }
  if (image.dim(2) % 32 != 0 || image.dim(3) % 32 != 0 || image.dim(2) == 0 ||
      image.dim(3) == 0) {
    throw InputError("image height and width must be positive multiples of 32, got " +
                     shape_str(image.shape()));
  }
  Tensor<T> h = relu(stem_norm_(stem_conv_(image), ctx));
  h = max_pool2d(h, 2, 2);
  FeaturePyramid<T> pyr;
  for (size_t s = 0; s < 4; ++s) {
    for (const auto& block : stages_[s]) h = block.forward(h, ctx);
    pyr.levels[s] = h;
  }
  return pyr;
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Backbone<float>;
template class Backbone<double>;

}  // namespace forgeloc
