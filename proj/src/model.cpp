#include "forgeloc/model.hpp"

#include "forgeloc/config.hpp"
#include "forgeloc/random.hpp"

namespace forgeloc {

void ModelConfig::validate() const {
  backbone.validate();
  encoder.validate();
}

uint64_t ModelConfig::digest() const {
  const std::string canonical = to_json(*this).dump();
  return fnv1a64(canonical.data(), canonical.size());
}

template <class T>
ForgeryLocalizer<T>::ForgeryLocalizer(const ModelConfig& cfg)
    : cfg_(cfg), store_(std::make_unique<ParameterStore<T>>()) {
  cfg_.validate();
  const Initializer init{cfg.init_seed};
  backbone_ = std::make_unique<Backbone<T>>(*store_, init, "backbone", cfg.backbone);
  for (int i = kFirstBranch; i <= kLastBranch; ++i) {
    encoders_.push_back(std::make_unique<ScaleEncoder<T>>(
        *store_, init, "encoder" + std::to_string(i),
        cfg.backbone.stage_channels[i - kFirstBranch], cfg.encoder));
  }
  correction_ = std::make_unique<DenseCorrection<T>>(*store_, init, "correction",
                                                     cfg.encoder.d_model, cfg.fusion);
}

template <class T>
BranchOutputs<T> ForgeryLocalizer<T>::forward(const Tensor<T>& image, const ForwardContext& ctx,
                                              int lowest_branch, int output_branch,
                                              std::array<AttentionTrace<T>, 4>* traces) const {
  if (output_branch == 0) output_branch = lowest_branch;
  if (lowest_branch < kFirstBranch || lowest_branch > kLastBranch ||
      output_branch < lowest_branch || output_branch > kLastBranch) {
    throw ConfigError("invalid branch selection: lowest C" + std::to_string(lowest_branch) +
                      ", output C" + std::to_string(output_branch));
  }
  FeaturePyramid<T> pyr = backbone_->forward(image, ctx);
  std::array<Tensor<T>, 4> encoded;
  for (int i = lowest_branch; i <= kLastBranch; ++i) {
    const size_t k = static_cast<size_t>(i - kFirstBranch);
    encoded[k] = encoders_[k]->forward(pyr.level(i), ctx, traces ? &(*traces)[k] : nullptr);
  }
  BranchOutputs<T> out = correction_->forward(encoded, lowest_branch);
  out.output_branch = output_branch;
  out.fused_final = nearest_resize(out.branch(output_branch), image.dim(2), image.dim(3));
  return out;
}

template <class T>
Tensor<T> finalize_mask(const Tensor<T>& logits, int64_t out_h, int64_t out_w) {
  if (out_h < logits.dim(-2) || out_w < logits.dim(-1)) {
    throw DimensionError("finalize_mask: output " + std::to_string(out_h) + "x" +
                         std::to_string(out_w) + " smaller than logits " +
                         shape_str(logits.shape()));
  }
  return sigmoid(nearest_resize(logits, out_h, out_w));
}

template <class T>
Tensor<T> binarize(const Tensor<T>& probabilities, T threshold) {
  auto p = probabilities.data();
  std::vector<T> out(p.size());
  for (size_t i = 0; i < p.size(); ++i) out[i] = p[i] >= threshold ? T(1) : T(0);
  return Tensor<T>(probabilities.shape(), std::move(out));
}

template class ForgeryLocalizer<float>;
template class ForgeryLocalizer<double>;
template Tensor<float> finalize_mask(const Tensor<float>&, int64_t, int64_t);
template Tensor<double> finalize_mask(const Tensor<double>&, int64_t, int64_t);
template Tensor<float> binarize(const Tensor<float>&, float);
template Tensor<double> binarize(const Tensor<double>&, double);

}  // namespace forgeloc
