#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "forgeloc/attention.hpp"
#include "forgeloc/backbone.hpp"
#include "forgeloc/correction.hpp"

namespace forgeloc {

struct ModelConfig {
  BackboneConfig backbone;
  EncoderConfig encoder;
  FusionMode fusion = FusionMode::kMultiply;
  uint64_t init_seed = 0;

  void validate() const;
  /// Stable 64-bit digest of the canonical JSON form; stored in checkpoints.
  uint64_t digest() const;
};

/// Backbone -> per-scale self-attention encoders -> dense correction.
template <class T>
class ForgeryLocalizer {
 public:
  explicit ForgeryLocalizer(const ModelConfig& cfg);
  ForgeryLocalizer(const ForgeryLocalizer&) = delete;
  ForgeryLocalizer& operator=(const ForgeryLocalizer&) = delete;

  /// Runs the cascade down to lowest_branch only (pruning). The selected
  /// output branch (default: lowest_branch) is resized to input resolution
  /// into fused_final.
  BranchOutputs<T> forward(const Tensor<T>& image, const ForwardContext& ctx,
                           int lowest_branch = kFirstBranch, int output_branch = 0,
                           std::array<AttentionTrace<T>, 4>* traces = nullptr) const;

  FeaturePyramid<T> features(const Tensor<T>& image, const ForwardContext& ctx) const {
    return backbone_->forward(image, ctx);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& parameters() { return *store_; }
  const ParameterStore<T>& parameters() const { return *store_; }
  Backbone<T>& backbone() { return *backbone_; }
  ScaleEncoder<T>& encoder(int level) { return *encoders_.at(static_cast<size_t>(level - kFirstBranch)); }
  DenseCorrection<T>& correction() { return *correction_; }

 private:
  ModelConfig cfg_;
  std::unique_ptr<ParameterStore<T>> store_;
  std::unique_ptr<Backbone<T>> backbone_;
  std::vector<std::unique_ptr<ScaleEncoder<T>>> encoders_;
  std::unique_ptr<DenseCorrection<T>> correction_;
};

/// Probability map at (out_h, out_w): nearest resize of logits, then sigmoid.
template <class T>
Tensor<T> finalize_mask(const Tensor<T>& logits, int64_t out_h, int64_t out_w);

/// Thresholds probabilities into {0, 1}.
template <class T>
Tensor<T> binarize(const Tensor<T>& probabilities, T threshold = T(0.5));

}  // namespace forgeloc
