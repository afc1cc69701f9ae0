#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "forgeloc/nn.hpp"

namespace forgeloc {

enum class FusionMode { kMultiply, kAdd };

constexpr int kFirstBranch = 2;
constexpr int kLastBranch = 5;

/// Per-branch mask logits. Branch i in 2..5 has stride 2^i; with pruning to
/// branch k the branches below k are left undefined.
template <class T>
struct BranchOutputs {
  std::array<Tensor<T>, 4> logits;
  int lowest_branch = kFirstBranch;
  /// Logits of the selected output branch resized to input resolution; set
  /// by the full model.
  Tensor<T> fused_final;
  int output_branch = kFirstBranch;

  bool has(int branch) const {
    return branch >= kFirstBranch && branch <= kLastBranch && logits[branch - kFirstBranch].defined();
  }
  const Tensor<T>& branch(int i) const;
};

/// Multiplicative gate: a_low * sigmoid(conv1x1(upsample2(b_high))).
/// The 1x1 projection is applied before upsampling; the two commute exactly.
template <class T>
Tensor<T> fuse_multiply(const Tensor<T>& a_low, const Tensor<T>& b_high, const Conv2d<T>& gate);

/// Additive alternative used for ablation: a_low + conv1x1(upsample2(b_high)).
template <class T>
Tensor<T> fuse_add(const Tensor<T>& a_low, const Tensor<T>& b_high, const Conv2d<T>& proj);

/// Top-down cascade over encoded features: f5 = e5, f_i = fuse(e_i, f_{i+1}),
/// y_i = head_i(f_i) with a 3x3 stride-1 padding-1 conv to one channel.
template <class T>
class DenseCorrection {
 public:
  DenseCorrection(ParameterStore<T>& store, const Initializer& init, const std::string& prefix,
                  int64_t d_model, FusionMode mode);

  /// encoded[i - 2] holds e_i; entries below lowest_branch may be undefined.
  BranchOutputs<T> forward(const std::array<Tensor<T>, 4>& encoded, int lowest_branch) const;

  /// Gate projection feeding branch i (i in 2..4) from branch i + 1.
  Conv2d<T>& gate(int branch) { return gates_.at(static_cast<size_t>(branch - kFirstBranch)); }
  Conv2d<T>& head(int branch) { return heads_.at(static_cast<size_t>(branch - kFirstBranch)); }
  FusionMode mode() const { return mode_; }

 private:
  FusionMode mode_;
  std::array<Conv2d<T>, 3> gates_;
  std::array<Conv2d<T>, 4> heads_;
};

}  // namespace forgeloc
