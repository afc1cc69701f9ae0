#pragma once

#include <array>
#include <limits>

#include "forgeloc/correction.hpp"
#include "forgeloc/tensor.hpp"

namespace forgeloc {

/// How branch predictions are compared with the ground truth: upsample
/// the prediction to GT resolution, or downsample the GT to the branch.
enum class LossMode { kUpsample, kDownsample };
enum class MaskDownsample { kNearest, kMajority };

struct LossConfig {
  double alpha = 0.25;
  double gamma = 2.0;
  /// Weights for branches C2..C5 in that order.
  std::array<double, 4> lambdas{0.1, 0.2, 0.3, 0.4};
  LossMode mode = LossMode::kUpsample;
  /// Added to numerator and denominator of the dice ratio.
  double dice_smooth = 1.0;
  double focal_clamp = 1e-6;
  MaskDownsample gt_downsample = MaskDownsample::kNearest;
  /// Require the weights to be a permutation of {0.1, 0.2, 0.3, 0.4}.
  bool require_standard_weights = true;

  /// Upsample mode needs strictly increasing weights from C2 to C5,
  /// downsample mode strictly decreasing. Only branches in
  /// [lowest_branch, 5] are considered.
  void validate(int lowest_branch = kFirstBranch) const;
};

/// 1 - (2 * sum(y * p) + smooth) / (sum(y + p) + smooth). A zero denominator
/// (empty masks with smooth = 0) gives 0. With per_sample the leading dim is a
/// batch and the per-sample losses are averaged.
template <class T>
Tensor<T> dice_loss(const Tensor<T>& y, const Tensor<T>& y_hat, T smooth = T(1),
                    bool per_sample = false);

/// Mean over points of -alpha_t * (1 - p_t)^gamma * log(p_t), with p_t = p
/// where y = 1 and 1 - p elsewhere; probabilities clipped to [eps, 1 - eps].
template <class T>
Tensor<T> focal_loss(const Tensor<T>& y, const Tensor<T>& y_hat, T alpha = T(0.25),
                     T gamma = T(2), T eps = T(1e-6));

template <class T>
struct JointLoss {
  Tensor<T> total;
  /// dice + focal per branch (C2..C5); NaN for absent branches.
  std::array<double, 4> branch_loss{std::numeric_limits<double>::quiet_NaN(),
                                    std::numeric_limits<double>::quiet_NaN(),
                                    std::numeric_limits<double>::quiet_NaN(),
                                    std::numeric_limits<double>::quiet_NaN()};
};

/// sum_i lambda_i * (dice_i + focal_i) over the present branches.
/// gt: [B, 1, H, W] binary mask at input resolution.
template <class T>
JointLoss<T> joint_loss(const BranchOutputs<T>& branches, const Tensor<T>& gt,
                        const LossConfig& cfg);

/// Ground-truth mask resized to (h, w): nearest sampling, or majority vote
/// over each (H/h x W/w) cell (ties count as positive).
template <class T>
Tensor<T> downsample_mask(const Tensor<T>& gt, int64_t h, int64_t w, MaskDownsample method);

}  // namespace forgeloc
