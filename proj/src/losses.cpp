#include "forgeloc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "forgeloc/errors.hpp"
#include "forgeloc/ops.hpp"

namespace forgeloc {

void LossConfig::validate(int lowest_branch) const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("loss.alpha must lie in [0, 1]");
  if (!(gamma >= 0.0)) throw ConfigError("loss.gamma must be >= 0");
  if (!(dice_smooth >= 0.0)) throw ConfigError("loss.dice_smooth must be >= 0");
  if (!(focal_clamp > 0.0 && focal_clamp < 0.5)) throw ConfigError("loss.focal_clamp must lie in (0, 0.5)");
  if (lowest_branch < kFirstBranch || lowest_branch > kLastBranch) {
    throw ConfigError("loss: branch index out of range");
  }
  for (double l : lambdas) {
    if (!(l > 0.0) || !std::isfinite(l)) throw ConfigError("loss.lambdas must be positive");
  }
  if (require_standard_weights) {
    std::array<double, 4> sorted = lambdas;
    std::sort(sorted.begin(), sorted.end());
    const std::array<double, 4> standard{0.1, 0.2, 0.3, 0.4};
    for (size_t i = 0; i < 4; ++i) {
      if (std::abs(sorted[i] - standard[i]) > 1e-12) {
        throw ConfigError("loss.lambdas must be a permutation of {0.1, 0.2, 0.3, 0.4}");
      }
    }
  }
  for (int i = lowest_branch; i < kLastBranch; ++i) {
    const double lo = lambdas[i - kFirstBranch], hi = lambdas[i + 1 - kFirstBranch];
    const bool ok = mode == LossMode::kUpsample ? lo < hi : lo > hi;
    if (!ok) {
      std::ostringstream os;
      os << "loss.lambdas violate the " << (mode == LossMode::kUpsample ? "upsample" : "downsample")
         << " ordering (lambda_i " << (mode == LossMode::kUpsample ? "<" : ">")
         << " lambda_j for i < j): lambda" << i << "=" << lo << ", lambda" << (i + 1) << "="
         << hi;
      throw ConfigError(os.str());
    }
  }
}

template <class T>
Tensor<T> dice_loss(const Tensor<T>& y, const Tensor<T>& y_hat, T smooth, bool per_sample) {
  if (y.shape() != y_hat.shape()) {
    throw DimensionError("dice_loss: shapes " + shape_str(y.shape()) + " and " +
                         shape_str(y_hat.shape()) + " differ");
  }
  const int64_t rows = per_sample ? y.dim(0) : 1;
  Tensor<T> yy = reshape(y, {rows, -1});
  Tensor<T> pp = reshape(y_hat, {rows, -1});
  Tensor<T> inter = sum_axis(mul(yy, pp), 1);
  Tensor<T> mass = sum_axis(add(yy, pp), 1);
  std::vector<T> guard(static_cast<size_t>(rows));
  auto md = mass.data();
  for (int64_t r = 0; r < rows; ++r) guard[r] = (md[r] + smooth == T(0)) ? T(1) : T(0);
  Tensor<T> g({rows}, std::move(guard));
  Tensor<T> num = add(add_scalar(mul_scalar(inter, T(2)), smooth), g);
  Tensor<T> den = add(add_scalar(mass, smooth), g);
  return mean(rsub_scalar(div(num, den), T(1)));
}

template <class T>
Tensor<T> focal_loss(const Tensor<T>& y, const Tensor<T>& y_hat, T alpha, T gamma, T eps) {
  if (y.shape() != y_hat.shape()) {
    throw DimensionError("focal_loss: shapes " + shape_str(y.shape()) + " and " +
                         shape_str(y_hat.shape()) + " differ");
  }
  auto yd = y.data();
  std::vector<T> pos(yd.size()), neg(yd.size()), weight(yd.size());
  for (size_t i = 0; i < yd.size(); ++i) {
    const bool positive = yd[i] > T(0.5);
    pos[i] = positive ? T(1) : T(0);
    neg[i] = positive ? T(0) : T(1);
    weight[i] = positive ? -alpha : -(T(1) - alpha);
  }
  Tensor<T> tp(y.shape(), std::move(pos)), tn(y.shape(), std::move(neg));
  Tensor<T> tw(y.shape(), std::move(weight));
  Tensor<T> p = clamp(y_hat, eps, T(1) - eps);
  Tensor<T> pt = add(mul(tp, p), mul(tn, rsub_scalar(p, T(1))));
  Tensor<T> modulator = pow_scalar(rsub_scalar(pt, T(1)), gamma);
  return mean(mul(tw, mul(modulator, log(pt))));
}

template <class T>
Tensor<T> downsample_mask(const Tensor<T>& gt, int64_t h, int64_t w, MaskDownsample method) {
  if (gt.ndim() < 2) throw DimensionError("downsample_mask: rank < 2");
  const int64_t H = gt.dim(-2), W = gt.dim(-1);
  if (method == MaskDownsample::kNearest || H % h != 0 || W % w != 0) {
    if (method == MaskDownsample::kMajority) {
      throw DimensionError("majority downsampling needs integer factors");
    }
    NoGradGuard guard;
    return nearest_resize(gt, h, w);
  }
  const int64_t fy = H / h, fx = W / w, planes = gt.numel() / (H * W);
  auto d = gt.data();
  std::vector<T> out(static_cast<size_t>(planes * h * w));
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        int64_t count = 0;
        for (int64_t i = 0; i < fy; ++i)
          for (int64_t j = 0; j < fx; ++j)
            if (d[(p * H + y * fy + i) * W + x * fx + j] > T(0.5)) ++count;
        out[(p * h + y) * w + x] = 2 * count >= fy * fx ? T(1) : T(0);
      }
  Shape s = gt.shape();
  s[s.size() - 2] = h;
  s.back() = w;
  return Tensor<T>(std::move(s), std::move(out));
}

template <class T>
JointLoss<T> joint_loss(const BranchOutputs<T>& branches, const Tensor<T>& gt,
                        const LossConfig& cfg) {
  cfg.validate(branches.lowest_branch);
  if (gt.ndim() != 4 || gt.dim(1) != 1) {
    throw DimensionError("joint_loss: ground truth must be [B,1,H,W], got " + shape_str(gt.shape()));
  }
  JointLoss<T> out;
  const int64_t H = gt.dim(2), W = gt.dim(3);
  for (int i = branches.lowest_branch; i <= kLastBranch; ++i) {
    if (!branches.has(i)) continue;
    Tensor<T> prob = sigmoid(branches.branch(i));
    Tensor<T> target = gt;
    if (cfg.mode == LossMode::kUpsample) {
      prob = nearest_resize(prob, H, W);
    } else {
      target = downsample_mask(gt, prob.dim(2), prob.dim(3), cfg.gt_downsample);
    }
    Tensor<T> branch = add(dice_loss(target, prob, static_cast<T>(cfg.dice_smooth), true),
                           focal_loss(target, prob, static_cast<T>(cfg.alpha),
                                      static_cast<T>(cfg.gamma), static_cast<T>(cfg.focal_clamp)));
    out.branch_loss[i - kFirstBranch] = static_cast<double>(branch.item());
    Tensor<T> weighted = mul_scalar(branch, static_cast<T>(cfg.lambdas[i - kFirstBranch]));
    out.total = out.total.defined() ? add(out.total, weighted) : weighted;
  }
  if (!out.total.defined()) throw ConfigError("joint_loss: no branch outputs present");
  return out;
}

#define FORGELOC_INSTANTIATE_LOSSES(T)                                                \
  template Tensor<T> dice_loss(const Tensor<T>&, const Tensor<T>&, T, bool);          \
  template Tensor<T> focal_loss(const Tensor<T>&, const Tensor<T>&, T, T, T);         \
  template Tensor<T> downsample_mask(const Tensor<T>&, int64_t, int64_t, MaskDownsample); \
  template JointLoss<T> joint_loss(const BranchOutputs<T>&, const Tensor<T>&, const LossConfig&);

FORGELOC_INSTANTIATE_LOSSES(float)
FORGELOC_INSTANTIATE_LOSSES(double)

}  // namespace forgeloc
