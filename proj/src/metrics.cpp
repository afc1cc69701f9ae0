#include "forgeloc/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "forgeloc/errors.hpp"

namespace forgeloc {

std::optional<double> pixel_auc(std::span<const float> scores, std::span<const float> gt) {
  if (scores.size() != gt.size()) {
    throw DimensionError("pixel_auc: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(gt.size()) + " labels");
  }
  const size_t n = scores.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  int64_t positives = 0;
  for (size_t i = 0; i < n;) {
    size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Elements i..j-1 share the midrank of positions i+1..j.
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (size_t k = i; k < j; ++k) {
      if (gt[order[k]] > 0.5f) {
        rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const int64_t negatives = static_cast<int64_t>(n) - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double p = static_cast<double>(positives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

double ConfusionCounts::precision() const {
  return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double ConfusionCounts::recall() const {
  return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double ConfusionCounts::f1() const {
  const int64_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

ConfusionCounts confusion(std::span<const float> scores, std::span<const float> gt,
                          double threshold) {
  if (scores.size() != gt.size()) throw DimensionError("confusion: size mismatch");
  ConfusionCounts c;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool truth = gt[i] > 0.5f;
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f1_score(std::span<const float> scores, std::span<const float> gt, double threshold) {
  return confusion(scores, gt, threshold).f1();
}

void EvalAccumulator::add(std::span<const float> scores, std::span<const float> gt) {
  ++images_;
  auto auc = pixel_auc(scores, gt);
  if (!auc) {
    ++skipped_;
    return;
  }
  per_image_auc_.push_back(*auc);
  const ConfusionCounts c = confusion(scores, gt, threshold_);
  per_image_f1_.push_back(c.f1());
  counts_ += c;
  pooled_scores_.insert(pooled_scores_.end(), scores.begin(), scores.end());
  pooled_gt_.insert(pooled_gt_.end(), gt.begin(), gt.end());
}

EvalReport EvalAccumulator::finish(int branch) const {
  EvalReport r;
  r.branch = branch;
  r.threshold = threshold_;
  r.num_images = images_;
  r.num_skipped = skipped_;
  r.per_image_auc = per_image_auc_;
  if (!per_image_auc_.empty()) {
    r.pixel_auc = pixel_auc(pooled_scores_, pooled_gt_).value_or(0.0);
    r.f1 = counts_.f1();
    r.mean_image_auc = std::accumulate(per_image_auc_.begin(), per_image_auc_.end(), 0.0) /
                       static_cast<double>(per_image_auc_.size());
    r.mean_image_f1 = std::accumulate(per_image_f1_.begin(), per_image_f1_.end(), 0.0) /
                      static_cast<double>(per_image_f1_.size());
  }
  return r;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "branch=C" << branch << '\n'
     << "pixel_auc=" << pixel_auc << '\n'
     << "f1=" << f1 << '\n'
     << "threshold=" << threshold << '\n'
     << "mean_image_auc=" << mean_image_auc << '\n'
     << "mean_image_f1=" << mean_image_f1 << '\n'
     << "num_images=" << num_images << '\n'
     << "num_skipped=" << num_skipped << '\n';
  return os.str();
}

nlohmann::json EvalReport::to_json() const {
  return nlohmann::json{{"branch", "C" + std::to_string(branch)},
                        {"pixel_auc", pixel_auc},
                        {"f1", f1},
                        {"threshold", threshold},
                        {"mean_image_auc", mean_image_auc},
                        {"mean_image_f1", mean_image_f1},
                        {"per_image_auc", per_image_auc},
                        {"num_images", num_images},
                        {"num_skipped", num_skipped}};
}

}  // namespace forgeloc
