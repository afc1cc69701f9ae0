#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace forgeloc {

/// ROC AUC by the rank statistic with midranks for ties:
/// (sum of positive ranks - P(P+1)/2) / (P * N). Returns nullopt when the
/// ground truth has no positives or no negatives.
std::optional<double> pixel_auc(std::span<const float> scores, std::span<const float> gt);

struct ConfusionCounts {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  /// 2PR / (P + R); 0 when the denominator vanishes.
  double f1() const;
  double precision() const;
  double recall() const;
};

ConfusionCounts confusion(std::span<const float> scores, std::span<const float> gt,
                          double threshold = 0.5);

/// F1 of scores binarized at threshold (score >= threshold is positive).
double f1_score(std::span<const float> scores, std::span<const float> gt, double threshold = 0.5);

struct EvalReport {
  int branch = 2;
  double pixel_auc = 0.0;  // pooled over all non-degenerate images
  double f1 = 0.0;         // pooled confusion counts over the same images
  double mean_image_auc = 0.0;
  double mean_image_f1 = 0.0;
  double threshold = 0.5;
  std::vector<double> per_image_auc;
  int64_t num_images = 0;
  int64_t num_skipped = 0;

  std::string to_text() const;
  nlohmann::json to_json() const;
};

/// Collects per-image scores and builds an EvalReport. Images whose ground
/// truth is all 0 or all 1 are skipped and counted.
class EvalAccumulator {
 public:
  explicit EvalAccumulator(double threshold = 0.5) : threshold_(threshold) {}

  void add(std::span<const float> scores, std::span<const float> gt);
  EvalReport finish(int branch) const;

 private:
  double threshold_;
  std::vector<float> pooled_scores_, pooled_gt_;
  std::vector<double> per_image_auc_, per_image_f1_;
  ConfusionCounts counts_;
  int64_t images_ = 0, skipped_ = 0;
};

}  // namespace forgeloc
