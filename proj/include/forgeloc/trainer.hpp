#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "forgeloc/checkpoint.hpp"
#include "forgeloc/config.hpp"
#include "forgeloc/metrics.hpp"
#include "forgeloc/model.hpp"
#include "forgeloc/synth.hpp"

namespace forgeloc {

struct EpochRecord {
  int64_t epoch = 0;
  double train_loss = 0.0;
  /// Per-branch dice + focal, averaged over batches (C2..C5).
  std::array<double, 4> branch_loss{};
  double val_auc = 0.0;
};

/// "epoch,train_loss,loss_c2,loss_c3,loss_c4,loss_c5,val_auc" plus one row
/// per epoch.
std::string metrics_csv(const std::vector<EpochRecord>& history);

struct TrainOptions {
  /// When set, last.ckpt, best.ckpt and metrics.csv are written here.
  std::string out_dir;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  Checkpoint last;
  Checkpoint best;
  int64_t best_epoch = 0;
  double best_val_auc = 0.0;
};

/// Stacks samples into a [B, 3, H, W] image batch and a [B, 1, H, W] mask batch.
std::pair<TensorF, TensorF> make_batch(const std::vector<ForgerySample>& samples);

/// Applies the config's freeze flags to the model's parameters.
void apply_freeze(ForgeryLocalizer<float>& model, const TrainConfig& cfg);

/// Learning rate used during the given 1-based epoch.
double learning_rate_at(const TrainConfig& cfg, int64_t epoch);

/// Adam training with deep supervision. Each epoch reshuffles the training
/// set with a seeded stream, flips samples at random, and scores pooled
/// pixel AUC on the validation set with the configured output branch.
/// A non-finite loss raises TrainingError with epoch, batch and per-branch
/// losses.
TrainResult train(const TrainConfig& cfg, const std::vector<ForgerySample>& train_set,
                  const std::vector<ForgerySample>& val_set, const TrainOptions& options = {});

/// Eval-mode inference on branch k with the cascade pruned below k.
/// Throws InputError for an empty split.
EvalReport evaluate(const ForgeryLocalizer<float>& model, const std::vector<ForgerySample>& samples,
                    int branch, double threshold = 0.5);

/// Probability map [1, H, W] of one image on branch k.
TensorF predict(const ForgeryLocalizer<float>& model, const TensorF& image, int branch);

struct PruneRow {
  int branch = 2;
  double pixel_auc = 0.0;
  double f1 = 0.0;
  double ms_per_image = 0.0;
  int64_t peak_bytes = 0;
};

/// One row per branch C2..C5. Times are the minimum over `repeats`
/// interleaved passes over the split; peak bytes count tensor storage
/// allocated during a single-image forward.
std::vector<PruneRow> prune_report(const ForgeryLocalizer<float>& model,
                                   const std::vector<ForgerySample>& samples, int repeats = 3,
                                   double threshold = 0.5);

std::string prune_report_csv(const std::vector<PruneRow>& rows);

}  // namespace forgeloc
