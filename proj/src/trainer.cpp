#include "forgeloc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "forgeloc/adam.hpp"
#include "forgeloc/errors.hpp"
#include "forgeloc/losses.hpp"
#include "forgeloc/random.hpp"

namespace forgeloc {

namespace {

constexpr uint64_t kShuffleTag = 0x5407;
constexpr uint64_t kDropoutTag = 0xD409;
constexpr uint64_t kAugmentTag = 0xA06;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

double global_grad_norm(const ParameterStore<float>& params) {
  double sq = 0.0;
  for (const auto& e : params.entries()) {
    if (!e.trainable || !e.tensor.requires_grad() || !e.tensor.has_grad()) continue;
    for (float g : e.tensor.grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

void clip_gradients(ParameterStore<float>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  const float scale = static_cast<float>(max_norm / norm);
  for (auto& e : params.entries()) {
    if (!e.trainable || !e.tensor.requires_grad() || !e.tensor.has_grad()) continue;
    for (float& g : e.tensor.grad_mut()) g *= scale;
  }
}

[[noreturn]] void report_non_finite(int64_t epoch, int64_t batch, const JointLoss<float>& loss,
                                    const std::string& out_dir) {
  std::ostringstream os;
  os << "non-finite loss at epoch " << epoch << ", batch " << batch << ": total=" << loss.total.item();
  nlohmann::json dump{{"epoch", epoch}, {"batch", batch}, {"total", fmt(loss.total.item())}};
  for (int i = 0; i < 4; ++i) {
    os << " C" << (i + kFirstBranch) << "=" << loss.branch_loss[i];
    dump["loss_c" + std::to_string(i + kFirstBranch)] = fmt(loss.branch_loss[i]);
  }
  if (!out_dir.empty()) write_text(std::filesystem::path(out_dir) / "nan_dump.json", dump.dump(2) + "\n");
  throw TrainingError(os.str());
}

}  // namespace

std::string metrics_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,loss_c2,loss_c3,loss_c4,loss_c5,val_auc\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + fmt(r.train_loss);
    for (double b : r.branch_loss) out += "," + fmt(b);
    out += "," + fmt(r.val_auc) + "\n";
  }
  return out;
}

std::pair<TensorF, TensorF> make_batch(const std::vector<ForgerySample>& samples) {
  if (samples.empty()) throw InputError("make_batch: no samples");
  const int64_t h = samples[0].image.dim(1), w = samples[0].image.dim(2);
  const auto b = static_cast<int64_t>(samples.size());
  std::vector<float> img, mask;
  img.reserve(static_cast<size_t>(b * 3 * h * w));
  mask.reserve(static_cast<size_t>(b * h * w));
  for (const auto& s : samples) {
    if (s.image.shape() != Shape{3, h, w} || s.mask.shape() != Shape{1, h, w}) {
      throw DimensionError("make_batch: samples must share one size, got image " +
                           shape_str(s.image.shape()) + " and mask " + shape_str(s.mask.shape()));
    }
    img.insert(img.end(), s.image.data().begin(), s.image.data().end());
    mask.insert(mask.end(), s.mask.data().begin(), s.mask.data().end());
  }
  return {TensorF({b, 3, h, w}, std::move(img)), TensorF({b, 1, h, w}, std::move(mask))};
}

void apply_freeze(ForgeryLocalizer<float>& model, const TrainConfig& cfg) {
  for (auto& e : model.parameters().entries()) {
    if (!e.trainable) continue;
    const bool frozen = cfg.freeze_all || (cfg.freeze_backbone && e.name.rfind("backbone.", 0) == 0);
    e.tensor.set_requires_grad(!frozen);
  }
}

double learning_rate_at(const TrainConfig& cfg, int64_t epoch) {
  if (cfg.lr_schedule == "step") {
    return cfg.learning_rate * std::pow(cfg.lr_step_gamma, static_cast<double>((epoch - 1) / cfg.lr_step_epochs));
  }
  return cfg.learning_rate;
}

TrainResult train(const TrainConfig& cfg, const std::vector<ForgerySample>& train_set,
                  const std::vector<ForgerySample>& val_set, const TrainOptions& options) {
  cfg.validate();
  if (train_set.empty()) throw InputError("train: empty training split");
  if (val_set.empty()) throw InputError("train: empty validation split");
  for (const auto* set : {&train_set, &val_set})
    for (const auto& s : *set)
      if (s.image.dim(1) != cfg.input_size || s.image.dim(2) != cfg.input_size) {
        throw InputError("train: sample size " + shape_str(s.image.shape()) +
                         " does not match train.input_size " + std::to_string(cfg.input_size));
      }
  cfg.loss.validate();
  namespace fs = std::filesystem;
  if (!options.out_dir.empty()) fs::create_directories(options.out_dir);

  ForgeryLocalizer<float> model(cfg.model);
  apply_freeze(model, cfg);
  AdamState<float> adam;
  const AdamOptions adam_opt{cfg.beta1, cfg.beta2, cfg.adam_eps};
  Rng shuffle_rng(hash_mix({cfg.seed, kShuffleTag}));
  ForwardContext ctx{true, hash_mix({cfg.seed, kDropoutTag}), 0};

  TrainResult result;
  result.best_val_auc = -std::numeric_limits<double>::infinity();
  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), size_t{0});
  const auto batch_size = static_cast<size_t>(cfg.batch_size);

  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<size_t>(shuffle_rng.below(static_cast<int64_t>(i) + 1))]);
    const double lr = learning_rate_at(cfg, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    double seen = 0.0;
    int64_t batch_index = 0;
    ctx.training = true;
    for (size_t start = 0; start < order.size(); start += batch_size, ++batch_index) {
      std::vector<ForgerySample> batch;
      for (size_t j = start; j < std::min(order.size(), start + batch_size); ++j) {
        const uint64_t aug_seed = hash_mix({cfg.seed, kAugmentTag, static_cast<uint64_t>(epoch), order[j]});
        batch.push_back(augment(train_set[order[j]], aug_seed, cfg.augment));
      }
      auto [images, masks] = make_batch(batch);
      model.parameters().zero_grad();
      const BranchOutputs<float> out = model.forward(images, ctx, kFirstBranch, cfg.output_branch);
      const JointLoss<float> loss = joint_loss(out, masks, cfg.loss);
      const double total = loss.total.item();
      bool finite = std::isfinite(total);
      for (double b : loss.branch_loss) finite = finite && std::isfinite(b);
      if (!finite) report_non_finite(epoch, batch_index, loss, options.out_dir);
      if (loss.total.requires_grad()) {
        loss.total.backward();
        if (cfg.max_grad_norm > 0.0) clip_gradients(model.parameters(), cfg.max_grad_norm);
        adam_step(model.parameters(), adam, lr, adam_opt);
      }
      ++ctx.step;
      const double n = static_cast<double>(batch.size());
      rec.train_loss += total * n;
      for (int k = 0; k < 4; ++k) rec.branch_loss[k] += loss.branch_loss[k] * n;
      seen += n;
    }
    rec.train_loss /= seen;
    for (double& b : rec.branch_loss) b /= seen;
    rec.val_auc = evaluate(model, val_set, cfg.output_branch).pixel_auc;
    result.history.push_back(rec);

    const bool improved = rec.val_auc > result.best_val_auc;
    if (improved) {
      result.best_val_auc = rec.val_auc;
      result.best_epoch = epoch;
      result.best = make_checkpoint(model, cfg, adam, epoch, shuffle_rng.state());
    }
    const bool snapshot = epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs;
    if (snapshot || epoch == cfg.epochs) result.last = make_checkpoint(model, cfg, adam, epoch, shuffle_rng.state());
    if (!options.out_dir.empty()) {
      const fs::path dir(options.out_dir);
      if (improved) save_checkpoint(result.best, (dir / "best.ckpt").string());
      if (snapshot) save_checkpoint(result.last, (dir / "last.ckpt").string());
      write_text(dir / "metrics.csv", metrics_csv(result.history));
    }
    if (options.on_epoch) options.on_epoch(rec);
  }
  if (cfg.epochs == 0) {
    result.last = make_checkpoint(model, cfg, adam, 0, shuffle_rng.state());
    result.best = result.last;
    result.best_val_auc = evaluate(model, val_set, cfg.output_branch).pixel_auc;
    if (!options.out_dir.empty()) {
      const fs::path dir(options.out_dir);
      save_checkpoint(result.last, (dir / "last.ckpt").string());
      save_checkpoint(result.best, (dir / "best.ckpt").string());
      write_text(dir / "metrics.csv", metrics_csv(result.history));
    }
  }
  return result;
}

TensorF predict(const ForgeryLocalizer<float>& model, const TensorF& image, int branch) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw InputError("predict: expected a [3, H, W] image, got " + shape_str(image.shape()));
  }
  NoGradGuard no_grad;
  const int64_t h = image.dim(1), w = image.dim(2);
  const TensorF batch = reshape(image, {1, 3, h, w});
  const BranchOutputs<float> out = model.forward(batch, ForwardContext{}, branch, branch);
  return reshape(finalize_mask(out.branch(branch), h, w), {1, h, w});
}

EvalReport evaluate(const ForgeryLocalizer<float>& model, const std::vector<ForgerySample>& samples,
                    int branch, double threshold) {
  if (samples.empty()) throw InputError("evaluate: empty split");
  EvalAccumulator acc(threshold);
  for (const auto& s : samples) {
    const TensorF prob = predict(model, s.image, branch);
    acc.add(prob.data(), s.mask.data());
  }
  return acc.finish(branch);
}

std::vector<PruneRow> prune_report(const ForgeryLocalizer<float>& model,
                                   const std::vector<ForgerySample>& samples, int repeats,
                                   double threshold) {
  if (samples.empty()) throw InputError("prune_report: empty split");
  if (repeats < 1) throw ConfigError("prune_report: repeats must be >= 1");
  std::vector<PruneRow> rows;
  for (int k = kFirstBranch; k <= kLastBranch; ++k) {
    PruneRow row;
    row.branch = k;
    const EvalReport r = evaluate(model, samples, k, threshold);
    row.pixel_auc = r.pixel_auc;
    row.f1 = r.f1;
    row.ms_per_image = std::numeric_limits<double>::infinity();
    {
      NoGradGuard no_grad;
      const TensorF batch = reshape(samples[0].image, {1, 3, samples[0].image.dim(1), samples[0].image.dim(2)});
      const int64_t base = MemoryStats::current_bytes();
      MemoryStats::reset_peak();
      model.forward(batch, ForwardContext{}, k, k);
      row.peak_bytes = MemoryStats::peak_bytes() - base;
    }
    rows.push_back(row);
  }
  // Interleave branches within each repeat so drift affects all equally.
  NoGradGuard no_grad;
  for (int rep = 0; rep < repeats; ++rep) {
    for (auto& row : rows) {
      const auto t0 = std::chrono::steady_clock::now();
      for (const auto& s : samples) {
        const TensorF batch = reshape(s.image, {1, 3, s.image.dim(1), s.image.dim(2)});
        model.forward(batch, ForwardContext{}, row.branch, row.branch);
      }
      const std::chrono::duration<double, std::milli> dt = std::chrono::steady_clock::now() - t0;
      row.ms_per_image = std::min(row.ms_per_image, dt.count() / static_cast<double>(samples.size()));
    }
  }
  return rows;
}

std::string prune_report_csv(const std::vector<PruneRow>& rows) {
  std::string out = "branch,pixel_auc,f1,ms_per_image,peak_bytes\n";
  for (const auto& r : rows) {
    out += "C" + std::to_string(r.branch) + "," + fmt(r.pixel_auc) + "," + fmt(r.f1) + "," +
           fmt(r.ms_per_image) + "," + std::to_string(r.peak_bytes) + "\n";
  }
  return out;
}

}  // namespace forgeloc
