// forgeloc: dataset generation, training, evaluation and inference.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "forgeloc/checkpoint.hpp"
#include "forgeloc/config.hpp"
#include "forgeloc/errors.hpp"
#include "forgeloc/gradcheck.hpp"
#include "forgeloc/image_io.hpp"
#include "forgeloc/synth.hpp"
#include "forgeloc/trainer.hpp"
#include "forgeloc/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace forgeloc;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

/// Records the version, command and effective settings of a run.
void write_run_info(const fs::path& dir, const std::string& command, const json& config) {
  fs::create_directories(dir);
  write_file(dir / "run.json",
             json{{"version", version_string()}, {"command", command}, {"config", config}}.dump(2) + "\n");
}

int parse_branch(const std::string& s) {
  std::string digits = s;
  if (!digits.empty() && (digits[0] == 'C' || digits[0] == 'c')) digits = digits.substr(1);
  if (digits.size() == 1 && digits[0] >= '2' && digits[0] <= '5') return digits[0] - '0';
  throw ConfigError("branch must be one of C2, C3, C4, C5, got '" + s + "'");
}

/// Replicates edge pixels up to the next multiple of 32.
TensorF pad_to_multiple(const TensorF& chw, int64_t multiple) {
  const int64_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  const int64_t ph = (h + multiple - 1) / multiple * multiple, pw = (w + multiple - 1) / multiple * multiple;
  std::vector<float> out(static_cast<size_t>(c * ph * pw));
  auto d = chw.data();
  for (int64_t k = 0; k < c; ++k)
    for (int64_t y = 0; y < ph; ++y)
      for (int64_t x = 0; x < pw; ++x)
        out[static_cast<size_t>((k * ph + y) * pw + x)] =
            d[static_cast<size_t>((k * h + std::min(y, h - 1)) * w + std::min(x, w - 1))];
  return TensorF({c, ph, pw}, std::move(out));
}

TensorF crop(const TensorF& chw, int64_t h, int64_t w) {
  const int64_t c = chw.dim(0), ph = chw.dim(1), pw = chw.dim(2);
  std::vector<float> out;
  out.reserve(static_cast<size_t>(c * h * w));
  auto d = chw.data();
  for (int64_t k = 0; k < c; ++k)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) out.push_back(d[static_cast<size_t>((k * ph + y) * pw + x)]);
  return TensorF({c, h, w}, std::move(out));
}

struct GenDataArgs {
  std::string out;
  int64_t count = 500;
  int64_t size = 64;
  std::string kinds = "copy_move,splicing,removal";
  uint64_t seed = 0;
  bool force = false;
};

int run_gen_data(const GenDataArgs& a) {
  if (fs::exists(a.out) && !fs::is_empty(a.out)) {
    if (!a.force) throw ConfigError("output directory " + a.out + " is not empty (use --force)");
    fs::remove_all(a.out);
  }
  const DatasetManifest m = build_manifest(a.count, a.seed, a.size, a.size, parse_forgery_kinds(a.kinds));
  write_dataset(m, a.out);
  write_run_info(a.out, "gen-data",
                 json{{"count", a.count}, {"size", a.size}, {"kinds", a.kinds}, {"seed", a.seed}});
  std::cout << "wrote " << m.train.size() << "/" << m.val.size() << "/" << m.test.size()
            << " train/val/test samples to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, data, out;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  std::vector<std::string> overrides;
  if (a.seed) {
    overrides.push_back("train.seed=" + std::to_string(*a.seed));
    overrides.push_back("model.init_seed=" + std::to_string(*a.seed));
  }
  overrides.insert(overrides.end(), a.overrides.begin(), a.overrides.end());
  const TrainConfig cfg = load_train_config(a.config, overrides);
  const DatasetManifest m = read_manifest(a.data);
  if (m.height != cfg.input_size || m.width != cfg.input_size) {
    throw ConfigError("dataset is " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                      " but train.input_size is " + std::to_string(cfg.input_size));
  }
  const auto train_set = load_split(a.data, m, Split::kTrain);
  const auto val_set = load_split(a.data, m, Split::kVal);
  fs::create_directories(a.out);
  write_file(fs::path(a.out) / "config.json", to_json(cfg).dump(2) + "\n");
  write_run_info(a.out, "train", json{{"data", a.data}, {"train", to_json(cfg)}});
  TrainOptions opt;
  opt.out_dir = a.out;
  opt.on_epoch = [](const EpochRecord& r) {
    std::printf("epoch %lld train_loss %.6f val_auc %.6f\n", static_cast<long long>(r.epoch),
                r.train_loss, r.val_auc);
    std::fflush(stdout);
  };
  const TrainResult res = train(cfg, train_set, val_set, opt);
  std::printf("best epoch %lld val_auc %.6f (C%d)\n", static_cast<long long>(res.best_epoch),
              res.best_val_auc, cfg.output_branch);
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, split = "test", branch, out;
  double threshold = 0.5;
};

int run_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const int branch = a.branch.empty() ? ck.config.output_branch : parse_branch(a.branch);
  const auto model = model_from_checkpoint(ck);
  const DatasetManifest m = read_manifest(a.data);
  const auto samples = load_split(a.data, m, parse_split(a.split));
  const EvalReport r = evaluate(*model, samples, branch, a.threshold);
  std::cout << "split=" << a.split << "\n" << r.to_text();
  if (!a.out.empty()) {
    write_run_info(a.out, "eval",
                   json{{"ckpt", a.ckpt}, {"data", a.data}, {"split", a.split}, {"branch", branch},
                        {"threshold", a.threshold}, {"train", to_json(ck.config)}});
    json j = r.to_json();
    j["split"] = a.split;
    write_file(fs::path(a.out) / "report.json", j.dump(2) + "\n");
    write_file(fs::path(a.out) / "report.txt", "split=" + a.split + "\n" + r.to_text());
  }
  return 0;
}

struct InferArgs {
  std::string ckpt, image, out_mask, out_prob, branch;
  bool pad = false;
};

int run_infer(const InferArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const int branch = a.branch.empty() ? ck.config.output_branch : parse_branch(a.branch);
  const auto model = model_from_checkpoint(ck);
  TensorF image = image_to_tensor(read_png(a.image, 3));
  const int64_t h = image.dim(1), w = image.dim(2);
  if (h % 32 != 0 || w % 32 != 0) {
    if (!a.pad) {
      throw InputError("image is " + std::to_string(h) + "x" + std::to_string(w) +
                       "; dimensions must be divisible by 32 (use --pad)");
    }
    image = pad_to_multiple(image, 32);
  }
  TensorF prob = predict(*model, image, branch);
  if (prob.dim(1) != h || prob.dim(2) != w) prob = crop(prob, h, w);
  const fs::path mask_path(a.out_mask);
  const fs::path prob_path = a.out_prob.empty()
                                 ? mask_path.parent_path() / (mask_path.stem().string() + "_prob.png")
                                 : fs::path(a.out_prob);
  write_png(prob_path.string(), tensor_to_image(prob));
  write_png(mask_path.string(), tensor_to_image(binarize(prob)));
  write_run_info(fs::absolute(mask_path).parent_path(), "infer",
                 json{{"ckpt", a.ckpt}, {"image", a.image}, {"branch", branch}, {"pad", a.pad},
                      {"train", to_json(ck.config)}});
  std::cout << "branch=C" << branch << "\nprobability=" << prob_path.string()
            << "\nmask=" << mask_path.string() << "\n";
  return 0;
}

struct GradcheckArgs {
  std::vector<std::string> ops;
  bool all_ops = false;
  bool model = false;
  uint64_t seed = 0;
  double tol = 1e-4;
  double model_tol = 1e-3;
  int64_t size = 64;
};

int run_gradcheck(const GradcheckArgs& a) {
  std::vector<GradcheckResult> results;
  if (a.all_ops || !a.ops.empty() || !a.model) {
    auto ops = gradcheck_ops(a.seed, a.tol, a.ops);
    results.insert(results.end(), ops.begin(), ops.end());
  }
  if (a.model) results.push_back(gradcheck_model(a.seed, a.size, 20, 1e-5, a.model_tol));
  bool ok = true;
  std::printf("%-28s %12s %10s %8s  %s\n", "name", "max_error", "tolerance", "checked", "result");
  for (const auto& r : results) {
    std::printf("%-28s %12.3e %10.1e %8lld  %s\n", r.name.c_str(), r.max_error, r.tolerance,
                static_cast<long long>(r.checked), r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  return ok ? 0 : kExitRuntime;
}

struct PruneArgs {
  std::string ckpt, data, split = "test", out;
  int repeats = 3;
  double threshold = 0.5;
};

int run_prune_report(const PruneArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const auto model = model_from_checkpoint(ck);
  const DatasetManifest m = read_manifest(a.data);
  const auto samples = load_split(a.data, m, parse_split(a.split));
  const auto rows = prune_report(*model, samples, a.repeats, a.threshold);
  const std::string csv = prune_report_csv(rows);
  std::cout << csv;
  if (!a.out.empty()) {
    write_run_info(a.out, "prune-report",
                   json{{"ckpt", a.ckpt}, {"data", a.data}, {"split", a.split}, {"repeats", a.repeats},
                        {"threshold", a.threshold}, {"train", to_json(ck.config)}});
    write_file(fs::path(a.out) / "prune_report.csv", csv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image forgery localization: synthetic data, training and evaluation"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic forgery dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--count", gen.count, "Number of samples (>= 10)");
  gen_cmd->add_option("--size", gen.size, "Image side, divisible by 32");
  gen_cmd->add_option("--kinds", gen.kinds, "Comma-separated: copy_move,splicing,removal");
  gen_cmd->add_option("--seed", gen.seed, "Global seed");
  gen_cmd->add_flag("--force", gen.force, "Replace a non-empty output directory");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a generated dataset");
  train_cmd->add_option("--config", tr.config, "JSON config file (defaults when omitted)");
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_option("--override", tr.overrides, "key.path=value, applied after the file");
  train_cmd->add_option("--seed", tr.seed, "Sets train.seed and model.init_seed");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", ev.split, "train, val or test");
  eval_cmd->add_option("--branch", ev.branch, "C2..C5 (default: the checkpoint's output branch)");
  eval_cmd->add_option("--threshold", ev.threshold, "F1 threshold");
  eval_cmd->add_option("--out", ev.out, "Report directory");

  InferArgs inf;
  auto* infer_cmd = app.add_subcommand("infer", "Predict a mask for one PNG image");
  infer_cmd->add_option("--ckpt", inf.ckpt, "Checkpoint file")->required();
  infer_cmd->add_option("--image", inf.image, "Input PNG")->required();
  infer_cmd->add_option("--out-mask", inf.out_mask, "Binary mask PNG")->required();
  infer_cmd->add_option("--out-prob", inf.out_prob, "Probability PNG (default: <mask>_prob.png)");
  infer_cmd->add_option("--branch", inf.branch, "C2..C5");
  infer_cmd->add_flag("--pad", inf.pad, "Pad to a multiple of 32 and crop the result");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc_cmd->add_flag("--ops", gc.all_ops, "Check every registered op");
  gc_cmd->add_option("--op", gc.ops, "Check only the named ops");
  gc_cmd->add_flag("--model", gc.model, "End-to-end model check");
  gc_cmd->add_option("--seed", gc.seed, "Seed for inputs and parameter subset");
  gc_cmd->add_option("--tol", gc.tol, "Op tolerance");
  gc_cmd->add_option("--model-tol", gc.model_tol, "Model tolerance");
  gc_cmd->add_option("--size", gc.size, "Model input side");

  PruneArgs pr;
  auto* prune_cmd = app.add_subcommand("prune-report", "Accuracy and cost of every output branch");
  prune_cmd->add_option("--ckpt", pr.ckpt, "Checkpoint file")->required();
  prune_cmd->add_option("--data", pr.data, "Dataset directory")->required();
  prune_cmd->add_option("--split", pr.split, "train, val or test");
  prune_cmd->add_option("--repeats", pr.repeats, "Timing passes");
  prune_cmd->add_option("--threshold", pr.threshold, "F1 threshold");
  prune_cmd->add_option("--out", pr.out, "Report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_eval(ev);
    if (*infer_cmd) return run_infer(inf);
    if (*gc_cmd) return run_gradcheck(gc);
    if (*prune_cmd) return run_prune_report(pr);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
