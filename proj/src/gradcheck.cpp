#include "forgeloc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>

#include "forgeloc/errors.hpp"
#include "forgeloc/losses.hpp"
#include "forgeloc/ops.hpp"
#include "forgeloc/random.hpp"

namespace forgeloc {

GradcheckResult gradcheck(const std::string& name, const ScalarFn& f, std::vector<TensorD> inputs,
                          double eps, double tol) {
  GradcheckResult r;
  r.name = name;
  r.tolerance = tol;
  for (auto& t : inputs) t.zero_grad();
  TensorD out = f(inputs);
  if (out.numel() != 1) throw UsageError("gradcheck " + name + ": function must return a scalar");
  out.backward();
  std::vector<std::vector<double>> analytic(inputs.size());
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    analytic[i].assign(static_cast<size_t>(inputs[i].numel()), 0.0);
    if (inputs[i].has_grad()) {
      auto g = inputs[i].grad();
      std::copy(g.begin(), g.end(), analytic[i].begin());
    }
  }
  NoGradGuard no_grad;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    auto data = inputs[i].data_mut();
    for (size_t k = 0; k < data.size(); ++k) {
      const double orig = data[k];
      data[k] = orig + eps;
      const double fp = f(inputs).item();
      data[k] = orig - eps;
      const double fm = f(inputs).item();
      data[k] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = std::abs(analytic[i][k] - numeric) / std::max(1.0, std::abs(numeric));
      r.max_error = std::max(r.max_error, err);
      ++r.checked;
    }
  }
  r.passed = r.max_error < tol && std::isfinite(r.max_error);
  return r;
}

namespace {

TensorD random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                      bool requires_grad = true) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD(std::move(shape), std::move(v), requires_grad);
}

/// Values with |x| >= margin, for ops with a kink at zero.
TensorD away_from_zero(Rng& rng, Shape shape, double margin = 0.1) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(margin, 1.0);
  return TensorD(std::move(shape), std::move(v), true);
}

TensorD binary_mask(Rng& rng, Shape shape) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.bernoulli(0.4) ? 1.0 : 0.0;
  return TensorD(std::move(shape), std::move(v), false);
}

/// Reduces an op output to a scalar with fixed random weights so that
/// constant-sum outputs (softmax, normalizations) still get useful checks.
TensorD project(const TensorD& out, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(static_cast<size_t>(out.numel()));
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return sum(mul(out, TensorD(out.shape(), std::move(w))));
}

struct OpCheck {
  std::string name;
  std::function<GradcheckResult(Rng&, uint64_t, double)> run;
};

/// Registers a check whose function is an op on the inputs followed by the
/// fixed random projection.
template <class Build, class Op>
OpCheck projected(std::string name, Build build, Op op) {
  return {name, [name, build, op](Rng& rng, uint64_t seed, double tol) {
            std::vector<TensorD> inputs = build(rng);
            const uint64_t key = hash_mix({seed, fnv1a64(name.data(), name.size())});
            ScalarFn f = [op, key](const std::vector<TensorD>& in) { return project(op(in), key); };
            return gradcheck(name, f, std::move(inputs), 1e-3, tol);
          }};
}

/// Registers a check of a function that already returns a scalar.
template <class Build, class Op>
OpCheck scalar_check(std::string name, Build build, Op op) {
  return {name, [name, build, op](Rng& rng, uint64_t, double tol) {
            std::vector<TensorD> inputs = build(rng);
            return gradcheck(name, ScalarFn(op), std::move(inputs), 1e-3, tol);
          }};
}

using In = const std::vector<TensorD>&;

std::vector<OpCheck> registry() {
  std::vector<OpCheck> ops;
  auto two = [](Shape a, Shape b, double lo = -1.0, double hi = 1.0) {
    return [=](Rng& rng) {
      return std::vector<TensorD>{random_tensor(rng, a, lo, hi), random_tensor(rng, b, lo, hi)};
    };
  };
  auto one = [](Shape a, double lo = -1.0, double hi = 1.0) {
    return [=](Rng& rng) { return std::vector<TensorD>{random_tensor(rng, a, lo, hi)}; };
  };

  ops.push_back(projected("add", two({2, 3, 4}, {3, 4}), [](In x) { return add(x[0], x[1]); }));
  ops.push_back(projected("sub", two({2, 3, 4}, {4}), [](In x) { return sub(x[0], x[1]); }));
  ops.push_back(projected("mul", two({2, 3, 4}, {3, 4}), [](In x) { return mul(x[0], x[1]); }));
  ops.push_back(projected(
      "div",
      [](Rng& rng) {
        return std::vector<TensorD>{random_tensor(rng, {2, 3}), random_tensor(rng, {2, 3}, 0.5, 2.0)};
      },
      [](In x) { return div(x[0], x[1]); }));
  ops.push_back(projected("add_scalar", one({5}), [](In x) { return add_scalar(x[0], 0.7); }));
  ops.push_back(projected("mul_scalar", one({5}), [](In x) { return mul_scalar(x[0], -1.3); }));
  ops.push_back(projected("rsub_scalar", one({5}), [](In x) { return rsub_scalar(x[0], 2.0); }));
  ops.push_back(projected(
      "relu", [](Rng& rng) { return std::vector<TensorD>{away_from_zero(rng, {3, 4})}; },
      [](In x) { return relu(x[0]); }));
  ops.push_back(projected("sigmoid", one({3, 4}, -4.0, 4.0), [](In x) { return sigmoid(x[0]); }));
  ops.push_back(projected("exp", one({3, 4}), [](In x) { return exp(x[0]); }));
  ops.push_back(projected("log", one({3, 4}, 0.2, 2.0), [](In x) { return log(x[0]); }));
  ops.push_back(projected(
      "clamp",
      [](Rng& rng) {
        // Keep every value clear of the clamp bounds at +-0.5.
        TensorD t = random_tensor(rng, {12});
        for (auto& v : t.data_mut())
          if (std::abs(std::abs(v) - 0.5) < 0.05) v *= 0.8;
        return std::vector<TensorD>{t};
      },
      [](In x) { return clamp(x[0], -0.5, 0.5); }));
  ops.push_back(projected("pow_scalar", one({6}, 0.3, 2.0), [](In x) { return pow_scalar(x[0], 2.5); }));
  ops.push_back(projected("sum", one({2, 3}), [](In x) { return sum(x[0]); }));
  ops.push_back(projected("mean", one({2, 3}), [](In x) { return mean(x[0]); }));
  ops.push_back(projected("sum_axis", one({2, 3, 4}), [](In x) { return sum_axis(x[0], 1, true); }));
  ops.push_back(projected("reshape", one({2, 6}), [](In x) { return reshape(x[0], {3, -1}); }));
  ops.push_back(projected("permute", one({2, 3, 4}), [](In x) { return permute(x[0], {2, 0, 1}); }));
  ops.push_back(projected("transpose", one({2, 3, 4}), [](In x) { return transpose(x[0], 0, 2); }));
  ops.push_back(projected("concat", two({2, 3}, {2, 2}), [](In x) { return concat<double>({x[0], x[1]}, 1); }));
  ops.push_back(projected("matmul", two({2, 3, 4}, {4, 5}), [](In x) { return matmul(x[0], x[1]); }));
  ops.push_back(projected("matmul_batched", two({3, 4}, {2, 4, 2}),
                          [](In x) { return matmul(x[0], x[1]); }));
  ops.push_back(projected(
      "linear",
      [](Rng& rng) {
        return std::vector<TensorD>{random_tensor(rng, {2, 3, 4}), random_tensor(rng, {5, 4}),
                                    random_tensor(rng, {5})};
      },
      [](In x) { return linear(x[0], x[1], x[2]); }));
  ops.push_back(projected(
      "conv2d_3x3",
      [](Rng& rng) {
        return std::vector<TensorD>{random_tensor(rng, {1, 2, 5, 5}), random_tensor(rng, {3, 2, 3, 3}),
                                    random_tensor(rng, {3})};
      },
      [](In x) { return conv2d(x[0], x[1], x[2], 1, 1); }));
  ops.push_back(projected(
      "conv2d_stride2",
      [](Rng& rng) {
        return std::vector<TensorD>{random_tensor(rng, {2, 2, 6, 6}), random_tensor(rng, {2, 2, 3, 3})};
      },
      [](In x) { return conv2d(x[0], x[1], TensorD(), 2, 1); }));
  ops.push_back(projected(
      "conv2d_1x1",
      [](Rng& rng) {
        return std::vector<TensorD>{random_tensor(rng, {2, 3, 3, 3}), random_tensor(rng, {4, 3, 1, 1}),
                                    random_tensor(rng, {4})};
      },
      [](In x) { return conv2d(x[0], x[1], x[2], 1, 0); }));
  ops.push_back(projected(
      "max_pool2d",
      [](Rng& rng) {
        // Distinct, well separated values keep the argmax stable under eps.
        std::vector<double> v(32);
        for (size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * static_cast<double>(i);
        for (size_t i = v.size() - 1; i > 0; --i)
          std::swap(v[i], v[static_cast<size_t>(rng.below(static_cast<int64_t>(i) + 1))]);
        return std::vector<TensorD>{TensorD({1, 2, 4, 4}, std::move(v), true)};
      },
      [](In x) { return max_pool2d(x[0], 2, 2); }));
  ops.push_back(projected("nearest_resize", one({1, 2, 3, 3}),
                          [](In x) { return nearest_resize(x[0], 5, 7); }));
  ops.push_back(projected("nearest_upsample", one({1, 2, 2, 3}),
                          [](In x) { return nearest_upsample(x[0], 2); }));
  ops.push_back(projected("softmax_last", one({3, 4}, -2.0, 2.0), [](In x) { return softmax(x[0], -1); }));
  ops.push_back(projected("softmax_first", one({3, 4}, -2.0, 2.0), [](In x) { return softmax(x[0], 0); }));
  ops.push_back(projected(
      "layer_norm",
      [](Rng& rng) {
        return std::vector<TensorD>{random_tensor(rng, {3, 6}), random_tensor(rng, {6}),
                                    random_tensor(rng, {6})};
      },
      [](In x) { return layer_norm(x[0], x[1], x[2]); }));
  ops.push_back(projected(
      "group_norm",
      [](Rng& rng) {
        return std::vector<TensorD>{random_tensor(rng, {2, 4, 3, 3}), random_tensor(rng, {4}),
                                    random_tensor(rng, {4})};
      },
      [](In x) { return group_norm(x[0], 2, x[1], x[2]); }));
  ops.push_back(projected(
      "batch_norm",
      [](Rng& rng) {
        return std::vector<TensorD>{random_tensor(rng, {3, 2, 2, 2}), random_tensor(rng, {2}),
                                    random_tensor(rng, {2})};
      },
      [](In x) {
        TensorD rm = TensorD::zeros({2}), rv = TensorD::ones({2});
        return batch_norm(x[0], x[1], x[2], rm, rv, true);
      }));
  ops.push_back(projected("dropout", one({4, 5}), [](In x) {
    return dropout(x[0], 0.3, true, DropoutKey{7, 11, 3});
  }));
  ops.push_back(scalar_check(
      "dice_loss",
      [](Rng& rng) {
        return std::vector<TensorD>{binary_mask(rng, {2, 1, 4, 4}),
                                    random_tensor(rng, {2, 1, 4, 4}, 0.05, 0.95)};
      },
      [](In x) { return dice_loss(x[0], x[1], 1.0, true); }));
  ops.push_back(scalar_check(
      "dice_loss_unsmoothed",
      [](Rng& rng) {
        return std::vector<TensorD>{binary_mask(rng, {16}), random_tensor(rng, {16}, 0.05, 0.95)};
      },
      [](In x) { return dice_loss(x[0], x[1], 0.0); }));
  ops.push_back(scalar_check(
      "focal_loss",
      [](Rng& rng) {
        return std::vector<TensorD>{binary_mask(rng, {2, 1, 4, 4}),
                                    random_tensor(rng, {2, 1, 4, 4}, 0.05, 0.95)};
      },
      [](In x) { return focal_loss(x[0], x[1], 0.25, 2.0); }));
  ops.push_back(scalar_check(
      "joint_loss",
      [](Rng& rng) {
        std::vector<TensorD> v{binary_mask(rng, {1, 1, 16, 16})};
        for (int64_t s : {4, 2, 1}) v.push_back(random_tensor(rng, {1, 1, s, s}, -2.0, 2.0));
        v.push_back(random_tensor(rng, {1, 1, 1, 1}, -2.0, 2.0));
        return v;
      },
      [](In x) {
        BranchOutputs<double> b;
        for (size_t i = 0; i < 4; ++i) b.logits[i] = x[i + 1];
        LossConfig cfg;
        return joint_loss(b, x[0], cfg).total;
      }));
  ops.push_back(scalar_check(
      "joint_loss_downsample",
      [](Rng& rng) {
        std::vector<TensorD> v{binary_mask(rng, {1, 1, 16, 16})};
        for (int64_t s : {4, 2, 1}) v.push_back(random_tensor(rng, {1, 1, s, s}, -2.0, 2.0));
        v.push_back(random_tensor(rng, {1, 1, 1, 1}, -2.0, 2.0));
        return v;
      },
      [](In x) {
        BranchOutputs<double> b;
        for (size_t i = 0; i < 4; ++i) b.logits[i] = x[i + 1];
        LossConfig cfg;
        cfg.mode = LossMode::kDownsample;
        cfg.lambdas = {0.4, 0.3, 0.2, 0.1};
        return joint_loss(b, x[0], cfg).total;
      }));

  // Composite layers; their parameters are fixed and only the inputs vary.
  ops.push_back({"multi_head_attention", [](Rng& rng, uint64_t seed, double tol) {
                   auto store = std::make_shared<ParameterStore<double>>();
                   auto mha = std::make_shared<MultiHeadAttention<double>>(*store, Initializer{seed},
                                                                          "mha", 8, 2);
                   std::vector<TensorD> in{random_tensor(rng, {2, 3, 8}), random_tensor(rng, {2, 3, 8}),
                                           random_tensor(rng, {2, 3, 8})};
                   ScalarFn f = [store, mha, seed](In x) {
                     return project(mha->forward(x[0], x[1], x[2]), seed);
                   };
                   return gradcheck("multi_head_attention", f, std::move(in), 1e-3, tol);
                 }});
  ops.push_back({"encoder_layer", [](Rng& rng, uint64_t seed, double tol) {
                   auto store = std::make_shared<ParameterStore<double>>();
                   EncoderConfig cfg{8, 1, 2, 16, 0.0};
                   auto layer = std::make_shared<EncoderLayer<double>>(*store, Initializer{seed},
                                                                      "layer", cfg);
                   std::vector<TensorD> in{random_tensor(rng, {2, 4, 8}), random_tensor(rng, {4, 8})};
                   ScalarFn f = [store, layer, seed](In x) {
                     return project(layer->forward(x[0], x[1], ForwardContext{}), seed);
                   };
                   return gradcheck("encoder_layer", f, std::move(in), 1e-3, tol);
                 }});
  ops.push_back({"fuse_multiply", [](Rng& rng, uint64_t seed, double tol) {
                   auto store = std::make_shared<ParameterStore<double>>();
                   auto gate = std::make_shared<Conv2d<double>>(*store, Initializer{seed}, "gate", 3, 3,
                                                               1, 1, 0);
                   std::vector<TensorD> in{random_tensor(rng, {1, 3, 4, 4}),
                                           random_tensor(rng, {1, 3, 2, 2})};
                   ScalarFn f = [store, gate, seed](In x) {
                     return project(fuse_multiply(x[0], x[1], *gate), seed);
                   };
                   return gradcheck("fuse_multiply", f, std::move(in), 1e-3, tol);
                 }});
  return ops;
}

}  // namespace

std::vector<std::string> gradcheck_op_names() {
  std::vector<std::string> names;
  for (const auto& op : registry()) names.push_back(op.name);
  return names;
}

std::vector<GradcheckResult> gradcheck_ops(uint64_t seed, double tol,
                                           const std::vector<std::string>& names) {
  const auto ops = registry();
  for (const auto& n : names) {
    if (std::none_of(ops.begin(), ops.end(), [&](const OpCheck& o) { return o.name == n; })) {
      throw ConfigError("unknown gradcheck op: " + n);
    }
  }
  std::vector<GradcheckResult> results;
  for (const auto& op : ops) {
    if (!names.empty() && std::find(names.begin(), names.end(), op.name) == names.end()) continue;
    Rng rng(hash_mix({seed, fnv1a64(op.name.data(), op.name.size())}));
    results.push_back(op.run(rng, seed, tol));
  }
  return results;
}

ModelConfig gradcheck_model_config(uint64_t seed) {
  ModelConfig cfg;
  cfg.backbone.stage_channels = {4, 8, 8, 8};
  cfg.backbone.blocks_per_stage = {1, 1, 1, 1};
  cfg.backbone.stem_channels = 4;
  cfg.encoder = EncoderConfig{8, 1, 2, 16, 0.0};
  cfg.init_seed = seed;
  return cfg;
}

GradcheckResult gradcheck_model(uint64_t seed, int64_t size, int num_elements, double eps,
                                double tol) {
  ForgeryLocalizer<double> model(gradcheck_model_config(seed));
  Rng rng(hash_mix({seed, 0x6d6f64656cULL}));
  TensorD image = random_tensor(rng, {1, 3, size, size}, 0.0, 1.0, false);
  std::vector<double> m(static_cast<size_t>(size * size), 0.0);
  for (int64_t y = size / 4; y < size / 2 + size / 8; ++y)
    for (int64_t x = size / 8; x < size / 2; ++x) m[static_cast<size_t>(y * size + x)] = 1.0;
  TensorD gt({1, 1, size, size}, std::move(m));
  const LossConfig loss_cfg;

  auto& entries = model.parameters().entries();
  std::vector<size_t> trainable;
  for (size_t i = 0; i < entries.size(); ++i)
    if (entries[i].trainable) trainable.push_back(i);
  std::set<std::pair<size_t, int64_t>> picked;
  while (static_cast<int>(picked.size()) < num_elements) {
    const size_t e = trainable[static_cast<size_t>(rng.below(static_cast<int64_t>(trainable.size())))];
    picked.insert({e, rng.below(entries[e].tensor.numel())});
  }

  auto loss = [&] { return joint_loss(model.forward(image, ForwardContext{}), gt, loss_cfg).total; };
  model.parameters().zero_grad();
  loss().backward();

  GradcheckResult r;
  r.name = "model_" + std::to_string(size) + "x" + std::to_string(size);
  r.tolerance = tol;
  NoGradGuard no_grad;
  for (const auto& [e, k] : picked) {
    TensorD& t = entries[e].tensor;
    const double analytic = t.has_grad() ? t.grad()[static_cast<size_t>(k)] : 0.0;
    auto data = t.data_mut();
    const double orig = data[static_cast<size_t>(k)];
    data[static_cast<size_t>(k)] = orig + eps;
    const double fp = loss().item();
    data[static_cast<size_t>(k)] = orig - eps;
    const double fm = loss().item();
    data[static_cast<size_t>(k)] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    r.max_error = std::max(r.max_error, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
    ++r.checked;
  }
  r.passed = r.max_error < tol && std::isfinite(r.max_error);
  return r;
}

}  // namespace forgeloc
