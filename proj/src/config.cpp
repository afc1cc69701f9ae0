#include "forgeloc/config.hpp"

#include <fstream>
#include <set>

#include "forgeloc/errors.hpp"
#include "forgeloc/tensor.hpp"

namespace forgeloc {

using nlohmann::json;

std::string to_string(FusionMode m) { return m == FusionMode::kMultiply ? "mul" : "add"; }
std::string to_string(LossMode m) { return m == LossMode::kUpsample ? "upsample" : "downsample"; }
std::string to_string(NormKind k) { return k == NormKind::kGroup ? "group" : "batch"; }
std::string to_string(MaskDownsample m) {
  return m == MaskDownsample::kNearest ? "nearest" : "majority";
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown config key: " + where + "." + key);
  }
}

template <class V>
void read(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for " + where + "." + key + ": " + e.what());
  }
}

template <class E>
E parse_enum(const json& j, const char* key, E current, const std::string& where,
             std::initializer_list<std::pair<const char*, E>> names) {
  if (!j.contains(key)) return current;
  const std::string v = j.at(key).is_string() ? j.at(key).get<std::string>() : j.at(key).dump();
  for (const auto& [name, value] : names)
    if (v == name) return value;
  throw ConfigError("bad value for " + where + "." + key + ": " + v);
}

}  // namespace

json to_json(const BackboneConfig& c) {
  return json{{"stage_channels", c.stage_channels},
              {"blocks_per_stage", c.blocks_per_stage},
              {"stem_channels", c.stem_channels},
              {"norm", to_string(c.norm)},
              {"bottleneck", c.bottleneck}};
}

json to_json(const EncoderConfig& c) {
  return json{{"d_model", c.d_model},
              {"num_layers", c.num_layers},
              {"num_heads", c.num_heads},
              {"ffn_dim", c.ffn_dim},
              {"dropout", c.dropout}};
}

json to_json(const ModelConfig& c) {
  return json{{"backbone", to_json(c.backbone)},
              {"encoder", to_json(c.encoder)},
              {"fusion", to_string(c.fusion)},
              {"init_seed", c.init_seed}};
}

json to_json(const LossConfig& c) {
  return json{{"alpha", c.alpha},
              {"gamma", c.gamma},
              {"lambdas", c.lambdas},
              {"mode", to_string(c.mode)},
              {"dice_smooth", c.dice_smooth},
              {"focal_clamp", c.focal_clamp},
              {"gt_downsample", to_string(c.gt_downsample)},
              {"require_standard_weights", c.require_standard_weights}};
}

json to_json(const TrainConfig& c) {
  json train{{"learning_rate", c.learning_rate},
             {"batch_size", c.batch_size},
             {"epochs", c.epochs},
             {"input_size", c.input_size},
             {"seed", c.seed},
             {"checkpoint_every", c.checkpoint_every},
             {"output_branch", c.output_branch},
             {"augment", c.augment},
             {"freeze_backbone", c.freeze_backbone},
             {"freeze_all", c.freeze_all},
             {"max_grad_norm", c.max_grad_norm},
             {"lr_schedule", c.lr_schedule},
             {"lr_step_epochs", c.lr_step_epochs},
             {"lr_step_gamma", c.lr_step_gamma},
             {"beta1", c.beta1},
             {"beta2", c.beta2},
             {"adam_eps", c.adam_eps}};
  return json{{"model", to_json(c.model)}, {"loss", to_json(c.loss)}, {"train", train}};
}

BackboneConfig backbone_config_from_json(const json& j) {
  const std::string where = "model.backbone";
  check_keys(j, {"stage_channels", "blocks_per_stage", "stem_channels", "norm", "bottleneck"},
             where);
  BackboneConfig c;
  read(j, "stage_channels", c.stage_channels, where);
  read(j, "blocks_per_stage", c.blocks_per_stage, where);
  read(j, "stem_channels", c.stem_channels, where);
  read(j, "bottleneck", c.bottleneck, where);
  c.norm = parse_enum(j, "norm", c.norm, where,
                      {{"group", NormKind::kGroup}, {"batch", NormKind::kBatch}});
  return c;
}

EncoderConfig encoder_config_from_json(const json& j) {
  const std::string where = "model.encoder";
  check_keys(j, {"d_model", "num_layers", "num_heads", "ffn_dim", "dropout"}, where);
  EncoderConfig c;
  read(j, "d_model", c.d_model, where);
  read(j, "num_layers", c.num_layers, where);
  read(j, "num_heads", c.num_heads, where);
  read(j, "ffn_dim", c.ffn_dim, where);
  read(j, "dropout", c.dropout, where);
  return c;
}

ModelConfig model_config_from_json(const json& j) {
  check_keys(j, {"backbone", "encoder", "fusion", "init_seed"}, "model");
  ModelConfig c;
  if (j.contains("backbone")) c.backbone = backbone_config_from_json(j.at("backbone"));
  if (j.contains("encoder")) c.encoder = encoder_config_from_json(j.at("encoder"));
  c.fusion = parse_enum(j, "fusion", c.fusion, "model",
                        {{"mul", FusionMode::kMultiply}, {"add", FusionMode::kAdd}});
  read(j, "init_seed", c.init_seed, "model");
  return c;
}

LossConfig loss_config_from_json(const json& j) {
  const std::string where = "loss";
  check_keys(j, {"alpha", "gamma", "lambdas", "mode", "dice_smooth", "focal_clamp",
                 "gt_downsample", "require_standard_weights"},
             where);
  LossConfig c;
  read(j, "alpha", c.alpha, where);
  read(j, "gamma", c.gamma, where);
  read(j, "lambdas", c.lambdas, where);
  read(j, "dice_smooth", c.dice_smooth, where);
  read(j, "focal_clamp", c.focal_clamp, where);
  read(j, "require_standard_weights", c.require_standard_weights, where);
  c.mode = parse_enum(j, "mode", c.mode, where,
                      {{"upsample", LossMode::kUpsample}, {"downsample", LossMode::kDownsample}});
  c.gt_downsample =
      parse_enum(j, "gt_downsample", c.gt_downsample, where,
                 {{"nearest", MaskDownsample::kNearest}, {"majority", MaskDownsample::kMajority}});
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  check_keys(j, {"model", "loss", "train"}, "config");
  TrainConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"));
  if (j.contains("train")) {
    const json& t = j.at("train");
    const std::string where = "train";
    check_keys(t, {"learning_rate", "batch_size", "epochs", "input_size", "seed",
                   "checkpoint_every", "output_branch", "augment", "freeze_backbone", "freeze_all",
                   "max_grad_norm", "lr_schedule", "lr_step_epochs", "lr_step_gamma", "beta1",
                   "beta2", "adam_eps"},
               where);
    read(t, "learning_rate", c.learning_rate, where);
    read(t, "batch_size", c.batch_size, where);
    read(t, "epochs", c.epochs, where);
    read(t, "input_size", c.input_size, where);
    read(t, "seed", c.seed, where);
    read(t, "checkpoint_every", c.checkpoint_every, where);
    read(t, "output_branch", c.output_branch, where);
    read(t, "augment", c.augment, where);
    read(t, "freeze_backbone", c.freeze_backbone, where);
    read(t, "freeze_all", c.freeze_all, where);
    read(t, "max_grad_norm", c.max_grad_norm, where);
    read(t, "lr_schedule", c.lr_schedule, where);
    read(t, "lr_step_epochs", c.lr_step_epochs, where);
    read(t, "lr_step_gamma", c.lr_step_gamma, where);
    read(t, "beta1", c.beta1, where);
    read(t, "beta2", c.beta2, where);
    read(t, "adam_eps", c.adam_eps, where);
  }
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (input_size < 32 || input_size % 32 != 0) {
    throw ConfigError("train.input_size must be a positive multiple of 32");
  }
  if (checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
  if (output_branch < kFirstBranch || output_branch > kLastBranch) {
    throw ConfigError("train.output_branch must be in 2..5");
  }
  if (max_grad_norm < 0.0) throw ConfigError("train.max_grad_norm must be >= 0");
  if (lr_schedule != "constant" && lr_schedule != "step") {
    throw ConfigError("train.lr_schedule must be 'constant' or 'step'");
  }
  if (lr_step_epochs < 1) throw ConfigError("train.lr_step_epochs must be >= 1");
  model.validate();
  loss.validate();
}

void apply_overrides(json& config, const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override must look like key.path=value: " + ov);
    }
    const std::string path = ov.substr(0, eq), raw = ov.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    json* node = &config;
    size_t start = 0;
    while (true) {
      const size_t dot = path.find('.', start);
      const std::string key = path.substr(start, dot - start);
      if (key.empty()) throw ConfigError("empty key in override " + ov);
      if (!node->is_object()) *node = json::object();
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      node = &(*node)[key];
      start = dot + 1;
    }
  }
}

TrainConfig load_train_config(const std::string& path, const std::vector<std::string>& overrides) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("cannot parse " + path + ": " + e.what());
    }
  }
  apply_overrides(j, overrides);
  TrainConfig c = train_config_from_json(j);
  c.validate();
  return c;
}

}  // namespace forgeloc
