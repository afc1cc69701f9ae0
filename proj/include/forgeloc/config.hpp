#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "forgeloc/losses.hpp"
#include "forgeloc/model.hpp"

namespace forgeloc {

struct TrainConfig {
  double learning_rate = 1e-4;
  int64_t batch_size = 2;
  int64_t epochs = 20;
  int64_t input_size = 64;
  LossConfig loss;
  ModelConfig model;
  uint64_t seed = 0;
  int64_t checkpoint_every = 1;
  /// Branch used for validation selection and as the default final output.
  int output_branch = 2;
  /// Random horizontal flips of training samples.
  bool augment = true;
  bool freeze_backbone = false;
  bool freeze_all = false;
  /// Global gradient-norm clip; 0 disables.
  double max_grad_norm = 0.0;
  /// "constant" or "step" (multiply by lr_step_gamma every lr_step_epochs).
  std::string lr_schedule = "constant";
  int64_t lr_step_epochs = 10;
  double lr_step_gamma = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

nlohmann::json to_json(const BackboneConfig& c);
nlohmann::json to_json(const EncoderConfig& c);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const LossConfig& c);
/// Full run configuration: {"model": ..., "loss": ..., "train": ...}.
nlohmann::json to_json(const TrainConfig& c);

// Parsers start from defaults and reject unknown keys.
BackboneConfig backbone_config_from_json(const nlohmann::json& j);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
ModelConfig model_config_from_json(const nlohmann::json& j);
LossConfig loss_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Applies "a.b.c=value" overrides in order. Values are parsed as JSON when
/// possible (numbers, booleans, arrays) and as plain strings otherwise.
void apply_overrides(nlohmann::json& config, const std::vector<std::string>& overrides);

/// Reads a JSON config file (empty path: defaults) and applies overrides.
TrainConfig load_train_config(const std::string& path, const std::vector<std::string>& overrides);

std::string to_string(FusionMode m);
std::string to_string(LossMode m);
std::string to_string(NormKind k);
std::string to_string(MaskDownsample m);

}  // namespace forgeloc
