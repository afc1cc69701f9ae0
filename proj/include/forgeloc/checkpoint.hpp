#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "forgeloc/adam.hpp"
#include "forgeloc/config.hpp"
#include "forgeloc/model.hpp"

namespace forgeloc {

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

/// Binary layout, little-endian:
///   "TFCK" | u32 version | u64 model digest | u64 config length | config JSON
///   u64 epoch | u64 rng state | u64 entry count
///   per entry: u64 name length | name | u64 ndim | i64 dims | f32 values
///   i64 optimizer step | u64 slot count
///   per slot: u64 name length | name | u64 n | f32 m[n] | f32 v[n]
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  TrainConfig config;
  uint64_t digest = 0;
  int64_t epoch = 0;
  uint64_t rng_state = 0;
  std::vector<CheckpointEntry> entries;
  AdamState<float> optimizer;

  const CheckpointEntry* find(const std::string& name) const;
};

/// Snapshot of every parameter and buffer of the model plus optimizer state.
Checkpoint make_checkpoint(const ForgeryLocalizer<float>& model, const TrainConfig& config,
                           const AdamState<float>& optimizer, int64_t epoch, uint64_t rng_state);

void save_checkpoint(const Checkpoint& ck, const std::string& path);
/// Throws IoError on truncated or malformed files and ConfigError when the
/// stored digest does not match the stored config.
Checkpoint load_checkpoint(const std::string& path);

/// Copies checkpoint values into the model. Refuses (ConfigError) when the
/// model config digest differs or a tensor is missing or has another shape.
void restore_model(const Checkpoint& ck, ForgeryLocalizer<float>& model);

/// Builds a model from the checkpoint's config and restores its values.
std::unique_ptr<ForgeryLocalizer<float>> model_from_checkpoint(const Checkpoint& ck);

}  // namespace forgeloc
