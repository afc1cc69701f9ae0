#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "forgeloc/tensor.hpp"

namespace forgeloc {

enum class ForgeryKind { kCopyMove, kSplicing, kRemoval };

std::string to_string(ForgeryKind k);
/// Accepts "copy_move", "splicing" and "removal".
ForgeryKind parse_forgery_kind(const std::string& name);
std::vector<ForgeryKind> parse_forgery_kinds(const std::string& comma_separated);
const std::vector<ForgeryKind>& all_forgery_kinds();

/// The image is split by an axis-aligned line into two regions with
/// different Gaussian noise levels.
struct NoiseLayout {
  bool vertical = true;  // split along x when true, along y otherwise
  int64_t split = 0;     // first coordinate of region 1
  std::array<double, 2> sigma{0.0, 0.0};

  int region(int64_t y, int64_t x) const { return (vertical ? x : y) < split ? 0 : 1; }
};

struct BaseImage {
  TensorF clean;  // [3, H, W] noise-free content
  TensorF image;  // [3, H, W] content plus region noise, on the 8-bit grid
  NoiseLayout noise;
};

/// Layered gradients, random shapes and two-region noise. H and W must be
/// divisible by 32.
BaseImage generate_base_image(uint64_t seed, int64_t height, int64_t width);

struct ForgerySample {
  TensorF image;  // [3, H, W] in [0, 1]
  TensorF mask;   // [1, H, W] in {0, 1}
  ForgeryKind kind = ForgeryKind::kCopyMove;
  uint64_t seed = 0;
};

/// copy_move copies a region from one noise region into the other;
/// splicing pastes a region of another image with a clearly different
/// noise level; removal fills a region by smoothing in the surrounding
/// background. The mask marks the destination region only.
ForgerySample apply_forgery(const BaseImage& base, ForgeryKind kind, uint64_t seed);

/// Base image and forgery both derived from seed.
ForgerySample make_sample(uint64_t seed, ForgeryKind kind, int64_t height, int64_t width);

ForgerySample hflip(const ForgerySample& s);
/// Horizontal flip with probability 0.5 in training mode; identity otherwise.
ForgerySample augment(const ForgerySample& s, uint64_t seed, bool training);

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split s);
Split parse_split(const std::string& name);

struct ManifestEntry {
  std::string id;
  uint64_t seed = 0;
  ForgeryKind kind = ForgeryKind::kCopyMove;
};

struct DatasetManifest {
  uint64_t global_seed = 0;
  int64_t height = 64;
  int64_t width = 64;
  std::array<int64_t, 3> ratio{8, 1, 1};
  std::vector<ForgeryKind> kinds;
  std::vector<ManifestEntry> train, val, test;

  const std::vector<ManifestEntry>& split(Split s) const;
  int64_t size() const { return static_cast<int64_t>(train.size() + val.size() + test.size()); }
  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

/// Sample i gets seed hash(global_seed, i) and kind kinds[i % kinds.size()];
/// a seeded shuffle assigns round(n * r0 / sum), round(n * r1 / sum) and the
/// remainder to train, val and test. Needs n >= 10.
DatasetManifest build_manifest(int64_t n, uint64_t global_seed, int64_t height, int64_t width,
                               std::vector<ForgeryKind> kinds = {},
                               std::array<int64_t, 3> ratio = {8, 1, 1});

/// In-memory generation of one split.
std::vector<ForgerySample> generate_split(const DatasetManifest& m, Split s);

/// Writes <root>/{train,val,test}/<id>_img.png and <id>_mask.png plus
/// <root>/manifest.json.
void write_dataset(const DatasetManifest& m, const std::string& root);
DatasetManifest read_manifest(const std::string& root);
std::vector<ForgerySample> load_split(const std::string& root, const DatasetManifest& m, Split s);

}  // namespace forgeloc
