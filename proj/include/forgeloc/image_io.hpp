#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "forgeloc/tensor.hpp"

namespace forgeloc {

/// Interleaved 8-bit image (1 = gray, 3 = RGB).
struct Image8 {
  int64_t width = 0;
  int64_t height = 0;
  int64_t channels = 0;
  std::vector<uint8_t> pixels;
};

/// Throws IoError when the file cannot be read or decoded. The result is
/// converted to the requested channel count (1 or 3).
Image8 read_png(const std::string& path, int64_t channels);
void write_png(const std::string& path, const Image8& image);

/// Planar [C, H, W] float tensor in [0, 1].
TensorF image_to_tensor(const Image8& image);
/// Values are clamped to [0, 1] and rounded to the nearest 8-bit level.
Image8 tensor_to_image(const TensorF& chw);

/// Rounds every value onto the 8-bit grid {0, 1/255, ..., 1}.
float quantize8(float v);

}  // namespace forgeloc
