#include "forgeloc/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "forgeloc/errors.hpp"

namespace forgeloc {

Image8 read_png(const std::string& path, int64_t channels) {
  if (channels != 1 && channels != 3) throw UsageError("read_png: channels must be 1 or 3");
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG " + path + ": " + img.message);
  }
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out;
  out.width = img.width;
  out.height = img.height;
  out.channels = channels;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path + ": " + msg);
  }
  return out;
}

void write_png(const std::string& path, const Image8& image) {
  if ((image.channels != 1 && image.channels != 3) ||
      static_cast<int64_t>(image.pixels.size()) != image.width * image.height * image.channels) {
    throw DimensionError("write_png: pixel buffer does not match the image size");
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path + ": " + img.message);
  }
}

TensorF image_to_tensor(const Image8& image) {
  const int64_t c = image.channels, h = image.height, w = image.width;
  std::vector<float> v(static_cast<size_t>(c * h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t k = 0; k < c; ++k)
        v[static_cast<size_t>((k * h + y) * w + x)] =
            static_cast<float>(image.pixels[static_cast<size_t>((y * w + x) * c + k)]) / 255.0f;
  return TensorF({c, h, w}, std::move(v));
}

Image8 tensor_to_image(const TensorF& chw) {
  if (chw.ndim() != 3) throw DimensionError("tensor_to_image expects [C,H,W], got " + shape_str(chw.shape()));
  Image8 out;
  out.channels = chw.dim(0);
  out.height = chw.dim(1);
  out.width = chw.dim(2);
  out.pixels.resize(static_cast<size_t>(chw.numel()));
  auto d = chw.data();
  const int64_t c = out.channels, h = out.height, w = out.width;
  for (int64_t k = 0; k < c; ++k)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const float v = std::clamp(d[static_cast<size_t>((k * h + y) * w + x)], 0.0f, 1.0f);
        out.pixels[static_cast<size_t>((y * w + x) * c + k)] =
            static_cast<uint8_t>(std::lround(v * 255.0f));
      }
  return out;
}

float quantize8(float v) {
  return static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
}

}  // namespace forgeloc
