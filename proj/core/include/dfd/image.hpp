#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "dfd/tensor.hpp"

namespace dfd {

class ImageError : public Error {
 public:
  using Error::Error;
};

/// 8-bit RGB, interleaved, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t x, std::size_t y, std::size_t channel) const {
    return pixels[(y * width + x) * 3 + channel];
  }
};

/// Decodes PNG or JPEG, chosen by file signature. Grayscale and alpha inputs
/// are converted to RGB.
Image read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);
void write_jpeg(const std::filesystem::path& path, const Image& image, int quality = 95);

/// Planar float image [C, H, W].
struct Planar {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  float& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return values[(c * height + y) * width + x];
  }
};

/// Pixel values scaled by `scale` (1/255 gives [0, 1]).
Planar to_planar(const Image& image, float scale = 1.0f / 255.0f);
/// Inverse of to_planar with scale 1/255: clamps to [0, 1] and rounds.
Image to_image(const Planar& planar);

/// Bilinear interpolation with half-pixel centers; edges are clamped. Same
/// size is an exact copy.
Planar resize_bilinear(const Planar& in, std::size_t height, std::size_t width);

}  // namespace dfd
