#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fslkit/tensor.hpp"

namespace fsl {

struct PreprocessSpec {
  int resize = 84;
  bool center_crop = true;
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> stdev{0.5, 0.5, 0.5};

  void validate() const;  // throws ConfigError
};

// Interleaved 8-bit RGB.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
};

// Decodes PNG/JPEG from disk; DataError with the offending path otherwise.
RgbImage decode_image(const std::string& path);

// Centered square crop (floor offsets), used before resizing.
RgbImage center_crop_square(const RgbImage& img);

// Bilinear resample to resize x resize, pixel centers aligned
// (src = (dst + 0.5) * scale - 0.5).
Tensor resize_bilinear(const RgbImage& img, int target);  // [3, target, target], raw 0..255

// crop -> bilinear resize -> scale to [0,1] -> per-channel normalization.
Tensor preprocess(const RgbImage& img, const PreprocessSpec& spec);  // [3, R, R]

// Stacks preprocessed images into a batch. Paths that fail to decode raise
// DataError naming the file.
Tensor load_and_preprocess(const std::vector<std::string>& paths, const PreprocessSpec& spec);

}  // namespace fsl
