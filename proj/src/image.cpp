#include "fslkit/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>

#include "fslkit/errors.hpp"

namespace fsl {

void PreprocessSpec::validate() const {
  if (resize <= 0) throw ConfigError("preprocess resize target must be > 0");
  for (double s : stdev) {
    if (s <= 0.0) throw ConfigError("preprocess std must be > 0");
  }
}

RgbImage decode_image(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  if (bgr.empty()) {
    throw DataError("cannot decode image '" + path + "'");
  }
  RgbImage img;
  img.width = bgr.cols;
  img.height = bgr.rows;
  img.pixels.resize(static_cast<std::size_t>(bgr.cols) * bgr.rows * 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * img.width + x) * 3;
      img.pixels[base + 0] = row[x][2];
      img.pixels[base + 1] = row[x][1];
      img.pixels[base + 2] = row[x][0];
    }
  }
  return img;
}

RgbImage center_crop_square(const RgbImage& img) {
  const int side = std::min(img.width, img.height);
  const int x0 = (img.width - side) / 2;
  const int y0 = (img.height - side) / 2;
  RgbImage out;
  out.width = side;
  out.height = side;
  out.pixels.resize(static_cast<std::size_t>(side) * side * 3);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x)
      for (int c = 0; c < 3; ++c)
        out.pixels[(static_cast<std::size_t>(y) * side + x) * 3 + c] =
            img.at(y0 + y, x0 + x, c);
  return out;
}

Tensor resize_bilinear(const RgbImage& img, int target) {
  Tensor out({3, static_cast<std::size_t>(target), static_cast<std::size_t>(target)});
  const double sy = static_cast<double>(img.height) / target;
  const double sx = static_cast<double>(img.width) / target;
  for (int y = 0; y < target; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < target; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c);
        const double bot = (1.0 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c);
        out[(static_cast<std::size_t>(c) * target + y) * target + x] =
            (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

Tensor preprocess(const RgbImage& img, const PreprocessSpec& spec) {
  spec.validate();
  Tensor t = spec.center_crop ? resize_bilinear(center_crop_square(img), spec.resize)
                              : resize_bilinear(img, spec.resize);
  const std::size_t plane = static_cast<std::size_t>(spec.resize) * spec.resize;
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      double& v = t[c * plane + i];
      v = (v / 255.0 - spec.mean[c]) / spec.stdev[c];
    }
  }
  return t;
}

Tensor load_and_preprocess(const std::vector<std::string>& paths, const PreprocessSpec& spec) {
  spec.validate();
  const std::size_t r = static_cast<std::size_t>(spec.resize);
  Tensor batch({paths.size(), 3, r, r});
  const std::size_t stride = 3 * r * r;
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const Tensor one = preprocess(decode_image(paths[i]), spec);
    std::copy(one.data().begin(), one.data().end(), batch.data().begin() + i * stride);
  }
  return batch;
}

}  // namespace fsl
