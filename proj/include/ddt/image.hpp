#pragma once

#include <cstddef>
#include <vector>

namespace ddt {

/// RGB image with values in [0, 1], stored row-major as H x W x 3.
struct Image {
  static constexpr int kChannels = 3;

  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w),
        pixels(static_cast<std::size_t>(h) * w * kChannels, fill) {}

  std::size_t index(int y, int x, int ch) const {
    return (static_cast<std::size_t>(y) * width + x) * kChannels + ch;
  }
  double &at(int y, int x, int ch) { return pixels[index(y, x, ch)]; }
  double at(int y, int x, int ch) const { return pixels[index(y, x, ch)]; }

  bool operator==(const Image &other) const = default;
};

} // namespace ddt
