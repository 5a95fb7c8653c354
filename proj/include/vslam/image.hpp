#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vslam {

// Grayscale 8-bit raster.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool empty() const { return data.empty(); }
};

Image resize_bilinear(const Image& src, int new_width, int new_height);
Image gaussian_blur_7x7(const Image& src);

// Binary PGM (P5) i/o.
Image load_pgm(const std::string& path);
void save_pgm(const Image& img, const std::string& path);

}  // namespace vslam
