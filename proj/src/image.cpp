#include "vslam/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace vslam {

Image resize_bilinear(const Image& src, int new_width, int new_height) {
  Image dst(new_width, new_height);
  const double sx = static_cast<double>(src.width) / new_width;
  const double sy = static_cast<double>(src.height) / new_height;
  for (int y = 0; y < new_height; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int x = 0; x < new_width; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      const double top = src.at(x0, y0) * (1.0 - wx) + src.at(x1, y0) * wx;
      const double bot = src.at(x0, y1) * (1.0 - wx) + src.at(x1, y1) * wx;
      dst.at(x, y) = static_cast<std::uint8_t>(std::lround(top * (1.0 - wy) + bot * wy));
    }
  }
  return dst;
}

Image gaussian_blur_7x7(const Image& src) {
  // sigma = 2, normalized 7-tap kernel in fixed point.
  static const std::array<int, 7> k = {103, 206, 310, 348, 310, 206, 103};
  static const int ksum = 103 * 2 + 206 * 2 + 310 * 2 + 348;
  Image tmp(src.width, src.height);
  Image dst(src.width, src.height);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      int acc = 0;
      for (int i = -3; i <= 3; ++i) {
        const int xx = std::clamp(x + i, 0, src.width - 1);
        acc += k[i + 3] * src.at(xx, y);
      }
      tmp.at(x, y) = static_cast<std::uint8_t>(acc / ksum);
    }
  }
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      int acc = 0;
      for (int i = -3; i <= 3; ++i) {
        const int yy = std::clamp(y + i, 0, src.height - 1);
        acc += k[i + 3] * tmp.at(x, yy);
      }
      dst.at(x, y) = static_cast<std::uint8_t>(acc / ksum);
    }
  }
  return dst;
}

Image load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error("not a binary PGM: " + path);
  auto skip_comments = [&in]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  int w = 0, h = 0, maxval = 0;
  skip_comments();
  in >> w;
  skip_comments();
  in >> h;
  skip_comments();
  in >> maxval;
  if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error("unsupported PGM header: " + path);
  in.get();
  Image img(w, h);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!in) throw std::runtime_error("truncated PGM: " + path);
  return img;
}

void save_pgm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
  if (!out) throw std::runtime_error("failed writing image: " + path);
}

}  // namespace vslam
