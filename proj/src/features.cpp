#include "vslam/features.hpp"

#include "vslam/orb_pattern.hpp"

#include <algorithm>
#include <stdexcept>

namespace vslam {

namespace {

constexpr int kBorder = 19;          // circle + orientation patch + margin
constexpr int kPatchRadius = 15;     // intensity-centroid patch
constexpr int kMinImageSide = 2 * kBorder + 10;

const std::array<std::pair<int, int>, 16> kCircle = {{{0, -3},
                                                      {1, -3},
                                                      {2, -2},
                                                      {3, -1},
                                                      {3, 0},
                                                      {3, 1},
                                                      {2, 2},
                                                      {1, 3},
                                                      {0, 3},
                                                      {-1, 3},
                                                      {-2, 2},
                                                      {-3, 1},
                                                      {-3, 0},
                                                      {-3, -1},
                                                      {-2, -2},
                                                      {-1, -3}}};

// Segment test: >= 9 contiguous circle pixels all brighter or all darker
// than center by the threshold. Returns a response (0 = not a corner).
double fast_score(const Image& img, int x, int y, int threshold) {
  const int c = img.at(x, y);
  std::array<int, 16> diff;
  for (int i = 0; i < 16; ++i) {
    diff[i] = img.at(x + kCircle[i].first, y + kCircle[i].second) - c;
  }
  for (int sign = 0; sign < 2; ++sign) {
    int run = 0;
    int best_run = 0;
    for (int i = 0; i < 32; ++i) {
      const int d = sign == 0 ? diff[i & 15] : -diff[i & 15];
      if (d > threshold) {
        ++run;
        best_run = std::max(best_run, run);
        if (best_run >= 16) break;
      } else {
        run = 0;
      }
    }
    if (best_run >= 9) {
      double score = 0.0;
      for (int i = 0; i < 16; ++i) {
        const int d = sign == 0 ? diff[i] : -diff[i];
        if (d > threshold) score += d - threshold;
      }
      return score;
    }
  }
  return 0.0;
}

struct RawKeypoint {
  int x, y;
  double response;
};

// FAST + 3x3 non-max suppression inside one rectangular region.
std::vector<RawKeypoint> detect_in_cell(const Image& img, int x0, int y0, int x1,
                                        int y1, int threshold) {
  const int w = x1 - x0;
  const int h = y1 - y0;
  if (w <= 0 || h <= 0) return {};
  std::vector<double> score(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      score[static_cast<std::size_t>(y - y0) * w + (x - x0)] = fast_score(img, x, y, threshold);
    }
  }
  std::vector<RawKeypoint> out;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double s = score[static_cast<std::size_t>(y) * w + x];
      if (s <= 0.0) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const double ns = score[static_cast<std::size_t>(ny) * w + nx];
          if (ns > s || (ns == s && (dy < 0 || (dy == 0 && dx < 0)))) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) out.push_back({x + x0, y + y0, s});
    }
  }
  return out;
}

double intensity_centroid_angle(const Image& img, int x, int y) {
  double m01 = 0.0, m10 = 0.0;
  for (int dy = -kPatchRadius; dy <= kPatchRadius; ++dy) {
    const int half = static_cast<int>(
        std::floor(std::sqrt(static_cast<double>(kPatchRadius * kPatchRadius - dy * dy))));
    for (int dx = -half; dx <= half; ++dx) {
      const double val = img.at(x + dx, y + dy);
      m10 += dx * val;
      m01 += dy * val;
    }
  }
  return std::atan2(m01, m10);
}

Descriptor describe(const Image& blurred, int x, int y, double angle) {
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  Descriptor d;
  for (int bit = 0; bit < 256; ++bit) {
    const int* p = &kOrbPattern[static_cast<std::size_t>(bit) * 4];
    const int ax = static_cast<int>(std::lround(p[0] * ca - p[1] * sa));
    const int ay = static_cast<int>(std::lround(p[0] * sa + p[1] * ca));
    const int bx = static_cast<int>(std::lround(p[2] * ca - p[3] * sa));
    const int by = static_cast<int>(std::lround(p[2] * sa + p[3] * ca));
    if (blurred.at(x + ax, y + ay) < blurred.at(x + bx, y + by)) {
      d.words[bit >> 6] |= std::uint64_t(1) << (bit & 63);
    }
  }
  return d;
}

}  // namespace

std::array<std::uint8_t, 32> Descriptor::to_bytes() const {
  std::array<std::uint8_t, 32> b;
  for (int i = 0; i < 32; ++i) b[i] = static_cast<std::uint8_t>(words[i >> 3] >> ((i & 7) * 8));
  return b;
}

Descriptor Descriptor::from_bytes(const std::array<std::uint8_t, 32>& bytes) {
  Descriptor d;
  for (int i = 0; i < 32; ++i) {
    d.words[i >> 3] |= std::uint64_t(bytes[i]) << ((i & 7) * 8);
  }
  return d;
}

FeatureFrame detect_and_describe(const Image& image, const FeatureParams& params) {
  if (image.width < kMinImageSide || image.height < kMinImageSide) {
    throw std::runtime_error("feature extraction: image too small for the pyramid");
  }
  FeatureFrame frame;
  frame.scale_factor = params.scale_factor;
  frame.num_levels = params.num_levels;

  struct Candidate {
    Keypoint kp;
    Descriptor desc;
  };
  std::vector<Candidate> all;

  Image level_img = image;
  double scale = 1.0;
  for (int level = 0; level < params.num_levels; ++level) {
    if (level > 0) {
      const int w = static_cast<int>(std::lround(image.width / scale));
      const int h = static_cast<int>(std::lround(image.height / scale));
      if (w < kMinImageSide || h < kMinImageSide) break;
      level_img = resize_bilinear(image, w, h);
    }
    const Image blurred = gaussian_blur_7x7(level_img);

    const int x_min = kBorder, x_max = level_img.width - kBorder;
    const int y_min = kBorder, y_max = level_img.height - kBorder;
    const int cell = params.grid_cell_size;
    for (int cy = y_min; cy < y_max; cy += cell) {
      for (int cx = x_min; cx < x_max; cx += cell) {
        const int x1 = std::min(cx + cell, x_max);
        const int y1 = std::min(cy + cell, y_max);
        auto kps = detect_in_cell(level_img, cx, cy, x1, y1, params.fast_threshold);
        if (kps.empty()) {
          // One adaptive retry keeps dark, low-contrast cells populated.
          kps = detect_in_cell(level_img, cx, cy, x1, y1,
                               std::max(1, params.fast_threshold / 2));
        }
        std::sort(kps.begin(), kps.end(), [](const RawKeypoint& a, const RawKeypoint& b) {
          if (a.response != b.response) return a.response > b.response;
          return a.y != b.y ? a.y < b.y : a.x < b.x;
        });
        const std::size_t cap = 8;
        if (kps.size() > cap) kps.resize(cap);
        for (const auto& rk : kps) {
          Candidate c;
          c.kp.u = rk.x * scale;
          c.kp.v = rk.y * scale;
          c.kp.octave = level;
          c.kp.response = rk.response;
          c.kp.angle = intensity_centroid_angle(level_img, rk.x, rk.y);
          c.desc = describe(blurred, rk.x, rk.y, c.kp.angle);
          all.push_back(c);
        }
      }
    }
    scale *= params.scale_factor;
  }

  std::stable_sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
    return a.kp.response > b.kp.response;
  });
  if (all.size() > static_cast<std::size_t>(params.max_keypoints)) {
    all.resize(static_cast<std::size_t>(params.max_keypoints));
  }
  frame.keypoints.reserve(all.size());
  frame.descriptors.reserve(all.size());
  for (const auto& c : all) {
    frame.keypoints.push_back(c.kp);
    frame.descriptors.push_back(c.desc);
  }
  return frame;
}

void compute_bearings(FeatureFrame& frame, const CameraModel& camera) {
  frame.bearings.resize(frame.keypoints.size());
  for (std::size_t i = 0; i < frame.keypoints.size(); ++i) {
    frame.bearings[i] = camera.unproject(ImagePoint(frame.keypoints[i].u, frame.keypoints[i].v));
  }
}

std::vector<std::pair<int, int>> match(const FeatureFrame& a, const FeatureFrame& b,
                                       const MatchParams& params) {
  const int na = static_cast<int>(a.size());
  const int nb = static_cast<int>(b.size());
  std::vector<std::pair<int, int>> result;
  if (na == 0 || nb == 0) return result;

  std::vector<int> best_b_for_a(na, -1);
  std::vector<int> best_a_for_b(nb, -1);
  std::vector<int> best_dist_b(nb, 257);

  for (int j = 0; j < nb; ++j) {
    for (int i = 0; i < na; ++i) {
      const int d = hamming(a.descriptors[i], b.descriptors[j]);
      if (d < best_dist_b[j]) {
        best_dist_b[j] = d;
        best_a_for_b[j] = i;
      }
    }
  }
  for (int i = 0; i < na; ++i) {
    int best = 257, second = 257, best_j = -1;
    for (int j = 0; j < nb; ++j) {
      const int d = hamming(a.descriptors[i], b.descriptors[j]);
      if (d < best) {
        second = best;
        best = d;
        best_j = j;
      } else if (d < second) {
        second = d;
      }
    }
    if (best_j < 0 || best > params.max_hamming) continue;
    if (second < 257 && best >= params.ratio * second) continue;
    best_b_for_a[i] = best_j;
  }
  for (int i = 0; i < na; ++i) {
    const int j = best_b_for_a[i];
    if (j >= 0 && best_a_for_b[j] == i) result.emplace_back(i, j);
  }
  return result;
}

}  // namespace vslam
