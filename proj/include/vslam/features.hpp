#pragma once

#include "vslam/camera.hpp"
#include "vslam/image.hpp"
#include "vslam/math.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <vector>

namespace vslam {

// 256-bit binary descriptor.
struct Descriptor {
  std::array<std::uint64_t, 4> words = {0, 0, 0, 0};

  bool operator==(const Descriptor&) const = default;

  std::array<std::uint8_t, 32> to_bytes() const;
  static Descriptor from_bytes(const std::array<std::uint8_t, 32>& bytes);
};

inline int hamming(const Descriptor& a, const Descriptor& b) {
  int d = 0;
  for (int i = 0; i < 4; ++i) d += std::popcount(a.words[i] ^ b.words[i]);
  return d;
}

struct Keypoint {
  double u = 0.0;  // level-0 pixel coordinates
  double v = 0.0;
  int octave = 0;
  double angle = 0.0;  // radians
  double response = 0.0;
};

struct FeatureParams {
  int max_keypoints = 2000;
  double scale_factor = 1.2;
  int num_levels = 8;
  int fast_threshold = 20;
  int grid_cell_size = 32;  // bucketing cell edge at each pyramid level
};

struct MatchParams {
  double ratio = 0.75;
  int max_hamming = 50;
};

// Keypoints, descriptors and unit bearings of one image, parallel lists.
struct FeatureFrame {
  std::vector<Keypoint> keypoints;
  std::vector<Descriptor> descriptors;
  std::vector<Bearing> bearings;
  double scale_factor = 1.2;
  int num_levels = 8;

  std::size_t size() const { return keypoints.size(); }
  double octave_scale(int octave) const { return std::pow(scale_factor, octave); }
};

// FAST detection over an image pyramid with grid bucketing, intensity-centroid
// orientation and rotated binary-test descriptors. Deterministic for identical
// input and params. Bearings are left empty; fill them with compute_bearings.
FeatureFrame detect_and_describe(const Image& image, const FeatureParams& params);

void compute_bearings(FeatureFrame& frame, const CameraModel& camera);

// Mutual-best matching with a Hamming threshold and Lowe ratio test.
// Returns (index in a, index in b) pairs; each index appears at most once.
std::vector<std::pair<int, int>> match(const FeatureFrame& a, const FeatureFrame& b,
                                       const MatchParams& params);

}  // namespace vslam
