#pragma once

#include "vslam/se3.hpp"

#include <optional>
#include <random>
#include <vector>

namespace vslam {

struct PnpParams {
  int ransac_iterations = 500;
  double inlier_threshold_deg = 1.0;  // angle between bearing and predicted ray
  int min_inliers = 10;
};

struct PnpResult {
  bool ok = false;
  SE3Pose pose;  // world -> camera
  std::vector<char> inlier_mask;
};

// Pose from bearing / world-point correspondences: linear 6-point solve inside
// RANSAC, then pose-only Gauss-Newton refinement on the consensus set.
PnpResult solve_pnp_ransac(const std::vector<Vec3>& bearings,
                           const std::vector<Vec3>& world_points,
                           const PnpParams& params, std::mt19937_64& rng);

// Linear pose solve from >= 6 correspondences (no outlier handling).
std::optional<SE3Pose> pnp_linear(const std::vector<Vec3>& bearings,
                                  const std::vector<Vec3>& world_points,
                                  const std::vector<int>& idx);

}  // namespace vslam
