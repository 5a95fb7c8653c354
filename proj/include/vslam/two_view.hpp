#pragma once

#include "vslam/se3.hpp"

#include <optional>
#include <random>
#include <vector>

namespace vslam {

struct TriangulationParams {
  double min_parallax_deg = 1.0;
};

// Midpoint triangulation of two bearing rays. Poses map world -> camera.
// Absent when the rays are near-parallel or the point lies behind a camera.
std::optional<Vec3> triangulate(const SE3Pose& pose1, const SE3Pose& pose2,
                                const Vec3& b1, const Vec3& b2,
                                const TriangulationParams& params = {});

struct TwoViewParams {
  int ransac_iterations = 200;
  double epipolar_threshold_deg = 0.2;  // angular distance to the epipolar plane
  int min_inliers = 50;
  double min_parallax_deg = 1.0;
};

struct TwoViewResult {
  enum class Status { Ok, InsufficientInliers, Degenerate };
  Status status = Status::InsufficientInliers;
  // Pose of view 2 relative to view 1 (x2 = R x1 + t), unit translation.
  SE3Pose relative_pose;
  std::vector<char> inlier_mask;             // per input match
  std::vector<std::optional<Vec3>> points;   // per input match, view-1 frame

  bool ok() const { return status == Status::Ok; }
};

// Essential-matrix initialization: 8-point on bearings inside RANSAC with an
// angular epipolar residual, cheirality disambiguation, inlier
// re-triangulation. Requires >= 8 matches.
TwoViewResult estimate_relative_pose_ransac(const std::vector<Vec3>& b1,
                                            const std::vector<Vec3>& b2,
                                            const TwoViewParams& params,
                                            std::mt19937_64& rng);

// Essential matrix from a relative pose: E = [t]x R.
Mat3 essential_from_pose(const SE3Pose& pose_2_from_1);

// Angle between a bearing and the epipolar plane implied by E, radians.
double epipolar_angle(const Mat3& E, const Vec3& b1, const Vec3& b2);

}  // namespace vslam
