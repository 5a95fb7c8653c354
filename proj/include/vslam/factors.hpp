#pragma once

#include "vslam/se3.hpp"

namespace vslam {

// Bearing reprojection factor. The residual lives in the tangent plane of the
// observed bearing, so it is well defined for every camera model including
// equirectangular poles; its magnitude approximates the angular error in
// radians.
struct ReprojectionFactor {
  int keyframe_id = -1;
  int landmark_id = -1;
  Bearing observed = Vec3::UnitZ();  // unit
  double weight = 1.0;               // information, 1 / sigma^2
};

struct ReprojectionEval {
  Vec2 residual;       // tangent-plane residual, radians
  Mat26 J_pose;        // wrt left-multiplied se3 perturbation of the pose
  Mat23 J_landmark;    // wrt the world landmark position
  bool valid = false;  // false when the point collapses onto the camera center
};

// Residual and analytic Jacobians at (pose: world->camera, landmark: world).
ReprojectionEval evaluate_reprojection(const SE3Pose& pose, const Vec3& landmark,
                                       const Bearing& observed,
                                       bool with_jacobians = true);

// Huber helpers on the residual norm e (same units as the residual).
inline double huber_cost(double e, double delta) {
  return e <= delta ? e * e : delta * (2.0 * e - delta);
}
inline double huber_weight(double e, double delta) {
  return e <= delta ? 1.0 : delta / e;
}

}  // namespace vslam
