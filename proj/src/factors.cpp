#include "vslam/factors.hpp"

namespace vslam {

ReprojectionEval evaluate_reprojection(const SE3Pose& pose, const Vec3& landmark,
                                       const Bearing& observed, bool with_jacobians) {
  ReprojectionEval ev;
  const Vec3 p = pose * landmark;
  const double n = p.norm();
  if (n < 1e-12) return ev;
  const Vec3 phat = p / n;
  const auto [t1, t2] = tangent_basis(observed);
  ev.residual = Vec2(t1.dot(phat), t2.dot(phat));
  ev.valid = true;
  if (!with_jacobians) return ev;
  Mat23 T;
  T.row(0) = t1.transpose();
  T.row(1) = t2.transpose();
  const Mat23 Td = T * ((Mat3::Identity() - phat * phat.transpose()) / n);
  ev.J_pose.leftCols<3>() = Td;
  ev.J_pose.rightCols<3>() = -Td * skew(p);
  ev.J_landmark = Td * pose.rotation();
  return ev;
}

}  // namespace vslam
