#include "vslam/se3.hpp"

#include <Eigen/SVD>

namespace vslam {

namespace {
constexpr double kEps = 1e-10;
}

Mat3 so3_exp(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 W = skew(phi);
  if (theta < kEps) {
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * W + b * W * W;
}

Vec3 so3_log(const Mat3& R) {
  const double cos_theta = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  Vec3 w(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  if (theta < 1e-8) {
    return 0.5 * w;
  }
  if (theta > kPi - 1e-6) {
    // Near pi the antisymmetric part degenerates; recover the axis from the
    // symmetric part.
    Vec3 axis;
    Mat3 A = R - Mat3::Identity();
    Eigen::JacobiSVD<Mat3> svd(A, Eigen::ComputeFullV);
    axis = svd.matrixV().col(2);
    // Fix the sign using the antisymmetric part (may be tiny but keeps
    // continuity away from exactly pi).
    if (axis.dot(w) < 0.0) axis = -axis;
    return theta * axis.normalized();
  }
  return (theta / (2.0 * std::sin(theta))) * w;
}

Mat3 so3_left_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 W = skew(phi);
  if (theta < kEps) {
    return Mat3::Identity() + 0.5 * W + W * W / 6.0;
  }
  const double t2 = theta * theta;
  const double a = (1.0 - std::cos(theta)) / t2;
  const double b = (theta - std::sin(theta)) / (t2 * theta);
  return Mat3::Identity() + a * W + b * W * W;
}

SE3Pose SE3Pose::exp(const Vec6& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.tail<3>();
  const Mat3 R = so3_exp(phi);
  const Vec3 t = so3_left_jacobian(phi) * rho;
  return SE3Pose(R, t);
}

Vec6 SE3Pose::log() const {
  const Vec3 phi = so3_log(rotation());
  const Mat3 V = so3_left_jacobian(phi);
  Vec6 xi;
  xi.head<3>() = V.inverse() * t_;
  xi.tail<3>() = phi;
  return xi;
}

}  // namespace vslam
