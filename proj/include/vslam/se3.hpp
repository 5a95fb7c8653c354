#pragma once

#include "vslam/math.hpp"

namespace vslam {

// Rigid transform. Stored as unit quaternion + translation, applied as
// x' = R x + t.
class SE3Pose {
 public:
  SE3Pose() : q_(Quat::Identity()), t_(Vec3::Zero()) {}
  SE3Pose(const Quat& q, const Vec3& t) : q_(q.normalized()), t_(t) {}
  SE3Pose(const Mat3& R, const Vec3& t) : q_(Quat(R).normalized()), t_(t) {}

  static SE3Pose identity() { return SE3Pose(); }

  // Trusts the caller's quaternion; used by deserializers that must keep
  // poses bit-exact (the normalizing constructors may perturb the last ulp).
  static SE3Pose from_normalized(const Quat& q, const Vec3& t) {
    SE3Pose p;
    p.q_ = q;
    p.t_ = t;
    return p;
  }

  const Quat& unit_quaternion() const { return q_; }
  Mat3 rotation() const { return q_.toRotationMatrix(); }
  const Vec3& translation() const { return t_; }
  Vec3& translation() { return t_; }

  Vec3 apply(const Vec3& p) const { return q_ * p + t_; }
  Vec3 operator*(const Vec3& p) const { return apply(p); }

  SE3Pose operator*(const SE3Pose& rhs) const {
    return SE3Pose(q_ * rhs.q_, q_ * rhs.t_ + t_);
  }

  SE3Pose inverse() const {
    const Quat qi = q_.conjugate();
    return SE3Pose(qi, qi * (-t_));
  }

  // exp of (rho, phi): translation part first, rotation part second.
  static SE3Pose exp(const Vec6& xi);
  Vec6 log() const;

  bool is_approx(const SE3Pose& o, double tol = 1e-10) const {
    return (rotation() - o.rotation()).norm() < tol && (t_ - o.t_).norm() < tol;
  }

 private:
  Quat q_;
  Vec3 t_;
};

// exp/log on SO(3) alone, used in several Jacobian derivations.
Mat3 so3_exp(const Vec3& phi);
Vec3 so3_log(const Mat3& R);

// Left Jacobian of SO(3) and its inverse.
Mat3 so3_left_jacobian(const Vec3& phi);

}  // namespace vslam
