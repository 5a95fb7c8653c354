#pragma once

#include "vslam/se3.hpp"

namespace vslam {

// Similarity transform, x' = s R x + t. Used for monocular trajectory
// alignment and scale-drift correction in the pose graph.
class Sim3Transform {
 public:
  Sim3Transform() : q_(Quat::Identity()), t_(Vec3::Zero()), s_(1.0) {}
  Sim3Transform(const Quat& q, const Vec3& t, double s)
      : q_(q.normalized()), t_(t), s_(s) {}
  Sim3Transform(const Mat3& R, const Vec3& t, double s)
      : q_(Quat(R).normalized()), t_(t), s_(s) {}

  static Sim3Transform identity() { return Sim3Transform(); }
  static Sim3Transform from_se3(const SE3Pose& T, double s = 1.0) {
    return Sim3Transform(T.unit_quaternion(), T.translation(), s);
  }

  const Quat& unit_quaternion() const { return q_; }
  Mat3 rotation() const { return q_.toRotationMatrix(); }
  const Vec3& translation() const { return t_; }
  double scale() const { return s_; }

  Vec3 apply(const Vec3& p) const { return s_ * (q_ * p) + t_; }
  Vec3 operator*(const Vec3& p) const { return apply(p); }

  Sim3Transform operator*(const Sim3Transform& rhs) const {
    return Sim3Transform(q_ * rhs.q_, s_ * (q_ * rhs.t_) + t_, s_ * rhs.s_);
  }

  Sim3Transform inverse() const {
    const Quat qi = q_.conjugate();
    return Sim3Transform(qi, qi * t_ * (-1.0 / s_), 1.0 / s_);
  }

  // Rigid projection: drops the scale into the translation-preserving SE3
  // with the same rotation and translation.
  SE3Pose to_se3() const { return SE3Pose(q_, t_); }

  // Tangent ordering: (rho, phi, sigma).
  static Sim3Transform exp(const Vec7& xi);
  Vec7 log() const;

  // Adjoint matrix: exp(Adj * x) = S exp(x) S^{-1}.
  Mat7 adjoint() const;

  bool is_approx(const Sim3Transform& o, double tol = 1e-10) const {
    return (rotation() - o.rotation()).norm() < tol &&
           (t_ - o.t_).norm() < tol && std::abs(s_ - o.s_) < tol;
  }

 private:
  Quat q_;
  Vec3 t_;
  double s_;
};

// Lie-algebra bracket matrix ad_x for sim(3), 7x7 in (rho, phi, sigma) order.
Mat7 sim3_ad(const Vec7& x);

// d/d(delta) log(exp(x) exp(delta)) at delta = 0, i.e. the inverse right
// Jacobian of the exponential map, evaluated via the convergent
// Bernoulli-number series of ad_x.
Mat7 sim3_inv_right_jacobian(const Vec7& x);

}  // namespace vslam
