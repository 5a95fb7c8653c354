#include "vslam/sim3.hpp"

#include <array>

namespace vslam {

namespace {

constexpr double kEps = 1e-10;

// W matrix of the sim(3) exponential: t = W * rho.
Mat3 calc_w(const Vec3& phi, double sigma) {
  const double theta = phi.norm();
  const Mat3 W = skew(phi);
  const Mat3 W2 = W * W;
  const double scale = std::exp(sigma);
  double a, b, c;
  if (std::abs(sigma) < kEps) {
    c = 1.0;
    if (theta < kEps) {
      a = 0.5;
      b = 1.0 / 6.0;
    } else {
      a = (1.0 - std::cos(theta)) / (theta * theta);
      b = (theta - std::sin(theta)) / (theta * theta * theta);
    }
  } else {
    c = (scale - 1.0) / sigma;
    if (theta < kEps) {
      const double s2 = sigma * sigma;
      a = ((sigma - 1.0) * scale + 1.0) / s2;
      b = (scale * 0.5 * s2 + scale - 1.0 - sigma * scale) / (s2 * sigma);
    } else {
      const double sa = scale * std::sin(theta);
      const double sb = scale * std::cos(theta);
      const double d = theta * theta + sigma * sigma;
      a = (sa * sigma + (1.0 - sb) * theta) / (theta * d);
      b = (c - ((sb - 1.0) * sigma + sa * theta) / d) / (theta * theta);
    }
  }
  return a * W + b * W2 + c * Mat3::Identity();
}

// 4x4 homogeneous representation of a sim(3) algebra element.
Mat4 sim3_hat(const Vec7& x) {
  Mat4 m = Mat4::Zero();
  m.topLeftCorner<3, 3>() = skew(x.segment<3>(3)) + x(6) * Mat3::Identity();
  m.topRightCorner<3, 1>() = x.head<3>();
  return m;
}

Vec7 sim3_vee(const Mat4& m) {
  Vec7 x;
  x.head<3>() = m.topRightCorner<3, 1>();
  const Mat3 a = m.topLeftCorner<3, 3>();
  const double sigma = a.trace() / 3.0;
  x(3) = 0.5 * (a(2, 1) - a(1, 2));
  x(4) = 0.5 * (a(0, 2) - a(2, 0));
  x(5) = 0.5 * (a(1, 0) - a(0, 1));
  x(6) = sigma;
  return x;
}

}  // namespace

Sim3Transform Sim3Transform::exp(const Vec7& xi) {
  const Vec3 rho = xi.head<3>();
  const Vec3 phi = xi.segment<3>(3);
  const double sigma = xi(6);
  const Mat3 R = so3_exp(phi);
  const Vec3 t = calc_w(phi, sigma) * rho;
  return Sim3Transform(R, t, std::exp(sigma));
}

Vec7 Sim3Transform::log() const {
  const Vec3 phi = so3_log(rotation());
  const double sigma = std::log(s_);
  Vec7 xi;
  xi.head<3>() = calc_w(phi, sigma).inverse() * t_;
  xi.segment<3>(3) = phi;
  xi(6) = sigma;
  return xi;
}

Mat7 Sim3Transform::adjoint() const {
  const Mat3 R = rotation();
  Mat7 adj = Mat7::Zero();
  adj.topLeftCorner<3, 3>() = s_ * R;
  adj.block<3, 3>(0, 3) = skew(t_) * R;
  adj.block<3, 1>(0, 6) = -t_;
  adj.block<3, 3>(3, 3) = R;
  adj(6, 6) = 1.0;
  return adj;
}

Mat7 sim3_ad(const Vec7& x) {
  const Mat4 X = sim3_hat(x);
  Mat7 ad;
  for (int i = 0; i < 7; ++i) {
    Vec7 e = Vec7::Zero();
    e(i) = 1.0;
    const Mat4 E = sim3_hat(e);
    ad.col(i) = sim3_vee(X * E - E * X);
  }
  return ad;
}

Mat7 sim3_inv_right_jacobian(const Vec7& x) {
  // Bernoulli numbers B_0.. (B_1 = -1/2 convention); odd entries > 1 vanish.
  static const std::array<double, 17> bernoulli = {
      1.0,       -0.5, 1.0 / 6.0,  0.0, -1.0 / 30.0,    0.0, 1.0 / 42.0, 0.0,
      -1.0 / 30.0, 0.0, 5.0 / 66.0, 0.0, -691.0 / 2730.0, 0.0, 7.0 / 6.0, 0.0,
      -3617.0 / 510.0};
  const Mat7 neg_ad = -sim3_ad(x);
  Mat7 term = Mat7::Identity();
  Mat7 sum = Mat7::Zero();
  double factorial = 1.0;
  for (std::size_t n = 0; n < bernoulli.size(); ++n) {
    if (n > 0) {
      factorial *= static_cast<double>(n);
      term = term * neg_ad;
    }
    if (bernoulli[n] != 0.0) {
      sum += (bernoulli[n] / factorial) * term;
    }
  }
  return sum;
}

}  // namespace vslam
