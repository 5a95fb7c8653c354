#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vslam/pnp.hpp"
#include "vslam/sim3.hpp"
#include "vslam/two_view.hpp"

#include <random>

using namespace vslam;

namespace {

std::mt19937_64 rng_with(std::uint64_t seed) { return std::mt19937_64(seed); }

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

SE3Pose random_se3(std::mt19937_64& rng, double max_angle = kPi - 0.1,
                   double t_scale = 2.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vec3 axis = random_unit(rng);
  const double angle = u(rng) * max_angle;
  std::normal_distribution<double> n(0.0, t_scale);
  return SE3Pose(so3_exp(axis * angle), Vec3(n(rng), n(rng), n(rng)));
}

Sim3Transform random_sim3(std::mt19937_64& rng, double max_angle = kPi - 0.1) {
  std::uniform_real_distribution<double> u(0.5, 2.0);
  const SE3Pose T = random_se3(rng, max_angle);
  return Sim3Transform(T.unit_quaternion(), T.translation(), u(rng));
}

}  // namespace

TEST_CASE("se3 compose with inverse is identity") {
  auto rng = rng_with(1);
  for (int i = 0; i < 100; ++i) {
    const SE3Pose T = random_se3(rng);
    CHECK((T * T.inverse()).is_approx(SE3Pose::identity(), 1e-12));
    CHECK((T.inverse() * T).is_approx(SE3Pose::identity(), 1e-12));
  }
}

TEST_CASE("se3 exp/log round trip") {
  auto rng = rng_with(2);
  for (int i = 0; i < 200; ++i) {
    const SE3Pose T = random_se3(rng);
    CHECK(SE3Pose::exp(T.log()).is_approx(T, 1e-10));
  }
  // Small-angle branch.
  Vec6 xi = Vec6::Zero();
  xi << 0.1, -0.2, 0.3, 1e-13, -1e-13, 1e-14;
  CHECK(SE3Pose::exp(xi).log().isApprox(xi, 1e-9));
}

TEST_CASE("se3 composition is associative") {
  auto rng = rng_with(3);
  for (int i = 0; i < 50; ++i) {
    const SE3Pose A = random_se3(rng), B = random_se3(rng), C = random_se3(rng);
    CHECK(((A * B) * C).is_approx(A * (B * C), 1e-10));
  }
}

TEST_CASE("sim3 scaling example") {
  const Sim3Transform S(Mat3::Identity(), Vec3::Zero(), 2.0);
  CHECK((S * Vec3(1, 1, 1) - Vec3(2, 2, 2)).norm() < 1e-15);
}

TEST_CASE("sim3 group laws and exp/log round trip") {
  auto rng = rng_with(4);
  for (int i = 0; i < 200; ++i) {
    const Sim3Transform S = random_sim3(rng);
    CHECK((S * S.inverse()).is_approx(Sim3Transform::identity(), 1e-10));
    CHECK(Sim3Transform::exp(S.log()).is_approx(S, 1e-9));
  }
  for (int i = 0; i < 50; ++i) {
    const Sim3Transform A = random_sim3(rng), B = random_sim3(rng), C = random_sim3(rng);
    CHECK(((A * B) * C).is_approx(A * (B * C), 1e-9));
  }
}

TEST_CASE("sim3 adjoint matches conjugation") {
  auto rng = rng_with(5);
  for (int i = 0; i < 50; ++i) {
    const Sim3Transform S = random_sim3(rng, 2.0);
    Vec7 x;
    for (int k = 0; k < 7; ++k) x(k) = 0.1 * std::uniform_real_distribution<double>(-1, 1)(rng);
    const Sim3Transform lhs = S * Sim3Transform::exp(x) * S.inverse();
    const Sim3Transform rhs = Sim3Transform::exp(S.adjoint() * x);
    CHECK(lhs.is_approx(rhs, 1e-8));
  }
}

TEST_CASE("sim3 inverse right Jacobian matches finite differences") {
  auto rng = rng_with(6);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 50; ++i) {
    Vec7 x;
    for (int k = 0; k < 7; ++k) x(k) = u(rng);
    const Mat7 J = sim3_inv_right_jacobian(x);
    const double h = 1e-6;
    for (int k = 0; k < 7; ++k) {
      Vec7 d = Vec7::Zero();
      d(k) = h;
      const Vec7 fp = (Sim3Transform::exp(x) * Sim3Transform::exp(d)).log();
      const Vec7 fm = (Sim3Transform::exp(x) * Sim3Transform::exp(-d)).log();
      const Vec7 col = (fp - fm) / (2.0 * h);
      CHECK((col - J.col(k)).norm() < 1e-5 * std::max(1.0, J.col(k).norm()));
    }
  }
}

TEST_CASE("triangulate exact two-ray intersection") {
  const SE3Pose pose1;  // camera at origin
  const SE3Pose pose2(Mat3::Identity(), Vec3(-1, 0, 0));  // center at (1,0,0)
  const Vec3 X(0.5, 0.0, 5.0);
  const Vec3 b1 = (pose1 * X).normalized();
  const Vec3 b2 = (pose2 * X).normalized();
  const auto x = triangulate(pose1, pose2, b1, b2);
  REQUIRE(x.has_value());
  CHECK((*x - X).norm() < 1e-10);
}

TEST_CASE("triangulate rejects parallel rays") {
  const SE3Pose pose1;
  const SE3Pose pose2(Mat3::Identity(), Vec3(-1, 0, 0));
  const Vec3 d = Vec3(0.1, 0.2, 1.0).normalized();
  CHECK(!triangulate(pose1, pose2, d, d).has_value());
}

TEST_CASE("triangulate recovers 1000 random noise-free configurations") {
  auto rng = rng_with(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double max_err = 0.0;
  int tested = 0;
  while (tested < 1000) {
    const SE3Pose pose1 = random_se3(rng, 1.0, 1.0);
    SE3Pose pose2 = random_se3(rng, 1.0, 1.0);
    const Vec3 X(3.0 * u(rng), 3.0 * u(rng), 3.0 * u(rng) + 6.0);
    const Vec3 p1 = pose1 * X;
    const Vec3 p2 = pose2 * X;
    if (p1.norm() < 0.5 || p2.norm() < 0.5) continue;
    const auto x = triangulate(pose1, pose2, p1.normalized(), p2.normalized());
    if (!x) continue;  // low parallax draws are allowed to be absent
    max_err = std::max(max_err, (*x - X).norm());
    ++tested;
  }
  CHECK(max_err < 1e-8);
}

TEST_CASE("two-view ransac recovers noise-free relative motion") {
  auto rng = rng_with(8);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Mat3 R_true = so3_exp(Vec3(0.05, -0.1, 0.03));
  const Vec3 t_true = Vec3(1.0, 0.2, -0.1).normalized();
  const SE3Pose T21(R_true, t_true);
  std::vector<Vec3> b1, b2;
  for (int i = 0; i < 100; ++i) {
    const Vec3 X(4.0 * u(rng), 4.0 * u(rng), 6.0 + 3.0 * u(rng));
    b1.push_back(X.normalized());
    b2.push_back((T21 * X).normalized());
  }
  auto r = rng_with(9);
  const auto res = estimate_relative_pose_ransac(b1, b2, {}, r);
  REQUIRE(res.ok());
  CHECK(so3_log(res.relative_pose.rotation() * R_true.transpose()).norm() < 1e-6);
  CHECK(std::acos(std::clamp(res.relative_pose.translation().dot(t_true), -1.0, 1.0)) < 1e-6);
}

TEST_CASE("two-view ransac flags zero motion as degenerate") {
  auto rng = rng_with(10);
  std::vector<Vec3> b;
  for (int i = 0; i < 60; ++i) b.push_back(random_unit(rng));
  auto r = rng_with(11);
  const auto res = estimate_relative_pose_ransac(b, b, {}, r);
  CHECK(res.status == TwoViewResult::Status::Degenerate);
}

TEST_CASE("two-view ransac inlier recall with 30% outliers") {
  auto rng = rng_with(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const SE3Pose T21(so3_exp(Vec3(0.02, 0.08, -0.03)), Vec3(0.8, -0.1, 0.3).normalized());
  std::vector<Vec3> b1, b2;
  std::vector<bool> is_true;
  for (int i = 0; i < 70; ++i) {
    const Vec3 X(4.0 * u(rng), 4.0 * u(rng), 6.0 + 3.0 * u(rng));
    b1.push_back(X.normalized());
    b2.push_back((T21 * X).normalized());
    is_true.push_back(true);
  }
  for (int i = 0; i < 30; ++i) {
    b1.push_back(random_unit(rng));
    b2.push_back(random_unit(rng));
    is_true.push_back(false);
  }
  auto r = rng_with(13);
  const auto res = estimate_relative_pose_ransac(b1, b2, {}, r);
  REQUIRE(res.ok());
  int recalled = 0;
  for (int i = 0; i < 70; ++i) {
    if (res.inlier_mask[i]) ++recalled;
  }
  CHECK(recalled >= 67);  // >= 95% recall of true correspondences
}

TEST_CASE("pnp identity case") {
  auto rng = rng_with(14);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> pts, bearings;
  for (int i = 0; i < 20; ++i) {
    const Vec3 X(2.0 * u(rng), 2.0 * u(rng), 5.0 + 2.0 * u(rng));
    pts.push_back(X);
    bearings.push_back(X.normalized());
  }
  auto r = rng_with(15);
  const auto res = solve_pnp_ransac(bearings, pts, {}, r);
  REQUIRE(res.ok);
  CHECK(res.pose.is_approx(SE3Pose::identity(), 1e-6));
}

TEST_CASE("pnp recovers a known pose from 20 noise-free points") {
  auto rng = rng_with(16);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const SE3Pose pose(so3_exp(Vec3(0.2, -0.3, 0.1)), Vec3(0.4, -0.2, 0.3));
  std::vector<Vec3> pts, bearings;
  for (int i = 0; i < 20; ++i) {
    const Vec3 X(3.0 * u(rng), 3.0 * u(rng), 6.0 + 3.0 * u(rng));
    pts.push_back(X);
    bearings.push_back((pose * X).normalized());
  }
  auto r = rng_with(17);
  const auto res = solve_pnp_ransac(bearings, pts, {}, r);
  REQUIRE(res.ok);
  CHECK(so3_log(res.pose.rotation() * pose.rotation().transpose()).norm() < 1e-6);
  CHECK((res.pose.translation() - pose.translation()).norm() < 1e-6);
}

TEST_CASE("pnp with 50% outliers") {
  auto rng = rng_with(18);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const SE3Pose pose(so3_exp(Vec3(-0.1, 0.2, 0.05)), Vec3(0.1, 0.3, -0.2));
  std::vector<Vec3> pts, bearings;
  for (int i = 0; i < 30; ++i) {
    const Vec3 X(3.0 * u(rng), 3.0 * u(rng), 6.0 + 3.0 * u(rng));
    pts.push_back(X);
    bearings.push_back((pose * X).normalized());
  }
  for (int i = 0; i < 30; ++i) {
    const Vec3 X(3.0 * u(rng), 3.0 * u(rng), 6.0 + 3.0 * u(rng));
    pts.push_back(X);
    bearings.push_back(random_unit(rng));
  }
  auto r = rng_with(19);
  const auto res = solve_pnp_ransac(bearings, pts, {}, r);
  REQUIRE(res.ok);
  CHECK(so3_log(res.pose.rotation() * pose.rotation().transpose()).norm() < 1e-3);
  CHECK((res.pose.translation() - pose.translation()).norm() < 1e-3);
  for (int i = 30; i < 60; ++i) CHECK(!res.inlier_mask[i]);
}
