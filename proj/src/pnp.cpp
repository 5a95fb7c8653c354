#include "vslam/pnp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>

namespace vslam {

namespace {

double ray_angle(const SE3Pose& pose, const Vec3& bearing, const Vec3& world_point) {
  const Vec3 p = pose * world_point;
  const double n = p.norm();
  if (n < 1e-12) return kPi;
  const double c = std::clamp(bearing.dot(p) / n, -1.0, 1.0);
  return std::acos(c);
}

// Pose-only Gauss-Newton on tangent-plane residuals of the bearings.
SE3Pose refine(const SE3Pose& init, const std::vector<Vec3>& bearings,
               const std::vector<Vec3>& world_points, const std::vector<int>& idx) {
  SE3Pose pose = init;
  for (int iter = 0; iter < 10; ++iter) {
    Mat6 H = Mat6::Zero();
    Vec6 g = Vec6::Zero();
    for (int i : idx) {
      const Vec3 p = pose * world_points[i];
      const double n = p.norm();
      if (n < 1e-12) continue;
      const Vec3 phat = p / n;
      const auto [t1, t2] = tangent_basis(bearings[i]);
      Vec2 r(t1.dot(phat), t2.dot(phat));
      Mat23 T;
      T.row(0) = t1.transpose();
      T.row(1) = t2.transpose();
      const Mat3 dphat = (Mat3::Identity() - phat * phat.transpose()) / n;
      Mat36 dp;
      dp.leftCols<3>() = Mat3::Identity();
      dp.rightCols<3>() = -skew(p);
      const Mat26 J = T * dphat * dp;
      H += J.transpose() * J;
      g += J.transpose() * r;
    }
    const Vec6 delta = H.ldlt().solve(-g);
    if (!delta.allFinite()) break;
    pose = SE3Pose::exp(delta) * pose;
    if (delta.norm() < 1e-14) break;
  }
  return pose;
}

}  // namespace

std::optional<SE3Pose> pnp_linear(const std::vector<Vec3>& bearings,
                                  const std::vector<Vec3>& world_points,
                                  const std::vector<int>& idx) {
  if (idx.size() < 6) return std::nullopt;
  // [b]x (R X + t) = 0, linear in the 12 entries of [R | t].
  Eigen::MatrixXd A(3 * static_cast<int>(idx.size()), 12);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Mat3 B = skew(bearings[idx[r]]);
    const Vec3& X = world_points[idx[r]];
    for (int row = 0; row < 3; ++row) {
      for (int k = 0; k < 3; ++k) {
        A(3 * static_cast<int>(r) + row, 4 * k + 0) = B(row, k) * X.x();
        A(3 * static_cast<int>(r) + row, 4 * k + 1) = B(row, k) * X.y();
        A(3 * static_cast<int>(r) + row, 4 * k + 2) = B(row, k) * X.z();
        A(3 * static_cast<int>(r) + row, 4 * k + 3) = B(row, k);
      }
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd m = svd.matrixV().col(11);
  Mat3 Rm;
  Vec3 t;
  for (int k = 0; k < 3; ++k) {
    Rm.row(k) << m(4 * k), m(4 * k + 1), m(4 * k + 2);
    t(k) = m(4 * k + 3);
  }
  const double det = Rm.determinant();
  if (std::abs(det) < 1e-15) return std::nullopt;
  const double lambda = std::copysign(std::cbrt(std::abs(det)), det);
  Rm /= lambda;
  t /= lambda;
  // Nearest rotation.
  Eigen::JacobiSVD<Mat3> rsvd(Rm, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 R = rsvd.matrixU() * rsvd.matrixV().transpose();
  if (R.determinant() < 0.0) {
    Mat3 U = rsvd.matrixU();
    U.col(2) *= -1.0;
    R = U * rsvd.matrixV().transpose();
  }
  return SE3Pose(R, t);
}

PnpResult solve_pnp_ransac(const std::vector<Vec3>& bearings,
                           const std::vector<Vec3>& world_points,
                           const PnpParams& params, std::mt19937_64& rng) {
  PnpResult result;
  const int n = static_cast<int>(bearings.size());
  result.inlier_mask.assign(n, 0);
  if (n < 6) return result;

  const double threshold = deg2rad(params.inlier_threshold_deg);
  std::uniform_int_distribution<int> pick(0, n - 1);
  int best_count = -1;
  SE3Pose best_pose;
  std::vector<char> best_mask(n, 0);

  for (int iter = 0; iter < params.ransac_iterations; ++iter) {
    std::vector<int> sample;
    while (sample.size() < 6) {
      const int c = pick(rng);
      if (std::find(sample.begin(), sample.end(), c) == sample.end()) sample.push_back(c);
    }
    const auto pose = pnp_linear(bearings, world_points, sample);
    if (!pose) continue;
    int count = 0;
    std::vector<char> mask(n, 0);
    for (int i = 0; i < n; ++i) {
      if (ray_angle(*pose, bearings[i], world_points[i]) < threshold) {
        mask[i] = 1;
        ++count;
      }
    }
    if (count > best_count) {
      best_count = count;
      best_pose = *pose;
      best_mask = mask;
    }
  }
  if (best_count < std::max(6, params.min_inliers)) return result;

  std::vector<int> inliers;
  for (int i = 0; i < n; ++i) {
    if (best_mask[i]) inliers.push_back(i);
  }
  SE3Pose pose = refine(best_pose, bearings, world_points, inliers);

  // Re-score after refinement.
  inliers.clear();
  std::fill(result.inlier_mask.begin(), result.inlier_mask.end(), 0);
  for (int i = 0; i < n; ++i) {
    if (ray_angle(pose, bearings[i], world_points[i]) < threshold) {
      result.inlier_mask[i] = 1;
      inliers.push_back(i);
    }
  }
  if (static_cast<int>(inliers.size()) < std::max(6, params.min_inliers)) {
    result.inlier_mask.assign(n, 0);
    return result;
  }
  result.pose = refine(pose, bearings, world_points, inliers);
  result.ok = true;
  return result;
}

}  // namespace vslam
