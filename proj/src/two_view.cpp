#include "vslam/two_view.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>

namespace vslam {

std::optional<Vec3> triangulate(const SE3Pose& pose1, const SE3Pose& pose2,
                                const Vec3& b1, const Vec3& b2,
                                const TriangulationParams& params) {
  const SE3Pose inv1 = pose1.inverse();
  const SE3Pose inv2 = pose2.inverse();
  const Vec3 c1 = inv1.translation();
  const Vec3 c2 = inv2.translation();
  const Vec3 d1 = (inv1.rotation() * b1).normalized();
  const Vec3 d2 = (inv2.rotation() * b2).normalized();

  const double cos_parallax = std::clamp(d1.dot(d2), -1.0, 1.0);
  if (std::acos(std::abs(cos_parallax)) < deg2rad(params.min_parallax_deg)) {
    return std::nullopt;
  }

  // Closest point between the two rays (midpoint method).
  Eigen::Matrix<double, 3, 2> A;
  A.col(0) = d1;
  A.col(1) = -d2;
  const Vec2 st = A.colPivHouseholderQr().solve(c2 - c1);
  const Vec3 p1 = c1 + st(0) * d1;
  const Vec3 p2 = c2 + st(1) * d2;
  const Vec3 x = 0.5 * (p1 + p2);

  // Positive depth along both bearings.
  if ((pose1 * x).dot(b1) <= 0.0 || (pose2 * x).dot(b2) <= 0.0) return std::nullopt;
  return x;
}

Mat3 essential_from_pose(const SE3Pose& pose_2_from_1) {
  return skew(pose_2_from_1.translation().normalized()) * pose_2_from_1.rotation();
}

double epipolar_angle(const Mat3& E, const Vec3& b1, const Vec3& b2) {
  double worst = 0.0;
  const Vec3 n2 = E * b1;
  if (n2.norm() > 1e-15) {
    worst = std::max(worst, std::asin(std::clamp(std::abs(b2.dot(n2)) / n2.norm(), 0.0, 1.0)));
  }
  const Vec3 n1 = E.transpose() * b2;
  if (n1.norm() > 1e-15) {
    worst = std::max(worst, std::asin(std::clamp(std::abs(b1.dot(n1)) / n1.norm(), 0.0, 1.0)));
  }
  return worst;
}

namespace {

Mat3 eight_point(const std::vector<Vec3>& b1, const std::vector<Vec3>& b2,
                 const std::vector<int>& idx) {
  Eigen::MatrixXd A(static_cast<int>(idx.size()), 9);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Vec3& p = b1[idx[r]];
    const Vec3& q = b2[idx[r]];
    A.row(static_cast<int>(r)) << q.x() * p.x(), q.x() * p.y(), q.x() * p.z(),
        q.y() * p.x(), q.y() * p.y(), q.y() * p.z(), q.z() * p.x(), q.z() * p.y(),
        q.z() * p.z();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd e = svd.matrixV().col(8);
  Mat3 E;
  E << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  // Enforce the essential-matrix singular-value structure (1, 1, 0).
  Eigen::JacobiSVD<Mat3> esvd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s(1.0, 1.0, 0.0);
  return esvd.matrixU() * s.asDiagonal() * esvd.matrixV().transpose();
}

std::array<SE3Pose, 4> decompose_essential(const Mat3& E) {
  Eigen::JacobiSVD<Mat3> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU();
  Mat3 V = svd.matrixV();
  if (U.determinant() < 0.0) U.col(2) *= -1.0;
  if (V.determinant() < 0.0) V.col(2) *= -1.0;
  Mat3 W;
  W << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Mat3 R1 = U * W * V.transpose();
  const Mat3 R2 = U * W.transpose() * V.transpose();
  const Vec3 t = U.col(2);
  return {SE3Pose(R1, t), SE3Pose(R1, -t), SE3Pose(R2, t), SE3Pose(R2, -t)};
}

}  // namespace

TwoViewResult estimate_relative_pose_ransac(const std::vector<Vec3>& b1,
                                            const std::vector<Vec3>& b2,
                                            const TwoViewParams& params,
                                            std::mt19937_64& rng) {
  TwoViewResult result;
  const int n = static_cast<int>(b1.size());
  result.inlier_mask.assign(n, 0);
  result.points.assign(n, std::nullopt);
  if (n < 8) return result;

  const double threshold = deg2rad(params.epipolar_threshold_deg);
  std::vector<int> all_idx(n);
  std::iota(all_idx.begin(), all_idx.end(), 0);

  Mat3 best_E = Mat3::Zero();
  int best_count = -1;
  std::vector<char> best_mask(n, 0);
  std::uniform_int_distribution<int> pick(0, n - 1);

  for (int iter = 0; iter < params.ransac_iterations; ++iter) {
    std::vector<int> sample;
    while (sample.size() < 8) {
      const int c = pick(rng);
      if (std::find(sample.begin(), sample.end(), c) == sample.end()) sample.push_back(c);
    }
    const Mat3 E = eight_point(b1, b2, sample);
    int count = 0;
    std::vector<char> mask(n, 0);
    for (int i = 0; i < n; ++i) {
      if (epipolar_angle(E, b1[i], b2[i]) < threshold) {
        mask[i] = 1;
        ++count;
      }
    }
    if (count > best_count) {
      best_count = count;
      best_E = E;
      best_mask = mask;
    }
  }
  if (best_count < std::max(8, params.min_inliers)) {
    result.status = TwoViewResult::Status::InsufficientInliers;
    return result;
  }

  // Refit on the consensus set.
  std::vector<int> inlier_idx;
  for (int i = 0; i < n; ++i) {
    if (best_mask[i]) inlier_idx.push_back(i);
  }
  const Mat3 E = eight_point(b1, b2, inlier_idx);
  std::vector<char> mask(n, 0);
  inlier_idx.clear();
  for (int i = 0; i < n; ++i) {
    if (epipolar_angle(E, b1[i], b2[i]) < threshold) {
      mask[i] = 1;
      inlier_idx.push_back(i);
    }
  }
  if (static_cast<int>(inlier_idx.size()) < std::max(8, params.min_inliers)) {
    result.status = TwoViewResult::Status::InsufficientInliers;
    return result;
  }

  // Disambiguate the four decompositions by cheirality.
  const auto candidates = decompose_essential(E);
  const SE3Pose identity;
  TriangulationParams tri{params.min_parallax_deg};
  int best_pose = -1;
  int best_cheirality = -1;
  for (int c = 0; c < 4; ++c) {
    int good = 0;
    for (int i : inlier_idx) {
      if (triangulate(identity, candidates[c], b1[i], b2[i], tri)) ++good;
    }
    if (good > best_cheirality) {
      best_cheirality = good;
      best_pose = c;
    }
  }
  const SE3Pose pose = candidates[best_pose];

  // Final triangulation; the parallax check doubles as degeneracy detection.
  std::vector<double> parallaxes;
  int valid = 0;
  for (int i : inlier_idx) {
    const auto x = triangulate(identity, pose, b1[i], b2[i], tri);
    if (x) {
      result.points[i] = x;
      result.inlier_mask[i] = 1;
      ++valid;
      const Vec3 d2 = (pose.inverse().rotation() * b2[i]).normalized();
      parallaxes.push_back(std::acos(std::clamp(std::abs(b1[i].dot(d2)), 0.0, 1.0)));
    }
  }
  if (valid < std::max(8, params.min_inliers) || parallaxes.empty()) {
    result.inlier_mask.assign(n, 0);
    result.points.assign(n, std::nullopt);
    result.status = TwoViewResult::Status::Degenerate;
    return result;
  }
  std::nth_element(parallaxes.begin(), parallaxes.begin() + parallaxes.size() / 2,
                   parallaxes.end());
  if (parallaxes[parallaxes.size() / 2] < deg2rad(params.min_parallax_deg)) {
    result.status = TwoViewResult::Status::Degenerate;
    return result;
  }

  result.relative_pose = SE3Pose(pose.unit_quaternion(), pose.translation().normalized());
  result.status = TwoViewResult::Status::Ok;
  return result;
}

}  // namespace vslam
