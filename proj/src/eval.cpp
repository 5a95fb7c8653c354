#include "vslam/eval.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <stdexcept>

namespace vslam {

Sim3Transform umeyama_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                            bool with_scale) {
  if (src.size() != dst.size()) {
    throw std::invalid_argument("umeyama: point lists differ in size");
  }
  const std::size_t n = src.size();
  if (n < 3) throw std::invalid_argument("umeyama: need at least 3 point pairs");

  Vec3 mu_src = Vec3::Zero(), mu_dst = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_src += src[i];
    mu_dst += dst[i];
  }
  mu_src /= static_cast<double>(n);
  mu_dst /= static_cast<double>(n);

  double var_src = 0.0;
  Mat3 sigma = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 ds = src[i] - mu_src;
    const Vec3 dd = dst[i] - mu_dst;
    var_src += ds.squaredNorm();
    sigma += dd * ds.transpose();
  }
  var_src /= static_cast<double>(n);
  sigma /= static_cast<double>(n);

  Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 d = svd.singularValues();
  // Coincident (rank 0) or collinear (rank 1) clouds cannot pin a rotation.
  if (d(1) < 1e-12 * std::max(1.0, d(0))) {
    throw std::invalid_argument("umeyama: degenerate point configuration");
  }
  Vec3 s = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2) = -1.0;
  const Mat3 R = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
  double scale = 1.0;
  if (with_scale) {
    if (var_src < 1e-300) throw std::invalid_argument("umeyama: degenerate point configuration");
    scale = d.dot(s) / var_src;
    if (scale <= 0.0) throw std::invalid_argument("umeyama: nonpositive scale");
  }
  const Vec3 t = mu_dst - scale * (R * mu_src);
  return Sim3Transform(R, t, scale);
}

AteReport compute_ate(const Trajectory& estimated, const Trajectory& ground_truth,
                      AteAlignment alignment) {
  constexpr double kMaxAssocDt = 0.020;  // seconds
  std::vector<Vec3> est, gt;
  std::size_t j = 0;
  for (const auto& e : estimated) {
    while (j + 1 < ground_truth.size() &&
           std::abs(ground_truth[j + 1].timestamp - e.timestamp) <=
               std::abs(ground_truth[j].timestamp - e.timestamp)) {
      ++j;
    }
    if (ground_truth.empty()) break;
    if (std::abs(ground_truth[j].timestamp - e.timestamp) <= kMaxAssocDt) {
      est.push_back(e.pose.translation());
      gt.push_back(ground_truth[j].pose.translation());
    }
  }
  if (est.size() < 3) {
    throw std::invalid_argument("ate: fewer than 3 associated pose pairs");
  }

  AteReport report;
  report.matched = static_cast<int>(est.size());
  report.alignment = umeyama_align(est, gt, alignment == AteAlignment::Sim3);

  std::vector<double> errors;
  errors.reserve(est.size());
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double e = (gt[i] - report.alignment.apply(est[i])).norm();
    errors.push_back(e);
    sum += e;
    sum_sq += e * e;
    report.max = std::max(report.max, e);
  }
  report.mean = sum / static_cast<double>(errors.size());
  report.rmse = std::sqrt(sum_sq / static_cast<double>(errors.size()));
  std::sort(errors.begin(), errors.end());
  const std::size_t m = errors.size();
  report.median = m % 2 ? errors[m / 2] : 0.5 * (errors[m / 2 - 1] + errors[m / 2]);
  return report;
}

}  // namespace vslam
