#include "vslam/camera.hpp"

namespace vslam {

namespace {
constexpr int kUndistortMaxIters = 20;
constexpr double kUndistortTol = 1e-10;
}  // namespace

std::string to_string(CameraKind kind) {
  switch (kind) {
    case CameraKind::Perspective: return "perspective";
    case CameraKind::Fisheye: return "fisheye";
    case CameraKind::Equirectangular: return "equirectangular";
  }
  return "unknown";
}

CameraKind camera_kind_from_string(const std::string& s) {
  if (s == "perspective") return CameraKind::Perspective;
  if (s == "fisheye") return CameraKind::Fisheye;
  if (s == "equirectangular") return CameraKind::Equirectangular;
  throw std::runtime_error("unknown camera kind: " + s);
}

void CameraModel::validate() const {
  if (width_ <= 0 || height_ <= 0) throw std::runtime_error("camera: non-positive image size");
  if (fps_ <= 0.0) throw std::runtime_error("camera: non-positive fps");
  if (kind_ == CameraKind::Equirectangular) {
    if (width_ != 2 * height_) throw std::runtime_error("camera: equirectangular requires width == 2 * height");
    return;
  }
  if (fx_ <= 0.0 || fy_ <= 0.0) throw std::runtime_error("camera: non-positive focal length");
  if (cx_ < 0.0 || cx_ >= width_ || cy_ < 0.0 || cy_ >= height_) {
    throw std::runtime_error("camera: principal point outside image");
  }
}

CameraModel CameraModel::perspective(int width, int height, double fps, double fx,
                                     double fy, double cx, double cy,
                                     const std::array<double, 5>& dist) {
  CameraModel m;
  m.kind_ = CameraKind::Perspective;
  m.width_ = width;
  m.height_ = height;
  m.fps_ = fps;
  m.fx_ = fx;
  m.fy_ = fy;
  m.cx_ = cx;
  m.cy_ = cy;
  m.dist_ = dist;
  m.max_theta_ = 0.5 * kPi;
  m.validate();
  return m;
}

CameraModel CameraModel::fisheye(int width, int height, double fps, double fx,
                                 double fy, double cx, double cy,
                                 const std::array<double, 4>& dist) {
  CameraModel m;
  m.kind_ = CameraKind::Fisheye;
  m.width_ = width;
  m.height_ = height;
  m.fps_ = fps;
  m.fx_ = fx;
  m.fy_ = fy;
  m.cx_ = cx;
  m.cy_ = cy;
  m.dist_ = {dist[0], dist[1], dist[2], dist[3], 0.0};
  m.max_theta_ = 0.5 * kPi;
  m.validate();
  return m;
}

CameraModel CameraModel::equirectangular(int width, int height, double fps) {
  CameraModel m;
  m.kind_ = CameraKind::Equirectangular;
  m.width_ = width;
  m.height_ = height;
  m.fps_ = fps;
  m.max_theta_ = kPi;
  m.validate();
  return m;
}

bool CameraModel::operator==(const CameraModel& o) const {
  return kind_ == o.kind_ && width_ == o.width_ && height_ == o.height_ &&
         fps_ == o.fps_ && fx_ == o.fx_ && fy_ == o.fy_ && cx_ == o.cx_ &&
         cy_ == o.cy_ && dist_ == o.dist_ && color_order_ == o.color_order_;
}

std::optional<ImagePoint> CameraModel::project(const Bearing& bearing) const {
  const Vec3 b = bearing.normalized();
  switch (kind_) {
    case CameraKind::Perspective: {
      if (b.z() <= 0.0) return std::nullopt;
      const double mx = b.x() / b.z();
      const double my = b.y() / b.z();
      const double r2 = mx * mx + my * my;
      const double radial = 1.0 + dist_[0] * r2 + dist_[1] * r2 * r2 + dist_[4] * r2 * r2 * r2;
      const double xd = mx * radial + 2.0 * dist_[2] * mx * my + dist_[3] * (r2 + 2.0 * mx * mx);
      const double yd = my * radial + dist_[2] * (r2 + 2.0 * my * my) + 2.0 * dist_[3] * mx * my;
      const ImagePoint p(fx_ * xd + cx_, fy_ * yd + cy_);
      if (!contains(p)) return std::nullopt;
      return p;
    }
    case CameraKind::Fisheye: {
      const double r = std::hypot(b.x(), b.y());
      const double theta = std::atan2(r, b.z());
      if (theta > max_theta_) return std::nullopt;
      const double t2 = theta * theta;
      const double theta_d =
          theta * (1.0 + t2 * (dist_[0] + t2 * (dist_[1] + t2 * (dist_[2] + t2 * dist_[3]))));
      double xd = 0.0, yd = 0.0;
      if (r > 1e-15) {
        xd = theta_d * b.x() / r;
        yd = theta_d * b.y() / r;
      }
      const ImagePoint p(fx_ * xd + cx_, fy_ * yd + cy_);
      if (!contains(p)) return std::nullopt;
      return p;
    }
    case CameraKind::Equirectangular: {
      const double theta = std::atan2(b.x(), b.z());
      const double phi = std::asin(std::clamp(-b.y(), -1.0, 1.0));
      double u = width_ * (0.5 + theta / (2.0 * kPi));
      if (u >= width_) u -= width_;
      double v = height_ * (0.5 - phi / kPi);
      v = std::min(v, std::nextafter(static_cast<double>(height_), 0.0));
      return ImagePoint(u, v);
    }
  }
  return std::nullopt;
}

Bearing CameraModel::unproject(const ImagePoint& pixel) const {
  switch (kind_) {
    case CameraKind::Perspective: {
      const double dx = (pixel.x() - cx_) / fx_;
      const double dy = (pixel.y() - cy_) / fy_;
      double mx = dx, my = dy;
      bool converged = false;
      // Newton iteration on the distortion map.
      for (int i = 0; i < kUndistortMaxIters; ++i) {
        const double r2 = mx * mx + my * my;
        const double radial = 1.0 + dist_[0] * r2 + dist_[1] * r2 * r2 + dist_[4] * r2 * r2 * r2;
        const double g = dist_[0] + 2.0 * dist_[1] * r2 + 3.0 * dist_[4] * r2 * r2;
        const double fxv = mx * radial + 2.0 * dist_[2] * mx * my + dist_[3] * (r2 + 2.0 * mx * mx) - dx;
        const double fyv = my * radial + dist_[2] * (r2 + 2.0 * my * my) + 2.0 * dist_[3] * mx * my - dy;
        Mat2 D;
        D(0, 0) = radial + 2.0 * g * mx * mx + 2.0 * dist_[2] * my + 6.0 * dist_[3] * mx;
        D(0, 1) = 2.0 * g * mx * my + 2.0 * dist_[2] * mx + 2.0 * dist_[3] * my;
        D(1, 0) = D(0, 1);
        D(1, 1) = radial + 2.0 * g * my * my + 6.0 * dist_[2] * my + 2.0 * dist_[3] * mx;
        const Vec2 step = D.inverse() * Vec2(fxv, fyv);
        mx -= step.x();
        my -= step.y();
        if (step.norm() < kUndistortTol) {
          converged = true;
          break;
        }
      }
      if (!converged) throw std::runtime_error("camera: undistortion did not converge");
      return Vec3(mx, my, 1.0).normalized();
    }
    case CameraKind::Fisheye: {
      const double mx = (pixel.x() - cx_) / fx_;
      const double my = (pixel.y() - cy_) / fy_;
      const double theta_d = std::hypot(mx, my);
      double theta = theta_d;
      if (theta_d > 1e-15) {
        bool converged = false;
        for (int i = 0; i < kUndistortMaxIters; ++i) {
          const double t2 = theta * theta;
          const double poly =
              1.0 + t2 * (dist_[0] + t2 * (dist_[1] + t2 * (dist_[2] + t2 * dist_[3])));
          const double next = theta_d / poly;
          const double step = std::abs(next - theta);
          theta = next;
          if (step < kUndistortTol) {
            converged = true;
            break;
          }
        }
        if (!converged) throw std::runtime_error("camera: undistortion did not converge");
      }
      if (theta_d < 1e-15) return Vec3(0.0, 0.0, 1.0);
      const double s = std::sin(theta) / theta_d;
      return Vec3(mx * s, my * s, std::cos(theta)).normalized();
    }
    case CameraKind::Equirectangular: {
      const double theta = 2.0 * kPi * (pixel.x() / width_ - 0.5);
      const double phi = kPi * (0.5 - pixel.y() / height_);
      const double cp = std::cos(phi);
      return Vec3(cp * std::sin(theta), -std::sin(phi), cp * std::cos(theta));
    }
  }
  throw std::runtime_error("camera: unknown kind");
}

std::optional<Mat23> CameraModel::projection_jacobian(const Vec3& p) const {
  if (!project(p.normalized())) return std::nullopt;
  Mat23 J;
  switch (kind_) {
    case CameraKind::Perspective: {
      const double x = p.x(), y = p.y(), z = p.z();
      const double iz = 1.0 / z;
      const double mx = x * iz, my = y * iz;
      const double r2 = mx * mx + my * my;
      const double radial = 1.0 + dist_[0] * r2 + dist_[1] * r2 * r2 + dist_[4] * r2 * r2 * r2;
      const double g = dist_[0] + 2.0 * dist_[1] * r2 + 3.0 * dist_[4] * r2 * r2;
      Mat2 D;
      D(0, 0) = radial + 2.0 * g * mx * mx + 2.0 * dist_[2] * my + 6.0 * dist_[3] * mx;
      D(0, 1) = 2.0 * g * mx * my + 2.0 * dist_[2] * mx + 2.0 * dist_[3] * my;
      D(1, 0) = 2.0 * g * mx * my + 2.0 * dist_[2] * mx + 2.0 * dist_[3] * my;
      D(1, 1) = radial + 2.0 * g * my * my + 6.0 * dist_[2] * my + 2.0 * dist_[3] * mx;
      Mat23 M;
      M << iz, 0.0, -x * iz * iz, 0.0, iz, -y * iz * iz;
      Mat2 F = Mat2::Zero();
      F(0, 0) = fx_;
      F(1, 1) = fy_;
      J = F * D * M;
      return J;
    }
    case CameraKind::Fisheye: {
      const double x = p.x(), y = p.y(), z = p.z();
      const double r = std::hypot(x, y);
      const double rho2 = r * r + z * z;
      const double theta = std::atan2(r, z);
      const double t2 = theta * theta;
      const double theta_d =
          theta * (1.0 + t2 * (dist_[0] + t2 * (dist_[1] + t2 * (dist_[2] + t2 * dist_[3]))));
      const double dtheta_d =
          1.0 + t2 * (3.0 * dist_[0] + t2 * (5.0 * dist_[1] + t2 * (7.0 * dist_[2] + t2 * 9.0 * dist_[3])));
      if (r < 1e-9) {
        // On-axis limit: equidistant model reduces to the pinhole Jacobian.
        J << fx_ / z, 0.0, 0.0, 0.0, fy_ / z, 0.0;
        return J;
      }
      // theta derivatives
      const Vec3 dtheta((z / rho2) * (x / r), (z / rho2) * (y / r), -r / rho2);
      const double ir = 1.0 / r;
      const double ir3 = ir * ir * ir;
      // d(x/r), d(y/r)
      const Vec3 dxr(ir - x * x * ir3, -x * y * ir3, 0.0);
      const Vec3 dyr(-x * y * ir3, ir - y * y * ir3, 0.0);
      const Vec3 du = fx_ * (dtheta_d * (x * ir) * dtheta + theta_d * dxr);
      const Vec3 dv = fy_ * (dtheta_d * (y * ir) * dtheta + theta_d * dyr);
      J.row(0) = du.transpose();
      J.row(1) = dv.transpose();
      return J;
    }
    case CameraKind::Equirectangular: {
      const double x = p.x(), y = p.y(), z = p.z();
      const double rxz2 = x * x + z * z;
      const double rxz = std::sqrt(rxz2);
      const double rho2 = rxz2 + y * y;
      const Vec3 dtheta(z / rxz2, 0.0, -x / rxz2);
      const Vec3 dphi(y * x / (rho2 * rxz), -rxz / rho2, y * z / (rho2 * rxz));
      J.row(0) = (width_ / (2.0 * kPi)) * dtheta.transpose();
      J.row(1) = (-height_ / kPi) * dphi.transpose();
      return J;
    }
  }
  return std::nullopt;
}

}  // namespace vslam
