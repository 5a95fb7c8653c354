#pragma once

#include "vslam/math.hpp"

#include <array>
#include <optional>
#include <stdexcept>
#include <string>

namespace vslam {

// Unit vector from the camera center toward an observed point.
// Convention: x right, y down, z forward.
using Bearing = Vec3;
// Continuous pixel location (u right, v down).
using ImagePoint = Vec2;

enum class CameraKind { Perspective, Fisheye, Equirectangular };

std::string to_string(CameraKind kind);
CameraKind camera_kind_from_string(const std::string& s);

// Intrinsics plus projection semantics for one camera. Immutable after
// construction; everything downstream consumes bearings so the rest of the
// system never branches on the model kind.
class CameraModel {
 public:
  static CameraModel perspective(int width, int height, double fps, double fx,
                                 double fy, double cx, double cy,
                                 const std::array<double, 5>& dist = {});
  static CameraModel fisheye(int width, int height, double fps, double fx,
                             double fy, double cx, double cy,
                             const std::array<double, 4>& dist = {});
  static CameraModel equirectangular(int width, int height, double fps);

  CameraKind kind() const { return kind_; }
  int width() const { return width_; }
  int height() const { return height_; }
  double fps() const { return fps_; }
  double fx() const { return fx_; }
  double fy() const { return fy_; }
  double cx() const { return cx_; }
  double cy() const { return cy_; }
  const std::array<double, 5>& distortion() const { return dist_; }
  const std::string& color_order() const { return color_order_; }

  // Pixel location of a bearing, or absent when outside the field of view
  // (or outside the image bounds).
  std::optional<ImagePoint> project(const Bearing& bearing) const;

  // Unit bearing whose projection returns the input pixel. Throws
  // std::runtime_error when the undistortion iteration fails to converge.
  Bearing unproject(const ImagePoint& pixel) const;

  // d(u,v)/d(X,Y,Z) of the projection at a 3D point in camera coordinates.
  // Absent when the point does not project into the field of view.
  std::optional<Mat23> projection_jacobian(const Vec3& point_in_camera) const;

  bool contains(const ImagePoint& p) const {
    return p.x() >= 0.0 && p.x() < width_ && p.y() >= 0.0 && p.y() < height_;
  }

  // Half field-of-view limit used by fisheye projection.
  double max_incidence_angle() const { return max_theta_; }

  bool operator==(const CameraModel& o) const;

 private:
  CameraModel() = default;
  void validate() const;

  CameraKind kind_ = CameraKind::Perspective;
  int width_ = 0;
  int height_ = 0;
  double fps_ = 0.0;
  double fx_ = 0.0, fy_ = 0.0, cx_ = 0.0, cy_ = 0.0;
  // Perspective: k1 k2 p1 p2 k3. Fisheye: k1 k2 k3 k4 (last slot unused).
  std::array<double, 5> dist_ = {0, 0, 0, 0, 0};
  double max_theta_ = 0.0;
  std::string color_order_ = "Gray";
};

}  // namespace vslam
