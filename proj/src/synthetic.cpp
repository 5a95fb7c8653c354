#include "vslam/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

namespace vslam {

namespace {

// Camera attitude looking along `forward` with the image v-axis as close to
// world +y (down) as possible. Returns camera-to-world rotation.
Mat3 look_along(const Vec3& forward) {
  const Vec3 z = forward.normalized();
  Vec3 y = Vec3(0, 1, 0) - z * z.y();
  if (y.norm() < 1e-8) throw std::invalid_argument("synthetic: vertical viewing direction");
  y.normalize();
  const Vec3 x = y.cross(z);
  Mat3 r_wc;
  r_wc.col(0) = x;
  r_wc.col(1) = y;
  r_wc.col(2) = z;
  return r_wc;
}

struct PathSample {
  Vec3 position;
  Vec3 tangent;
};

// Rounded square in the xz-plane, side `side`, corner radius `radius`,
// counterclockwise from the start of the bottom edge's straight section.
class RoundedSquare {
 public:
  RoundedSquare(double side, double radius) : side_(side), r_(radius) {
    straight_ = side_ - 2.0 * r_;
    length_ = 4.0 * straight_ + 2.0 * kPi * r_;
  }

  double length() const { return length_; }

  PathSample at(double s) const {
    s = std::fmod(s, length_);
    if (s < 0.0) s += length_;
    const double quarter = straight_ + 0.5 * kPi * r_;
    const int edge = static_cast<int>(s / quarter);
    const double local = s - edge * quarter;
    // Edge 0 runs along +x, each next edge turns 90 degrees left in xz.
    PathSample sample;
    Vec3 p, t;
    if (local <= straight_) {
      p = Vec3(r_ + local, 0, 0);
      t = Vec3(1, 0, 0);
    } else {
      const double a = (local - straight_) / r_;  // 0..pi/2 around the corner
      p = Vec3(side_ - r_ + r_ * std::sin(a), 0, r_ - r_ * std::cos(a));
      t = Vec3(std::cos(a), 0, std::sin(a));
    }
    // Rotate by 90 degrees per edge around y.
    for (int e = 0; e < edge; ++e) {
      p = Vec3(-p.z() + 0.0, 0, p.x());
      t = Vec3(-t.z(), 0, t.x());
      p.x() += 0.0;
    }
    // The rotation above is about the origin; shift so the square occupies
    // [0, side] x [0, side] for every edge.
    switch (edge) {
      case 0: break;
      case 1: p += Vec3(side_, 0, 0); break;
      case 2: p += Vec3(side_, 0, side_); break;
      case 3: p += Vec3(0, 0, side_); break;
    }
    sample.position = p;
    sample.tangent = t;
    return sample;
  }

 private:
  double side_, r_, straight_, length_;
};

Descriptor random_descriptor(std::mt19937_64& rng) {
  Descriptor d;
  for (auto& w : d.words) w = rng();
  return d;
}

Descriptor with_bit_noise(Descriptor d, int bits, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> bit(0, 255);
  for (int i = 0; i < bits; ++i) {
    const int b = bit(rng);
    d.words[b >> 6] ^= std::uint64_t(1) << (b & 63);
  }
  return d;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticScene& scene) {
  if (scene.num_frames < 2 || scene.num_landmarks < 10) {
    throw std::invalid_argument("synthetic: scene too small");
  }
  std::mt19937_64 rng(scene.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SyntheticDataset out;
  out.landmarks.reserve(scene.num_landmarks);
  out.landmark_descriptors.reserve(scene.num_landmarks);

  constexpr double kSquareSide = 10.0;
  constexpr double kCornerRadius = 3.0;
  constexpr double kOrbitRadius = 6.0;
  constexpr double kLineLength = 10.0;
  const RoundedSquare square(kSquareSide, kCornerRadius);

  // Landmark cloud per preset.
  for (int l = 0; l < scene.num_landmarks; ++l) {
    Vec3 p;
    switch (scene.preset) {
      case SyntheticScene::Preset::Orbit:
        p = Vec3(4.0 * u01(rng) - 2.0, 4.0 * u01(rng) - 2.0, 4.0 * u01(rng) - 2.0);
        break;
      case SyntheticScene::Preset::Line: {
        const double side = u01(rng) < 0.5 ? -3.0 : 3.0;
        p = Vec3(side + 0.4 * gauss(rng), 4.0 * u01(rng) - 2.0,
                 -1.0 + (kLineLength + 5.0) * u01(rng));
        break;
      }
      case SyntheticScene::Preset::SquareLoop: {
        // Walls 3 units outside the square, all four sides.
        const int wall = static_cast<int>(4.0 * u01(rng)) % 4;
        const double along = -3.0 + (kSquareSide + 6.0) * u01(rng);
        const double height = 5.0 * u01(rng) - 2.5;
        switch (wall) {
          case 0: p = Vec3(along, height, -3.0); break;
          case 1: p = Vec3(kSquareSide + 3.0, height, along); break;
          case 2: p = Vec3(along, height, kSquareSide + 3.0); break;
          default: p = Vec3(-3.0, height, along); break;
        }
        break;
      }
    }
    out.landmarks.push_back(p);
    out.landmark_descriptors.push_back(random_descriptor(rng));
  }

  // True camera path.
  const int n = scene.num_frames;
  std::vector<Vec3> centers(n);
  std::vector<Mat3> r_wc(n);
  std::vector<double> arc(n, 0.0);
  double path_length = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f =
        scene.revolutions * static_cast<double>(i) / static_cast<double>(n - 1);
    switch (scene.preset) {
      case SyntheticScene::Preset::Orbit: {
        const double a = 2.0 * kPi * f;
        centers[i] = Vec3(kOrbitRadius * std::sin(a), 0.0, -kOrbitRadius * std::cos(a));
        r_wc[i] = look_along(-centers[i]);  // look at the cloud center
        arc[i] = 2.0 * kPi * kOrbitRadius * f;
        break;
      }
      case SyntheticScene::Preset::Line: {
        centers[i] = Vec3(0, 0, kLineLength * f);
        r_wc[i] = look_along(Vec3(0, 0, 1));
        arc[i] = kLineLength * f;
        break;
      }
      case SyntheticScene::Preset::SquareLoop: {
        const PathSample s = square.at(f * square.length());
        centers[i] = s.position;
        r_wc[i] = look_along(s.tangent);
        arc[i] = f * square.length();
        break;
      }
    }
    r_wc[i] = r_wc[i] * scene.mount_rotation.transpose();
  }
  path_length = arc[n - 1];

  const double fps = scene.camera.fps() > 0.0 ? scene.camera.fps() : 30.0;
  const Vec3 drift_dir(0, -1, 0);
  auto drift_at = [&](double s) { return scene.drift_fraction * s * drift_dir; };

  // First pass: visibility in the true geometry. Drift is frozen per
  // visibility episode: observations of one landmark stay locally consistent,
  // but a revisit after a long absence sees the geometry re-anchored at the
  // current drift — the contradiction a loop closure has to reconcile.
  std::vector<double> first_arc(out.landmarks.size(), -1.0);
  std::vector<std::vector<int>> visible(n);
  for (int i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < out.landmarks.size(); ++l) {
      const Vec3 in_cam = r_wc[i].transpose() * (out.landmarks[l] - centers[i]);
      const double dist = in_cam.norm();
      if (dist < 0.5 || dist > scene.max_visible_distance) continue;
      if (!scene.camera.project(in_cam / dist)) continue;
      visible[i].push_back(static_cast<int>(l));
      if (first_arc[l] < 0.0) first_arc[l] = arc[i];
    }
  }

  // Second pass: synthesize observations in the drifted geometry.
  out.timestamps.resize(n);
  out.frames.resize(n);
  out.labels.resize(n);
  out.ground_truth.resize(n);
  out.drifted_odometry.resize(n);
  std::uniform_real_distribution<double> upx(0.0, scene.camera.width() - 1e-6);
  std::uniform_real_distribution<double> upy(0.0, scene.camera.height() - 1e-6);
  constexpr int kEpisodeGapFrames = 10;
  std::vector<int> last_seen(out.landmarks.size(), -(kEpisodeGapFrames + 2));
  std::vector<double> episode_arc(out.landmarks.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    out.timestamps[i] = static_cast<double>(i) / fps;
    out.ground_truth[i] = {out.timestamps[i],
                           SE3Pose(Quat(r_wc[i]), centers[i])};  // camera -> world
    const Vec3 center_d = centers[i] + drift_at(arc[i]);
    out.drifted_odometry[i] = {out.timestamps[i], SE3Pose(Quat(r_wc[i]), center_d)};

    FeatureFrame& frame = out.frames[i];
    frame.scale_factor = 1.2;
    frame.num_levels = 8;
    for (int l : visible[i]) {
      if (i - last_seen[l] > kEpisodeGapFrames) episode_arc[l] = arc[i];
      last_seen[l] = i;
      const Vec3 lm_d = out.landmarks[l] + drift_at(episode_arc[l]);
      const Vec3 in_cam = r_wc[i].transpose() * (lm_d - center_d);
      const double dist = in_cam.norm();
      if (dist < 1e-9) continue;
      auto px = scene.camera.project(in_cam / dist);
      if (!px) continue;
      int label = l;
      ImagePoint pixel = *px;
      if (scene.outlier_rate > 0.0 && u01(rng) < scene.outlier_rate) {
        pixel = ImagePoint(upx(rng), upy(rng));
        label = -1;
      } else if (scene.pixel_sigma > 0.0) {
        pixel.x() += scene.pixel_sigma * gauss(rng);
        pixel.y() += scene.pixel_sigma * gauss(rng);
        pixel.x() = std::clamp(pixel.x(), 0.0, scene.camera.width() - 1e-6);
        pixel.y() = std::clamp(pixel.y(), 0.0, scene.camera.height() - 1e-6);
      }
      Keypoint kp;
      kp.u = pixel.x();
      kp.v = pixel.y();
      kp.octave = 0;
      kp.angle = 0.0;
      kp.response = 1.0;
      frame.keypoints.push_back(kp);
      frame.bearings.push_back(scene.camera.unproject(pixel));
      frame.descriptors.push_back(
          with_bit_noise(out.landmark_descriptors[l], scene.descriptor_noise_bits, rng));
      out.labels[i].push_back(label);
    }
  }

  int never_visible = 0;
  for (double s : first_arc) {
    if (s < 0.0) ++never_visible;
  }
  if (never_visible > 0) {
    out.warnings.push_back("camera field of view never covers " +
                           std::to_string(never_visible) + " of " +
                           std::to_string(out.landmarks.size()) + " landmarks");
  }
  (void)path_length;
  return out;
}

void write_synthetic_dataset(const SyntheticDataset& dataset, const std::string& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  std::ofstream ts(directory + "/timestamps.txt");
  if (!ts) throw std::runtime_error("synthetic: cannot write " + directory + "/timestamps.txt");
  char name[64];
  for (std::size_t i = 0; i < dataset.frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%05zu.feat", i);
    write_feature_frame(dataset.frames[i], directory + "/" + name);
    char line[96];
    std::snprintf(line, sizeof(line), "%.9f %s\n", dataset.timestamps[i], name);
    ts << line;
  }
  ts.close();
  write_trajectory(dataset.ground_truth, directory + "/groundtruth.txt");
  if (!dataset.drifted_odometry.empty()) {
    write_trajectory(dataset.drifted_odometry, directory + "/odometry.txt");
  }
}

}  // namespace vslam
