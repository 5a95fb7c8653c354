#pragma once

#include "vslam/camera.hpp"
#include "vslam/features.hpp"
#include "vslam/io.hpp"
#include "vslam/sim3.hpp"

#include <string>
#include <vector>

namespace vslam {

// Closed-form least-squares similarity (or rigid, with_scale=false) transform
// minimizing sum ||dst - T(src)||^2, via SVD of the cross-covariance with the
// reflection-handling sign correction. Throws std::invalid_argument on fewer
// than 3 pairs or a degenerate (coincident/collinear) configuration.
Sim3Transform umeyama_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                            bool with_scale);

enum class AteAlignment { Sim3, Se3 };

struct AteReport {
  double rmse = 0.0;
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
  Sim3Transform alignment;  // maps estimated positions onto ground truth
  int matched = 0;          // associated pose pairs
};

// Absolute trajectory error: associate timestamps (nearest neighbor within
// 20 ms), align estimated positions to ground truth with the selected
// transform family, report translational error statistics. Throws
// std::invalid_argument with fewer than 3 associations.
AteReport compute_ate(const Trajectory& estimated, const Trajectory& ground_truth,
                      AteAlignment alignment);

// ---------------------------------------------------------------------------
// Synthetic scene generator: deterministic desk-scale ground truth.
// ---------------------------------------------------------------------------
struct SyntheticScene {
  enum class Preset { Orbit, SquareLoop, Line };

  Preset preset = Preset::Orbit;
  int num_frames = 200;
  int num_landmarks = 400;
  CameraModel camera =
      CameraModel::perspective(640, 480, 30.0, 380.0, 380.0, 320.0, 240.0, {});
  double pixel_sigma = 0.0;      // Gaussian pixel noise
  double outlier_rate = 0.0;     // fraction of observations replaced by junk
  int descriptor_noise_bits = 0; // bits flipped per observation
  double drift_fraction = 0.0;   // square loop: odometry drift as a fraction
                                 // of path length
  double max_visible_distance = 40.0;  // landmarks farther away are not seen
  double revolutions = 1.0;  // fraction of the closed path covered; > 1 keeps
                             // going after the loop closes
  // Camera mounting rotation relative to the direction of travel (camera
  // from body); identity means the camera looks along the motion.
  Mat3 mount_rotation = Mat3::Identity();
  std::uint64_t seed = 0;
};

struct SyntheticDataset {
  std::vector<double> timestamps;
  std::vector<FeatureFrame> frames;       // bearings filled, pixel keypoints set
  std::vector<std::vector<int>> labels;   // per keypoint: landmark index, -1 = outlier
  Trajectory ground_truth;                // camera -> world, closed for loops
  Trajectory drifted_odometry;            // camera -> world incl. injected drift
  std::vector<Vec3> landmarks;            // true world positions
  std::vector<Descriptor> landmark_descriptors;
  std::vector<std::string> warnings;      // e.g. FoV coverage problems
};

SyntheticDataset generate_synthetic(const SyntheticScene& scene);

// Writes dataset_dir/timestamps.txt, frame .feat files and groundtruth.txt
// (trajectory text format). Deterministic bytes for a deterministic dataset.
void write_synthetic_dataset(const SyntheticDataset& dataset, const std::string& directory);

}  // namespace vslam
