#pragma once

#include "vslam/camera.hpp"
#include "vslam/features.hpp"
#include "vslam/image.hpp"
#include "vslam/map.hpp"
#include "vslam/se3.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace vslam {

// ---------------------------------------------------------------------------
// Configuration: flat dotted-key text, one "section.key value" per line.
// '#' starts a comment; blank lines ignored. Unknown keys are rejected.
// ---------------------------------------------------------------------------
class Config {
 public:
  static Config parse(const std::string& text);
  static Config parse_file(const std::string& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

// Builds the camera from the camera.* section; throws std::invalid_argument
// naming any missing required key.
CameraModel camera_from_config(const Config& config);

// ---------------------------------------------------------------------------
// Trajectory text format: "timestamp tx ty tz qx qy qz qw" per line, ASCII
// decimal with 17 significant digits.
// ---------------------------------------------------------------------------
struct TrajectoryEntry {
  double timestamp = 0.0;
  SE3Pose pose;  // camera -> world (position = translation)
};
using Trajectory = std::vector<TrajectoryEntry>;

void write_trajectory(const Trajectory& trajectory, const std::string& path);
Trajectory read_trajectory(const std::string& path);

// ---------------------------------------------------------------------------
// Datasets: a directory with timestamps.txt ("timestamp filename" per line,
// strictly increasing) and either PGM images or .feat feature files.
// ---------------------------------------------------------------------------
class Dataset {
 public:
  static Dataset open(const std::string& directory);

  std::size_t size() const { return entries_.size(); }
  double timestamp(std::size_t i) const { return entries_.at(i).first; }
  const std::string& frame_path(std::size_t i) const { return entries_.at(i).second; }
  bool has_feature_frames() const { return feature_frames_; }

  Image image(std::size_t i) const;          // throws naming the file
  FeatureFrame features(std::size_t i) const;

 private:
  std::vector<std::pair<double, std::string>> entries_;  // timestamp, full path
  bool feature_frames_ = false;
};

// Feature-frame files (".feat"): versioned little-endian binary holding the
// keypoints and descriptors of one frame.
void write_feature_frame(const FeatureFrame& frame, const std::string& path);
FeatureFrame read_feature_frame(const std::string& path);

// ---------------------------------------------------------------------------
// Map persistence (MessagePack, schema version 1). Document layout:
//   {"version": u, "cameras": [...], "keyframes": [...], "landmarks": [...],
//    "loop_edges": [[a,b]...], "spanning_tree": [[id,parent]...]}
// All collections sorted by id; poses as {"t":[3xf64], "q":[4xf64 wxyz]};
// descriptors as raw 32-byte binary. Keypoint responses are not persisted.
// ---------------------------------------------------------------------------
std::string encode_map(const MapDatabase& map);
void save_map(const MapDatabase& map, const std::string& path);
std::unique_ptr<MapDatabase> load_map(const std::string& path);
std::unique_ptr<MapDatabase> decode_map(const std::string& bytes);

}  // namespace vslam
