#include "vslam/io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace vslam {

namespace {

// The full key surface; parsing rejects anything else so typos fail loudly.
const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = {
      "camera.kind", "camera.width", "camera.height", "camera.fps",
      "camera.fx", "camera.fy", "camera.cx", "camera.cy",
      "camera.k1", "camera.k2", "camera.k3", "camera.k4",
      "camera.p1", "camera.p2",
      "feature.max_keypoints", "feature.scale_factor", "feature.num_levels",
      "feature.fast_threshold", "feature.grid_cell_size",
      "matching.ratio", "matching.max_hamming",
      "init.min_inliers", "init.min_parallax_deg",
      "ransac.iterations", "ransac.seed",
      "ba.max_iterations", "ba.huber_delta_deg",
      "posegraph.max_iterations",
      "keyframe.max_interval", "keyframe.min_tracked_ratio",
      "loop.enabled", "loop.min_inliers",
      "relocalization.min_inliers",
      "dataset.path", "vocabulary.path",
  };
  return keys;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

Config Config::parse(const std::string& text) {
  Config config;
  std::istringstream stream(text);
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto space = line.find_first_of(" \t");
    if (space == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'section.key value'");
    }
    const std::string key = trim(line.substr(0, space));
    const std::string value = trim(line.substr(space + 1));
    if (!known_config_keys().count(key)) {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    if (config.entries_.count(key)) {
      throw std::invalid_argument("config: duplicate key '" + key + "'");
    }
    config.entries_[key] = value;
  }
  return config;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse(buf.str());
}

bool Config::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string Config::get_string(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    throw std::invalid_argument("config: missing required key '" + key + "'");
  }
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  std::size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument("config: bad number for '" + key + "'");
  return d;
}

double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

int Config::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  std::size_t used = 0;
  const int i = std::stoi(v, &used);
  if (used != v.size()) throw std::invalid_argument("config: bad integer for '" + key + "'");
  return i;
}

int Config::get_int(const std::string& key, int fallback) const {
  return has(key) ? get_int(key) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get_string(key);
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::invalid_argument("config: bad boolean for '" + key + "'");
}

CameraModel camera_from_config(const Config& config) {
  const CameraKind kind = camera_kind_from_string(config.get_string("camera.kind"));
  const int width = config.get_int("camera.width");
  const int height = config.get_int("camera.height");
  const double fps = config.get_double("camera.fps");
  switch (kind) {
    case CameraKind::Perspective:
      return CameraModel::perspective(
          width, height, fps, config.get_double("camera.fx"), config.get_double("camera.fy"),
          config.get_double("camera.cx"), config.get_double("camera.cy"),
          {config.get_double("camera.k1", 0.0), config.get_double("camera.k2", 0.0),
           config.get_double("camera.p1", 0.0), config.get_double("camera.p2", 0.0),
           config.get_double("camera.k3", 0.0)});
    case CameraKind::Fisheye:
      return CameraModel::fisheye(
          width, height, fps, config.get_double("camera.fx"), config.get_double("camera.fy"),
          config.get_double("camera.cx"), config.get_double("camera.cy"),
          {config.get_double("camera.k1", 0.0), config.get_double("camera.k2", 0.0),
           config.get_double("camera.k3", 0.0), config.get_double("camera.k4", 0.0)});
    case CameraKind::Equirectangular:
      return CameraModel::equirectangular(width, height, fps);
  }
  throw std::logic_error("unreachable");
}

void write_trajectory(const Trajectory& trajectory, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("trajectory: cannot open for writing: " + path);
  char line[256];
  for (const auto& entry : trajectory) {
    const Quat& q = entry.pose.unit_quaternion();
    const Vec3& t = entry.pose.translation();
    std::snprintf(line, sizeof(line),
                  "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", entry.timestamp,
                  t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w());
    os << line;
  }
  if (!os) throw std::runtime_error("trajectory: write failed: " + path);
}

Trajectory read_trajectory(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("trajectory: cannot open " + path);
  Trajectory out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    double ts, tx, ty, tz, qx, qy, qz, qw;
    if (std::sscanf(line.c_str(), "%lf %lf %lf %lf %lf %lf %lf %lf", &ts, &tx, &ty, &tz,
                    &qx, &qy, &qz, &qw) != 8) {
      throw std::runtime_error("trajectory: bad line " + std::to_string(line_no) + " in " + path);
    }
    TrajectoryEntry entry;
    entry.timestamp = ts;
    entry.pose = SE3Pose(Quat(qw, qx, qy, qz), Vec3(tx, ty, tz));
    out.push_back(entry);
  }
  return out;
}

Dataset Dataset::open(const std::string& directory) {
  const std::string index_path = directory + "/timestamps.txt";
  std::ifstream is(index_path);
  if (!is) throw std::runtime_error("dataset: cannot open " + index_path);
  Dataset ds;
  std::string line;
  int line_no = 0;
  double last = -1e300;
  while (std::getline(is, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    double ts;
    std::string name;
    if (!(ls >> ts >> name)) {
      throw std::runtime_error("dataset: bad line " + std::to_string(line_no) + " in " +
                               index_path);
    }
    if (ts <= last) {
      throw std::runtime_error("dataset: timestamps not strictly increasing at line " +
                               std::to_string(line_no) + " in " + index_path);
    }
    last = ts;
    ds.entries_.emplace_back(ts, directory + "/" + name);
  }
  if (!ds.entries_.empty()) {
    ds.feature_frames_ = ds.entries_.front().second.ends_with(".feat");
    for (const auto& [_, path] : ds.entries_) {
      if (path.ends_with(".feat") != ds.feature_frames_) {
        throw std::runtime_error("dataset: mixed image and feature-frame entries");
      }
    }
  }
  return ds;
}

Image Dataset::image(std::size_t i) const {
  if (feature_frames_) throw std::runtime_error("dataset: feature-frame dataset has no images");
  return load_pgm(entries_.at(i).second);
}

FeatureFrame Dataset::features(std::size_t i) const {
  if (!feature_frames_) throw std::runtime_error("dataset: image dataset has no feature frames");
  return read_feature_frame(entries_.at(i).second);
}

namespace {

constexpr char kFeatMagic[8] = {'V', 'S', 'F', 'E', 'A', 'T', '\0', '\0'};
constexpr std::uint32_t kFeatVersion = 1;

template <typename T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

}  // namespace

void write_feature_frame(const FeatureFrame& frame, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("feat: cannot open for writing: " + path);
  os.write(kFeatMagic, sizeof(kFeatMagic));
  put<std::uint32_t>(os, kFeatVersion);
  put<double>(os, frame.scale_factor);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(frame.num_levels));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(frame.size()));
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const Keypoint& kp = frame.keypoints[i];
    put<double>(os, kp.u);
    put<double>(os, kp.v);
    put<std::int32_t>(os, kp.octave);
    put<double>(os, kp.angle);
    put<double>(os, kp.response);
    const auto bytes = frame.descriptors[i].to_bytes();
    os.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }
  if (!os) throw std::runtime_error("feat: write failed: " + path);
}

FeatureFrame read_feature_frame(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("feat: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kFeatMagic, sizeof(kFeatMagic)) != 0) {
    throw std::runtime_error("feat: bad magic in " + path);
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kFeatVersion) {
    throw std::runtime_error("feat: unsupported version " + std::to_string(version) + " in " +
                             path);
  }
  FeatureFrame frame;
  frame.scale_factor = get<double>(is);
  frame.num_levels = static_cast<int>(get<std::uint32_t>(is));
  const auto count = get<std::uint32_t>(is);
  frame.keypoints.reserve(count);
  frame.descriptors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Keypoint kp;
    kp.u = get<double>(is);
    kp.v = get<double>(is);
    kp.octave = get<std::int32_t>(is);
    kp.angle = get<double>(is);
    kp.response = get<double>(is);
    std::array<std::uint8_t, 32> bytes;
    is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    frame.keypoints.push_back(kp);
    frame.descriptors.push_back(Descriptor::from_bytes(bytes));
  }
  if (!is) throw std::runtime_error("feat: truncated file " + path);
  return frame;
}

}  // namespace vslam
