#include "vslam/io.hpp"
#include "vslam/msgpack.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vslam {

namespace {

constexpr std::uint64_t kMapFormatVersion = 1;

void encode_pose(msgpack::Writer& w, const SE3Pose& pose) {
  w.pack_map(2);
  w.pack_str("t");
  w.pack_array(3);
  for (int i = 0; i < 3; ++i) w.pack_double(pose.translation()(i));
  w.pack_str("q");  // w x y z
  w.pack_array(4);
  const Quat& q = pose.unit_quaternion();
  w.pack_double(q.w());
  w.pack_double(q.x());
  w.pack_double(q.y());
  w.pack_double(q.z());
}

void encode_camera(msgpack::Writer& w, int id, const CameraModel& cam) {
  w.pack_map(10);
  w.pack_str("id");
  w.pack_uint(id);
  w.pack_str("kind");
  w.pack_str(to_string(cam.kind()));
  w.pack_str("width");
  w.pack_uint(cam.width());
  w.pack_str("height");
  w.pack_uint(cam.height());
  w.pack_str("fps");
  w.pack_double(cam.fps());
  w.pack_str("fx");
  w.pack_double(cam.fx());
  w.pack_str("fy");
  w.pack_double(cam.fy());
  w.pack_str("cx");
  w.pack_double(cam.cx());
  w.pack_str("cy");
  w.pack_double(cam.cy());
  w.pack_str("dist");
  w.pack_array(5);
  for (double d : cam.distortion()) w.pack_double(d);
}

SE3Pose decode_pose(msgpack::Reader& r) {
  Vec3 t = Vec3::Zero();
  Quat q = Quat::Identity();
  const std::size_t n = r.read_map();
  for (std::size_t i = 0; i < n; ++i) {
    const std::string key = r.read_str();
    r.enter(key);
    if (key == "t") {
      if (r.read_array() != 3) r.fail("expected 3 components");
      for (int k = 0; k < 3; ++k) t(k) = r.read_double();
    } else if (key == "q") {
      if (r.read_array() != 4) r.fail("expected 4 components");
      const double w = r.read_double();
      const double x = r.read_double();
      const double y = r.read_double();
      const double z = r.read_double();
      q = Quat(w, x, y, z);
    } else {
      r.fail("unknown field");
    }
    r.leave();
  }
  return SE3Pose::from_normalized(q, t);
}

Descriptor decode_descriptor(msgpack::Reader& r) {
  const auto bytes = r.read_bin();
  if (bytes.size() != 32) r.fail("descriptor must be 32 bytes");
  std::array<std::uint8_t, 32> arr;
  std::copy(bytes.begin(), bytes.end(), arr.begin());
  return Descriptor::from_bytes(arr);
}

}  // namespace

std::string encode_map(const MapDatabase& map) {
  map.audit();
  msgpack::Writer w;
  w.pack_map(6);

  w.pack_str("version");
  w.pack_uint(kMapFormatVersion);

  w.pack_str("cameras");
  const auto camera_ids = map.camera_ids();
  w.pack_array(camera_ids.size());
  for (int id : camera_ids) encode_camera(w, id, map.camera(id));

  w.pack_str("keyframes");
  const auto kf_ids = map.keyframe_ids();
  w.pack_array(kf_ids.size());
  for (int id : kf_ids) {
    const Keyframe kf = map.keyframe(id);
    w.pack_map(9);
    w.pack_str("id");
    w.pack_uint(kf.id);
    w.pack_str("timestamp");
    w.pack_double(kf.timestamp);
    w.pack_str("camera");
    w.pack_uint(kf.camera_id);
    w.pack_str("pose");
    encode_pose(w, kf.pose);
    w.pack_str("scale_factor");
    w.pack_double(kf.features.scale_factor);
    w.pack_str("num_levels");
    w.pack_uint(kf.features.num_levels);
    w.pack_str("keypoints");
    w.pack_array(kf.features.size());
    for (const Keypoint& kp : kf.features.keypoints) {
      w.pack_array(4);
      w.pack_double(kp.u);
      w.pack_double(kp.v);
      w.pack_uint(kp.octave);
      w.pack_double(kp.angle);
    }
    w.pack_str("descriptors");
    w.pack_array(kf.features.size());
    for (const Descriptor& d : kf.features.descriptors) {
      const auto bytes = d.to_bytes();
      w.pack_bin(bytes.data(), bytes.size());
    }
    w.pack_str("links");
    w.pack_array(kf.landmark_links.size());
    for (int lm : kf.landmark_links) w.pack_int(lm);
  }

  w.pack_str("landmarks");
  const auto lm_ids = map.landmark_ids();
  w.pack_array(lm_ids.size());
  for (int id : lm_ids) {
    const Landmark lm = map.landmark(id);
    w.pack_map(3);
    w.pack_str("id");
    w.pack_uint(lm.id);
    w.pack_str("position");
    w.pack_array(3);
    for (int k = 0; k < 3; ++k) w.pack_double(lm.position(k));
    w.pack_str("descriptor");
    const auto bytes = lm.descriptor.to_bytes();
    w.pack_bin(bytes.data(), bytes.size());
  }

  w.pack_str("loop_edges");
  const auto loops = map.loop_edges();
  w.pack_array(loops.size());
  for (const auto& [a, b] : loops) {
    w.pack_array(2);
    w.pack_uint(a);
    w.pack_uint(b);
  }

  w.pack_str("spanning_tree");
  w.pack_array(kf_ids.size());
  for (int id : kf_ids) {
    w.pack_array(2);
    w.pack_uint(id);
    w.pack_int(map.spanning_tree_parent(id));
  }

  return w.buffer();
}

void save_map(const MapDatabase& map, const std::string& path) {
  const std::string bytes = encode_map(map);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("map: cannot open for writing: " + path);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("map: write failed: " + path);
}

std::unique_ptr<MapDatabase> decode_map(const std::string& bytes) {
  msgpack::Reader r(bytes);
  auto map = std::make_unique<MapDatabase>();

  const std::size_t num_fields = r.read_map();
  if (num_fields < 1) r.fail("empty document");
  r.enter("version");
  if (r.read_str() != "version") r.fail("first field must be 'version'");
  const std::uint64_t version = r.read_uint();
  if (version != kMapFormatVersion) {
    throw std::runtime_error("map: unsupported format version " + std::to_string(version) +
                             " (expected " + std::to_string(kMapFormatVersion) + ")");
  }
  r.leave();

  // Field order in the document is canonical but not assumed; everything is
  // parsed first and the database assembled afterwards (keyframes link to
  // landmarks, so construction order matters).
  struct CameraRecord {
    int id;
    CameraModel model;
  };
  std::vector<CameraRecord> cameras;
  std::vector<Landmark> landmarks;
  std::vector<Keyframe> keyframes;
  std::vector<std::pair<int, int>> loops;
  std::map<int, int> tree;

  for (std::size_t f = 1; f < num_fields; ++f) {
    const std::string field = r.read_str();
    r.enter(field);
    if (field == "cameras") {
      const std::size_t n = r.read_array();
      for (std::size_t i = 0; i < n; ++i) {
        r.enter("[" + std::to_string(i) + "]");
        int id = -1, width = 0, height = 0;
        double fps = 0, fx = 0, fy = 0, cx = 0, cy = 0;
        std::string kind;
        std::array<double, 5> dist = {0, 0, 0, 0, 0};
        const std::size_t fields = r.read_map();
        for (std::size_t k = 0; k < fields; ++k) {
          const std::string key = r.read_str();
          r.enter(key);
          if (key == "id") id = static_cast<int>(r.read_uint());
          else if (key == "kind") kind = r.read_str();
          else if (key == "width") width = static_cast<int>(r.read_uint());
          else if (key == "height") height = static_cast<int>(r.read_uint());
          else if (key == "fps") fps = r.read_double();
          else if (key == "fx") fx = r.read_double();
          else if (key == "fy") fy = r.read_double();
          else if (key == "cx") cx = r.read_double();
          else if (key == "cy") cy = r.read_double();
          else if (key == "dist") {
            if (r.read_array() != 5) r.fail("expected 5 coefficients");
            for (double& d : dist) d = r.read_double();
          } else {
            r.fail("unknown field");
          }
          r.leave();
        }
        switch (camera_kind_from_string(kind)) {
          case CameraKind::Perspective:
            cameras.push_back(
                {id, CameraModel::perspective(width, height, fps, fx, fy, cx, cy, dist)});
            break;
          case CameraKind::Fisheye:
            cameras.push_back({id, CameraModel::fisheye(width, height, fps, fx, fy, cx, cy,
                                                        {dist[0], dist[1], dist[2], dist[3]})});
            break;
          case CameraKind::Equirectangular:
            cameras.push_back({id, CameraModel::equirectangular(width, height, fps)});
            break;
        }
        r.leave();
      }
    } else if (field == "landmarks") {
      const std::size_t n = r.read_array();
      for (std::size_t i = 0; i < n; ++i) {
        r.enter("[" + std::to_string(i) + "]");
        Landmark lm;
        const std::size_t fields = r.read_map();
        for (std::size_t k = 0; k < fields; ++k) {
          const std::string key = r.read_str();
          r.enter(key);
          if (key == "id") lm.id = static_cast<int>(r.read_uint());
          else if (key == "position") {
            if (r.read_array() != 3) r.fail("expected 3 components");
            for (int c = 0; c < 3; ++c) lm.position(c) = r.read_double();
          } else if (key == "descriptor") {
            lm.descriptor = decode_descriptor(r);
          } else {
            r.fail("unknown field");
          }
          r.leave();
        }
        landmarks.push_back(lm);
        r.leave();
      }
    } else if (field == "keyframes") {
      const std::size_t n = r.read_array();
      for (std::size_t i = 0; i < n; ++i) {
        r.enter("[" + std::to_string(i) + "]");
        Keyframe kf;
        const std::size_t fields = r.read_map();
        for (std::size_t k = 0; k < fields; ++k) {
          const std::string key = r.read_str();
          r.enter(key);
          if (key == "id") kf.id = static_cast<int>(r.read_uint());
          else if (key == "timestamp") kf.timestamp = r.read_double();
          else if (key == "camera") kf.camera_id = static_cast<int>(r.read_uint());
          else if (key == "pose") kf.pose = decode_pose(r);
          else if (key == "scale_factor") kf.features.scale_factor = r.read_double();
          else if (key == "num_levels") kf.features.num_levels = static_cast<int>(r.read_uint());
          else if (key == "keypoints") {
            const std::size_t cnt = r.read_array();
            for (std::size_t c = 0; c < cnt; ++c) {
              if (r.read_array() != 4) r.fail("expected [u v octave angle]");
              Keypoint kp;
              kp.u = r.read_double();
              kp.v = r.read_double();
              kp.octave = static_cast<int>(r.read_uint());
              kp.angle = r.read_double();
              kf.features.keypoints.push_back(kp);
            }
          } else if (key == "descriptors") {
            const std::size_t cnt = r.read_array();
            for (std::size_t c = 0; c < cnt; ++c) {
              kf.features.descriptors.push_back(decode_descriptor(r));
            }
          } else if (key == "links") {
            const std::size_t cnt = r.read_array();
            for (std::size_t c = 0; c < cnt; ++c) {
              kf.landmark_links.push_back(static_cast<int>(r.read_int()));
            }
          } else {
            r.fail("unknown field");
          }
          r.leave();
        }
        if (kf.features.keypoints.size() != kf.features.descriptors.size()) {
          r.fail("keypoint/descriptor count mismatch");
        }
        keyframes.push_back(std::move(kf));
        r.leave();
      }
    } else if (field == "loop_edges") {
      const std::size_t n = r.read_array();
      for (std::size_t i = 0; i < n; ++i) {
        r.enter("[" + std::to_string(i) + "]");
        if (r.read_array() != 2) r.fail("expected [a b]");
        const int a = static_cast<int>(r.read_uint());
        const int b = static_cast<int>(r.read_uint());
        loops.emplace_back(a, b);
        r.leave();
      }
    } else if (field == "spanning_tree") {
      const std::size_t n = r.read_array();
      for (std::size_t i = 0; i < n; ++i) {
        r.enter("[" + std::to_string(i) + "]");
        if (r.read_array() != 2) r.fail("expected [id parent]");
        const int id = static_cast<int>(r.read_uint());
        tree[id] = static_cast<int>(r.read_int());
        r.leave();
      }
    } else {
      r.fail("unknown field");
    }
    r.leave();
  }
  for (const auto& [id, model] : cameras) map->register_camera(id, model);
  for (const auto& lm : landmarks) map->add_landmark(lm);
  std::sort(keyframes.begin(), keyframes.end(),
            [](const Keyframe& a, const Keyframe& b) { return a.id < b.id; });
  for (auto& kf : keyframes) {
    compute_bearings(kf.features, map->camera(kf.camera_id));
    map->insert_keyframe(kf);
  }
  for (const auto& [a, b] : loops) map->add_loop_edge(a, b);
  map->restore_spanning_tree(tree);
  map->audit();
  return map;
}

std::unique_ptr<MapDatabase> load_map(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("map: cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return decode_map(buf.str());
}

}  // namespace vslam
