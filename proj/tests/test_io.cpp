#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vslam/io.hpp"
#include "vslam/msgpack.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <variant>

using namespace vslam;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Independent MessagePack decoder used as the oracle for the map codec. It is
// written against the format specification only and shares nothing with the
// library's reader.
// ---------------------------------------------------------------------------
struct MpValue;
using MpMap = std::vector<std::pair<std::string, MpValue>>;
using MpArray = std::vector<MpValue>;

struct MpValue {
  std::variant<std::uint64_t, std::int64_t, double, bool, std::string,
               std::vector<std::uint8_t>, MpArray, MpMap>
      v;

  const MpMap& as_map() const { return std::get<MpMap>(v); }
  const MpArray& as_array() const { return std::get<MpArray>(v); }
  double as_double() const { return std::get<double>(v); }
  std::int64_t as_int() const {
    if (std::holds_alternative<std::uint64_t>(v)) {
      return static_cast<std::int64_t>(std::get<std::uint64_t>(v));
    }
    return std::get<std::int64_t>(v);
  }
  const std::string& as_str() const { return std::get<std::string>(v); }
  const MpValue& field(const std::string& name) const {
    for (const auto& [k, val] : as_map()) {
      if (k == name) return val;
    }
    throw std::runtime_error("oracle: missing field " + name);
  }
  bool has_field(const std::string& name) const {
    for (const auto& [k, val] : as_map()) {
      if (k == name) return true;
    }
    return false;
  }
};

struct OracleDecoder {
  const std::uint8_t* p;
  const std::uint8_t* end;

  std::uint8_t u8() {
    if (p == end) throw std::runtime_error("oracle: truncated");
    return *p++;
  }
  std::uint64_t be(int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | u8();
    return v;
  }
  std::string str(std::size_t n) {
    if (static_cast<std::size_t>(end - p) < n) throw std::runtime_error("oracle: truncated");
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    return s;
  }

  MpValue value() {
    const std::uint8_t t = u8();
    if (t < 0x80) return {std::uint64_t(t)};
    if (t >= 0xe0) return {std::int64_t(static_cast<std::int8_t>(t))};
    if ((t & 0xe0) == 0xa0) return {str(t & 0x1f)};
    if ((t & 0xf0) == 0x90) return array(t & 0x0f);
    if ((t & 0xf0) == 0x80) return map(t & 0x0f);
    switch (t) {
      case 0xc2: return {false};
      case 0xc3: return {true};
      case 0xcc: return {be(1)};
      case 0xcd: return {be(2)};
      case 0xce: return {be(4)};
      case 0xcf: return {be(8)};
      case 0xd0: return {std::int64_t(static_cast<std::int8_t>(be(1)))};
      case 0xd1: return {std::int64_t(static_cast<std::int16_t>(be(2)))};
      case 0xd2: return {std::int64_t(static_cast<std::int32_t>(be(4)))};
      case 0xd3: return {std::int64_t(be(8))};
      case 0xcb: {
        const std::uint64_t bits = be(8);
        double d;
        std::memcpy(&d, &bits, 8);
        return {d};
      }
      case 0xc4: {
        const std::size_t n = be(1);
        std::vector<std::uint8_t> b(p, p + n);
        p += n;
        return {b};
      }
      case 0xc5: {
        const std::size_t n = be(2);
        std::vector<std::uint8_t> b(p, p + n);
        p += n;
        return {b};
      }
      case 0xd9: return {str(be(1))};
      case 0xda: return {str(be(2))};
      case 0xdc: return array(be(2));
      case 0xdd: return array(be(4));
      case 0xde: return map(be(2));
      case 0xdf: return map(be(4));
      default: throw std::runtime_error("oracle: unsupported tag");
    }
  }
  MpValue array(std::size_t n) {
    MpArray a;
    for (std::size_t i = 0; i < n; ++i) a.push_back(value());
    return {a};
  }
  MpValue map(std::size_t n) {
    MpMap m;
    for (std::size_t i = 0; i < n; ++i) {
      MpValue key = value();
      m.emplace_back(std::get<std::string>(key.v), value());
    }
    return {m};
  }
};

MpValue oracle_decode(const std::string& bytes) {
  OracleDecoder d{reinterpret_cast<const std::uint8_t*>(bytes.data()),
                  reinterpret_cast<const std::uint8_t*>(bytes.data()) + bytes.size()};
  MpValue v = d.value();
  REQUIRE(d.p == d.end);
  return v;
}

Descriptor random_descriptor(std::mt19937_64& rng) {
  Descriptor d;
  for (auto& w : d.words) w = rng();
  return d;
}

// Random but audit-clean map with poses, landmarks, links and loop edges.
std::unique_ptr<MapDatabase> build_random_map(std::uint64_t seed, int num_kf, int num_lm) {
  auto rng = std::mt19937_64(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> px(30.0, 600.0);
  std::uniform_real_distribution<double> py(30.0, 440.0);
  std::uniform_int_distribution<int> pick_lm(0, num_lm - 1);
  std::uniform_int_distribution<int> octave(0, 7);

  auto map = std::make_unique<MapDatabase>();
  const auto camera =
      CameraModel::perspective(640, 480, 30.0, 400.0, 400.0, 320.0, 240.0, {});
  map->register_camera(0, camera);
  for (int l = 0; l < num_lm; ++l) {
    Landmark lm;
    lm.id = l;
    lm.position = Vec3(3.0 * u(rng), 3.0 * u(rng), 6.0 + 3.0 * u(rng));
    lm.descriptor = random_descriptor(rng);
    map->add_landmark(lm);
  }
  for (int k = 0; k < num_kf; ++k) {
    Keyframe kf;
    kf.id = k;
    kf.timestamp = 0.1 * k;
    kf.pose = SE3Pose(so3_exp(Vec3(0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng))),
                      Vec3(u(rng), u(rng), u(rng)));
    kf.camera_id = 0;
    const int n = 20;
    std::set<int> used;
    kf.landmark_links.assign(n, -1);
    for (int i = 0; i < n; ++i) {
      Keypoint kp;
      kp.u = px(rng);
      kp.v = py(rng);
      kp.octave = octave(rng);
      kp.angle = u(rng) + 1.5;
      kf.features.keypoints.push_back(kp);
      kf.features.descriptors.push_back(random_descriptor(rng));
      const int lm = pick_lm(rng);
      if (used.insert(lm).second) kf.landmark_links[i] = lm;
    }
    compute_bearings(kf.features, camera);
    map->insert_keyframe(kf);
  }
  if (num_kf >= 4) {
    map->add_loop_edge(0, num_kf - 1);
  }
  map->cull_landmarks({});  // drop unobserved leftovers so the map audits clean
  return map;
}

}  // namespace

TEST_CASE("msgpack primitives round-trip at encoding boundaries") {
  msgpack::Writer w;
  const std::vector<std::uint64_t> uints = {0,     1,      127,        128,
                                            255,   256,    65535,      65536,
                                            1u << 31, 0xffffffffull, 0x100000000ull};
  const std::vector<std::int64_t> ints = {-1, -31, -32, -33, -128, -129, -32768, -32769,
                                          -2147483648ll, -2147483649ll};
  for (auto v : uints) w.pack_uint(v);
  for (auto v : ints) w.pack_int(v);
  w.pack_double(3.141592653589793);
  w.pack_double(-0.0);
  w.pack_str("");
  w.pack_str("hello");
  w.pack_str(std::string(300, 'x'));
  const std::uint8_t bin[] = {1, 2, 3};
  w.pack_bin(bin, 3);
  w.pack_bool(true);
  w.pack_bool(false);

  msgpack::Reader r(w.buffer());
  for (auto v : uints) CHECK(r.read_uint() == v);
  for (auto v : ints) CHECK(r.read_int() == v);
  CHECK(r.read_double() == 3.141592653589793);
  const double neg_zero = r.read_double();
  CHECK(std::signbit(neg_zero));
  CHECK(r.read_str() == "");
  CHECK(r.read_str() == "hello");
  CHECK(r.read_str() == std::string(300, 'x'));
  CHECK(r.read_bin() == std::vector<std::uint8_t>{1, 2, 3});
  CHECK(r.read_bool());
  CHECK_FALSE(r.read_bool());
  CHECK(r.done());

  // Cross-check against the independent oracle on a composite document.
  msgpack::Writer w2;
  w2.pack_map(2);
  w2.pack_str("a");
  w2.pack_array(2);
  w2.pack_uint(200);
  w2.pack_int(-5);
  w2.pack_str("b");
  w2.pack_double(2.5);
  const MpValue doc = oracle_decode(w2.buffer());
  CHECK(doc.field("a").as_array().size() == 2);
  CHECK(doc.field("a").as_array()[0].as_int() == 200);
  CHECK(doc.field("a").as_array()[1].as_int() == -5);
  CHECK(doc.field("b").as_double() == 2.5);
}

TEST_CASE("config parsing") {
  const std::string text =
      "# camera\n"
      "camera.kind perspective\n"
      "camera.width 640\n"
      "camera.height 480\n"
      "camera.fps 30\n"
      "camera.fx 400.5\n"
      "camera.fy 400.5\n"
      "camera.cx 320\n"
      "camera.cy 240  # principal point\n"
      "\n"
      "matching.ratio 0.8\n"
      "loop.enabled false\n";
  const Config c = Config::parse(text);
  CHECK(c.get_string("camera.kind") == "perspective");
  CHECK(c.get_int("camera.width") == 640);
  CHECK(c.get_double("camera.cy") == 240.0);
  CHECK(c.get_double("matching.ratio") == 0.8);
  CHECK_FALSE(c.get_bool("loop.enabled", true));
  CHECK(c.get_int("feature.max_keypoints", 2000) == 2000);  // fallback

  const CameraModel cam = camera_from_config(c);
  CHECK(cam.kind() == CameraKind::Perspective);
  CHECK(cam.fx() == 400.5);

  CHECK_THROWS_WITH_AS(Config::parse("camera.widht 640\n"),
                       doctest::Contains("camera.widht"), std::invalid_argument);
  CHECK_THROWS_AS(Config::parse("camera.width 1\ncamera.width 2\n"), std::invalid_argument);

  // Missing required key is named in the error.
  const Config incomplete = Config::parse("camera.kind perspective\ncamera.width 640\n");
  CHECK_THROWS_WITH_AS(camera_from_config(incomplete), doctest::Contains("camera.height"),
                       std::invalid_argument);
}

TEST_CASE("trajectory write/read round trip") {
  auto rng = std::mt19937_64(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Trajectory traj;
  for (int i = 0; i < 50; ++i) {
    TrajectoryEntry e;
    e.timestamp = 0.033 * i + 1e-4 * u(rng);
    e.pose = SE3Pose(so3_exp(Vec3(u(rng), u(rng), u(rng))), Vec3(u(rng), u(rng), u(rng)));
    traj.push_back(e);
  }
  const std::string path = "/tmp/test_traj.txt";
  write_trajectory(traj, path);
  const Trajectory back = read_trajectory(path);
  REQUIRE(back.size() == traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    CHECK(back[i].timestamp == doctest::Approx(traj[i].timestamp).epsilon(1e-15));
    CHECK((back[i].pose.translation() - traj[i].pose.translation()).norm() < 1e-12);
    CHECK(back[i].pose.unit_quaternion().angularDistance(traj[i].pose.unit_quaternion()) <
          1e-12);
  }
  std::remove(path.c_str());

  std::ofstream bad("/tmp/test_traj_bad.txt");
  bad << "1.0 0 0 0 0\n";
  bad.close();
  CHECK_THROWS_AS(read_trajectory("/tmp/test_traj_bad.txt"), std::runtime_error);
  std::remove("/tmp/test_traj_bad.txt");
}

TEST_CASE("dataset reader: monotone stream, errors on shuffle and missing image") {
  const fs::path dir = "/tmp/test_dataset";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    Image img(64, 64);
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) img.at(x, y) = static_cast<std::uint8_t>(x + y);
    }
    std::ofstream ts(dir / "timestamps.txt");
    for (int i = 0; i < 5; ++i) {
      const std::string name = "frame" + std::to_string(i) + ".pgm";
      save_pgm(img, (dir / name).string());
      ts << 0.1 * i << " " << name << "\n";
    }
  }
  const Dataset ds = Dataset::open(dir.string());
  REQUIRE(ds.size() == 5);
  for (std::size_t i = 1; i < ds.size(); ++i) CHECK(ds.timestamp(i) > ds.timestamp(i - 1));
  CHECK_FALSE(ds.has_feature_frames());
  CHECK(ds.image(2).width == 64);

  // Shuffled timestamps rejected.
  {
    std::ofstream ts(dir / "timestamps.txt");
    ts << "0.2 frame0.pgm\n0.1 frame1.pgm\n";
  }
  CHECK_THROWS_AS(Dataset::open(dir.string()), std::runtime_error);

  // Unreadable image named in the error.
  {
    std::ofstream ts(dir / "timestamps.txt");
    ts << "0.1 missing.pgm\n";
  }
  const Dataset broken = Dataset::open(dir.string());
  CHECK_THROWS_WITH_AS(broken.image(0), doctest::Contains("missing.pgm"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("feature-frame file round trip") {
  auto rng = std::mt19937_64(2);
  std::uniform_real_distribution<double> u(0.0, 500.0);
  FeatureFrame frame;
  frame.scale_factor = 1.2;
  frame.num_levels = 8;
  for (int i = 0; i < 40; ++i) {
    Keypoint kp;
    kp.u = u(rng);
    kp.v = u(rng);
    kp.octave = i % 8;
    kp.angle = 0.01 * i;
    kp.response = 3.0 * i;
    frame.keypoints.push_back(kp);
    frame.descriptors.push_back(random_descriptor(rng));
  }
  const std::string path = "/tmp/test_frame.feat";
  write_feature_frame(frame, path);
  const FeatureFrame back = read_feature_frame(path);
  REQUIRE(back.size() == frame.size());
  CHECK(back.scale_factor == frame.scale_factor);
  CHECK(back.num_levels == frame.num_levels);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    CHECK(back.keypoints[i].u == frame.keypoints[i].u);
    CHECK(back.keypoints[i].v == frame.keypoints[i].v);
    CHECK(back.keypoints[i].octave == frame.keypoints[i].octave);
    CHECK(back.keypoints[i].angle == frame.keypoints[i].angle);
    CHECK(back.descriptors[i] == frame.descriptors[i]);
  }
  std::remove(path.c_str());
}

TEST_CASE("map persistence: empty map and versioning") {
  MapDatabase empty;
  const std::string bytes = encode_map(empty);
  const MpValue doc = oracle_decode(bytes);
  CHECK(doc.field("version").as_int() == 1);
  CHECK(doc.field("cameras").as_array().empty());
  CHECK(doc.field("keyframes").as_array().empty());
  CHECK(doc.field("landmarks").as_array().empty());
  CHECK(doc.field("loop_edges").as_array().empty());
  CHECK(doc.field("spanning_tree").as_array().empty());

  const auto loaded = decode_map(bytes);
  CHECK(loaded->num_keyframes() == 0);

  // Unsupported version reported explicitly.
  msgpack::Writer w;
  w.pack_map(1);
  w.pack_str("version");
  w.pack_uint(9999);
  CHECK_THROWS_WITH_AS(decode_map(w.buffer()), doctest::Contains("9999"), std::runtime_error);

  // Truncated document names a field path.
  const std::string cut = bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_WITH_AS(decode_map(cut), doctest::Contains("$"), std::runtime_error);
}

TEST_CASE("map persistence: lossless round trip, canonical second save") {
  const auto original = build_random_map(7, 10, 60);
  const std::string first = encode_map(*original);
  const auto loaded = decode_map(first);
  const std::string second = encode_map(*loaded);
  CHECK(first == second);  // byte-identical

  // Entity sets and bit-exact poses/positions.
  CHECK(loaded->keyframe_ids() == original->keyframe_ids());
  CHECK(loaded->landmark_ids() == original->landmark_ids());
  for (int id : original->keyframe_ids()) {
    const Keyframe a = original->keyframe(id);
    const Keyframe b = loaded->keyframe(id);
    CHECK(std::memcmp(a.pose.unit_quaternion().coeffs().data(),
                      b.pose.unit_quaternion().coeffs().data(), 4 * sizeof(double)) == 0);
    CHECK(std::memcmp(a.pose.translation().data(), b.pose.translation().data(),
                      3 * sizeof(double)) == 0);
    CHECK(a.timestamp == b.timestamp);
    CHECK(a.landmark_links == b.landmark_links);
    CHECK(a.features.descriptors == b.features.descriptors);
    CHECK(loaded->spanning_tree_parent(id) == original->spanning_tree_parent(id));
  }
  for (int id : original->landmark_ids()) {
    const Landmark a = original->landmark(id);
    const Landmark b = loaded->landmark(id);
    CHECK(std::memcmp(a.position.data(), b.position.data(), 3 * sizeof(double)) == 0);
    CHECK(a.descriptor == b.descriptor);
    CHECK(a.observations == b.observations);
  }
  CHECK(loaded->loop_edges() == original->loop_edges());

  // Covisibility of the loaded map equals a brute-force recount.
  const auto ids = loaded->keyframe_ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      const auto a = loaded->keyframe(ids[i]);
      const auto b = loaded->keyframe(ids[j]);
      std::set<int> la(a.landmark_links.begin(), a.landmark_links.end());
      int shared = 0;
      for (int lm : b.landmark_links) {
        if (lm != -1 && la.count(lm)) ++shared;
      }
      CHECK(loaded->covisibility_weight(ids[i], ids[j]) == shared);
    }
  }
  loaded->audit();

  // File-level API.
  const std::string path = "/tmp/test_map.msg";
  save_map(*original, path);
  const auto from_file = load_map(path);
  CHECK(encode_map(*from_file) == first);
  std::remove(path.c_str());
}

TEST_CASE("map document passes an independent decoder with expected schema") {
  const auto map = build_random_map(11, 10, 50);
  const MpValue doc = oracle_decode(encode_map(*map));

  CHECK(doc.field("version").as_int() == 1);
  CHECK(doc.field("cameras").as_array().size() == 1);
  const auto& cam = doc.field("cameras").as_array()[0];
  CHECK(cam.field("kind").as_str() == "perspective");
  CHECK(cam.field("width").as_int() == 640);

  const auto& kfs = doc.field("keyframes").as_array();
  CHECK(kfs.size() == map->num_keyframes());
  for (const auto& kf : kfs) {
    CHECK(kf.field("pose").field("t").as_array().size() == 3);
    CHECK(kf.field("pose").field("q").as_array().size() == 4);
    const auto n = kf.field("keypoints").as_array().size();
    CHECK(kf.field("descriptors").as_array().size() == n);
    CHECK(kf.field("links").as_array().size() == n);
    for (const auto& d : kf.field("descriptors").as_array()) {
      CHECK(std::get<std::vector<std::uint8_t>>(d.v).size() == 32);
    }
    // Responses must not be persisted.
    CHECK(kf.field("keypoints").as_array()[0].as_array().size() == 4);
  }
  const auto& lms = doc.field("landmarks").as_array();
  CHECK(lms.size() == map->num_landmarks());
  for (const auto& lm : lms) {
    CHECK(lm.field("position").as_array().size() == 3);
    CHECK(std::get<std::vector<std::uint8_t>>(lm.field("descriptor").v).size() == 32);
  }
  CHECK(doc.field("spanning_tree").as_array().size() == kfs.size());
}
