#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vslam/map.hpp"

#include <cstdio>
#include <random>

using namespace vslam;

namespace {

Descriptor random_descriptor(std::mt19937_64& rng) {
  Descriptor d;
  for (auto& w : d.words) w = rng();
  return d;
}

Descriptor flip_bits(Descriptor d, int count, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> bit(0, 255);
  for (int i = 0; i < count; ++i) {
    const int b = bit(rng);
    d.words[b >> 6] ^= std::uint64_t(1) << (b & 63);
  }
  return d;
}

CameraModel test_camera() {
  return CameraModel::perspective(640, 480, 30.0, 400.0, 400.0, 320.0, 240.0, {});
}

FeatureFrame frame_with(const std::vector<Descriptor>& descriptors) {
  FeatureFrame f;
  f.descriptors = descriptors;
  f.keypoints.resize(descriptors.size());
  f.bearings.resize(descriptors.size(), Vec3::UnitZ());
  return f;
}

Keyframe make_kf(int id, const std::vector<Descriptor>& descriptors,
                 const std::vector<int>& links = {}) {
  Keyframe kf;
  kf.id = id;
  kf.timestamp = id * 0.1;
  kf.features = frame_with(descriptors);
  kf.landmark_links = links;
  return kf;
}

// Brute-force covisibility recount over all keyframe pairs.
std::map<std::pair<int, int>, int> recount_covisibility(const MapDatabase& map) {
  std::map<std::pair<int, int>, int> weights;
  const auto ids = map.keyframe_ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      const auto a = map.keyframe(ids[i]);
      const auto b = map.keyframe(ids[j]);
      std::set<int> la(a.landmark_links.begin(), a.landmark_links.end());
      int shared = 0;
      for (int lm : b.landmark_links) {
        if (lm != -1 && la.count(lm)) ++shared;
      }
      if (shared > 0) weights[{ids[i], ids[j]}] = shared;
    }
  }
  return weights;
}

void check_covisibility_matches_recount(const MapDatabase& map) {
  const auto expected = recount_covisibility(map);
  const auto ids = map.keyframe_ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j) {
      const auto it = expected.find({ids[i], ids[j]});
      const int want = it == expected.end() ? 0 : it->second;
      CHECK(map.covisibility_weight(ids[i], ids[j]) == want);
      CHECK(map.covisibility_weight(ids[j], ids[i]) == want);
    }
  }
}

}  // namespace

TEST_CASE("covisibility weight equals the shared-landmark count") {
  auto rng = std::mt19937_64(1);
  MapDatabase map;
  map.register_camera(0, test_camera());
  std::vector<Descriptor> d0, d1;
  for (int i = 0; i < 20; ++i) d0.push_back(random_descriptor(rng));
  for (int i = 0; i < 20; ++i) d1.push_back(random_descriptor(rng));
  map.insert_keyframe(make_kf(0, d0));
  CHECK(map.spanning_tree_parent(0) == -1);  // root, no edges
  CHECK(map.spanning_tree_edges().empty());

  for (int l = 0; l < 17; ++l) {
    Landmark lm;
    lm.id = l;
    lm.position = Vec3(l, 0, 5);
    map.add_landmark(lm);
    map.add_observation(0, l, l);
  }
  std::vector<int> links(20, -1);
  for (int l = 0; l < 17; ++l) links[l] = l;
  map.insert_keyframe(make_kf(1, d1, links));
  CHECK(map.covisibility_weight(0, 1) == 17);
  CHECK(map.covisibility_weight(1, 0) == 17);
  CHECK(map.spanning_tree_parent(1) == 0);
  map.audit();
}

TEST_CASE("duplicate links are rejected") {
  auto rng = std::mt19937_64(2);
  MapDatabase map;
  map.register_camera(0, test_camera());
  std::vector<Descriptor> d;
  for (int i = 0; i < 5; ++i) d.push_back(random_descriptor(rng));
  map.insert_keyframe(make_kf(0, d));
  Landmark lm;
  lm.id = 0;
  map.add_landmark(lm);
  map.add_observation(0, 0, 0);
  CHECK_THROWS_AS(map.add_observation(0, 0, 0), std::invalid_argument);
  Landmark lm2;
  lm2.id = 1;
  map.add_landmark(lm2);
  CHECK_THROWS_AS(map.add_observation(0, 0, 1), std::invalid_argument);  // keypoint taken
  CHECK_THROWS_AS(map.insert_keyframe(make_kf(0, d)), std::invalid_argument);  // id reuse
}

TEST_CASE("incremental covisibility equals brute-force recount on a random map") {
  auto rng = std::mt19937_64(3);
  std::uniform_int_distribution<int> pick_lm(0, 119);
  MapDatabase map;
  map.register_camera(0, test_camera());
  for (int l = 0; l < 120; ++l) {
    Landmark lm;
    lm.id = l;
    lm.position = Vec3(l % 10, l / 10, 6);
    map.add_landmark(lm);
  }
  for (int k = 0; k < 30; ++k) {
    std::vector<Descriptor> d;
    for (int i = 0; i < 25; ++i) d.push_back(random_descriptor(rng));
    std::vector<int> links(25, -1);
    std::set<int> used;
    for (int i = 0; i < 25; ++i) {
      const int lm = pick_lm(rng);
      if (used.insert(lm).second) links[i] = lm;
    }
    map.insert_keyframe(make_kf(k, d, links));
  }
  check_covisibility_matches_recount(map);
  map.audit();

  // Spanning tree shape.
  CHECK(map.spanning_tree_edges().size() == map.num_keyframes() - 1);
}

TEST_CASE("landmark culling policies") {
  auto rng = std::mt19937_64(4);
  MapDatabase map;
  map.register_camera(0, test_camera());
  std::vector<Descriptor> d;
  for (int i = 0; i < 10; ++i) d.push_back(random_descriptor(rng));
  map.insert_keyframe(make_kf(0, d));
  map.insert_keyframe(make_kf(1, d));
  map.insert_keyframe(make_kf(2, d));
  map.insert_keyframe(make_kf(3, d));

  Landmark healthy;  // observed twice, both observers alive -> retained
  healthy.id = 0;
  map.add_landmark(healthy);
  map.add_observation(0, 0, 0);
  map.add_observation(1, 0, 0);

  Landmark lonely;  // one observation, past grace -> removed
  lonely.id = 1;
  lonely.first_keyframe_id = 0;
  map.add_landmark(lonely);
  map.add_observation(0, 1, 1);

  Landmark unfound;  // found/visible below 0.25 -> removed
  unfound.id = 2;
  map.add_landmark(unfound);
  map.add_observation(0, 2, 2);
  map.add_observation(1, 2, 2);
  for (int i = 0; i < 9; ++i) map.record_landmark_visibility(2, false);
  map.record_landmark_visibility(2, true);

  const auto removed = map.cull_landmarks({});
  CHECK(removed == std::vector<int>{1, 2});
  CHECK(map.has_landmark(0));
  CHECK_FALSE(map.has_landmark(1));
  CHECK(map.keyframe(0).landmark_links[1] == -1);  // link cleared
  CHECK(map.keyframe(0).landmark_links[2] == -1);
  map.audit();
}

TEST_CASE("a fully redundant keyframe is culled and orphans re-parented") {
  auto rng = std::mt19937_64(5);
  MapDatabase map;
  map.register_camera(0, test_camera());
  // 5 keyframes all observing the same 10 landmarks; keyframe 2 is redundant
  // (every landmark it sees is seen by 4 others). Only one removal is expected
  // because after it the others drop to 3 other observers... all still >= 3,
  // but culling runs front to back and re-checks, so several may go. Build a
  // sharper case instead: kf 2 shares everything, others each hold a private
  // landmark as well.
  for (int l = 0; l < 14; ++l) {
    Landmark lm;
    lm.id = l;
    map.add_landmark(lm);
  }
  for (int k = 0; k < 5; ++k) {
    std::vector<Descriptor> d;
    for (int i = 0; i < 11; ++i) d.push_back(random_descriptor(rng));
    std::vector<int> links(11, -1);
    for (int l = 0; l < 10; ++l) links[l] = l;
    if (k != 2) links[10] = 10 + (k > 2 ? k - 1 : k);  // private landmark
    map.insert_keyframe(make_kf(k, d, links));
  }
  // Keyframes holding a private landmark are below the 90% redundancy bar
  // (10 of 11 = 90.9%... adjust threshold expectation: they are at 10/11 ~ 0.909).
  // Make their redundancy explicit: private landmarks have a single observer,
  // so those keyframes sit at 10/11 < 1.0 but > 0.9; tighten the policy.
  KeyframeCullPolicy policy;
  policy.redundancy_ratio = 0.95;
  const auto removed = map.cull_keyframes(policy);
  CHECK(removed == std::vector<int>{2});
  map.audit();
  check_covisibility_matches_recount(map);
}

TEST_CASE("landmark with all observers deleted disappears") {
  auto rng = std::mt19937_64(6);
  MapDatabase map;
  map.register_camera(0, test_camera());
  std::vector<Descriptor> d;
  for (int i = 0; i < 4; ++i) d.push_back(random_descriptor(rng));
  map.insert_keyframe(make_kf(0, d));
  map.insert_keyframe(make_kf(1, d));
  Landmark lm;
  lm.id = 0;
  lm.first_keyframe_id = 0;
  map.add_landmark(lm);
  map.add_observation(1, 0, 0);
  // Cull the only observer's link by removing the landmark's observation via
  // keyframe culling is overkill here; simulate observer loss by culling with
  // min_observations = 2 after grace.
  map.insert_keyframe(make_kf(2, d));
  map.insert_keyframe(make_kf(3, d));
  const auto removed = map.cull_landmarks({});
  CHECK(removed == std::vector<int>{0});
  CHECK(map.keyframe(1).landmark_links[0] == -1);
  map.audit();
}

TEST_CASE("representative descriptor minimizes the median Hamming distance") {
  auto rng = std::mt19937_64(7);
  MapDatabase map;
  map.register_camera(0, test_camera());
  const Descriptor base = random_descriptor(rng);
  // Three observers: two descriptors near `base`, one far off. The medoid
  // must be one of the near ones.
  const Descriptor near1 = flip_bits(base, 2, rng);
  const Descriptor near2 = flip_bits(base, 3, rng);
  const Descriptor far = flip_bits(base, 120, rng);
  map.insert_keyframe(make_kf(0, {near1}));
  map.insert_keyframe(make_kf(1, {far}));
  map.insert_keyframe(make_kf(2, {near2}));
  Landmark lm;
  lm.id = 0;
  map.add_landmark(lm);
  map.add_observation(0, 0, 0);
  map.add_observation(1, 0, 0);
  map.add_observation(2, 0, 0);
  const Descriptor rep = map.landmark(0).descriptor;
  CHECK((rep == near1 || rep == near2));

  // Oracle: recompute the medoid by brute force.
  std::vector<Descriptor> members = {near1, far, near2};
  double best_median = 1e9;
  Descriptor best;
  for (const auto& a : members) {
    std::vector<int> ds;
    for (const auto& b : members) {
      if (!(a == b)) ds.push_back(hamming(a, b));
    }
    std::sort(ds.begin(), ds.end());
    const double median =
        ds.size() % 2 ? ds[ds.size() / 2] : 0.5 * (ds[ds.size() / 2 - 1] + ds[ds.size() / 2]);
    if (median < best_median) {
      best_median = median;
      best = a;
    }
  }
  CHECK(rep == best);
}

TEST_CASE("vocabulary: train, transform, persistence round trip") {
  auto rng = std::mt19937_64(8);
  std::vector<std::vector<Descriptor>> docs;
  for (int d = 0; d < 30; ++d) {
    std::vector<Descriptor> doc;
    for (int i = 0; i < 40; ++i) doc.push_back(random_descriptor(rng));
    docs.push_back(doc);
  }
  const auto voc = Vocabulary::train(docs, 10, 3, 42);
  CHECK(voc.num_words() > 100);

  const auto v = voc.transform(docs[0]);
  CHECK_FALSE(v.empty());
  double l1 = 0.0;
  for (const auto& [w, val] : v) {
    CHECK(val >= 0.0);
    l1 += val;
  }
  CHECK(l1 == doctest::Approx(1.0));
  CHECK(Vocabulary::similarity(v, v) == doctest::Approx(1.0));
  const auto other = voc.transform(docs[1]);
  CHECK(Vocabulary::similarity(v, other) < 0.5);

  const std::string path = "/tmp/test_vocab.bin";
  voc.save(path);
  const auto loaded = Vocabulary::load(path);
  CHECK(loaded.num_words() == voc.num_words());
  for (const auto& doc : docs) {
    for (const auto& d : doc) CHECK(loaded.word_id(d) == voc.word_id(d));
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(Vocabulary::load("/tmp/does_not_exist_vocab.bin"), std::runtime_error);
}

TEST_CASE("query_similar_keyframes ranks the right keyframes") {
  auto rng = std::mt19937_64(9);
  std::vector<std::vector<Descriptor>> frames;
  for (int k = 0; k < 12; ++k) {
    std::vector<Descriptor> d;
    for (int i = 0; i < 30; ++i) d.push_back(random_descriptor(rng));
    frames.push_back(d);
  }
  const auto voc = Vocabulary::train(frames, 10, 3, 1);

  for (const bool with_vocab : {true, false}) {
    CAPTURE(with_vocab);
    MapDatabase map;
    map.register_camera(0, test_camera());
    if (with_vocab) map.set_vocabulary(voc);
    for (int k = 0; k < 12; ++k) map.insert_keyframe(make_kf(k, frames[k]));

    // A keyframe's own features rank itself first.
    const auto self = map.query_similar_keyframes(frame_with(frames[4]), {});
    REQUIRE_FALSE(self.empty());
    CHECK(self.front().first == 4);

    // A noisy revisit of keyframe 7 is in the top 3.
    std::vector<Descriptor> noisy;
    for (const auto& d : frames[7]) noisy.push_back(flip_bits(d, 6, rng));
    const auto revisit = map.query_similar_keyframes(frame_with(noisy), {});
    REQUIRE_FALSE(revisit.empty());
    bool in_top3 = false;
    for (std::size_t i = 0; i < std::min<std::size_t>(3, revisit.size()); ++i) {
      if (revisit[i].first == 7) in_top3 = true;
    }
    CHECK(in_top3);

    // Excluding every keyframe yields nothing.
    std::set<int> all;
    for (int k = 0; k < 12; ++k) all.insert(k);
    CHECK(map.query_similar_keyframes(frame_with(frames[4]), all).empty());
  }
}

TEST_CASE("map version increments on writes and audit survives random churn") {
  auto rng = std::mt19937_64(10);
  std::uniform_int_distribution<int> pick_lm(0, 79);
  MapDatabase map;
  map.register_camera(0, test_camera());
  const auto v0 = map.version();
  for (int l = 0; l < 80; ++l) {
    Landmark lm;
    lm.id = l;
    map.add_landmark(lm);
  }
  CHECK(map.version() > v0);
  for (int k = 0; k < 25; ++k) {
    std::vector<Descriptor> d;
    for (int i = 0; i < 20; ++i) d.push_back(random_descriptor(rng));
    std::vector<int> links(20, -1);
    std::set<int> used;
    for (int i = 0; i < 20; ++i) {
      const int lm = pick_lm(rng);
      if (map.has_landmark(lm) && used.insert(lm).second) links[i] = lm;
    }
    map.insert_keyframe(make_kf(k, d, links));
    if (k % 5 == 4) {
      map.cull_landmarks({});
      map.cull_keyframes({});
      map.audit();
      check_covisibility_matches_recount(map);
    }
  }
  map.audit();
  check_covisibility_matches_recount(map);
  CHECK(map.spanning_tree_edges().size() == map.num_keyframes() - 1);
}
