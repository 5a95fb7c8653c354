#include "vslam/pipeline.hpp"

#include "vslam/factors.hpp"

#include <algorithm>
#include <cmath>

namespace vslam {

namespace {

constexpr int kTriangulationNeighbors = 10;
constexpr std::size_t kLocalBaKeyframes = 12;

double angle_between(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0));
}

}  // namespace

void System::mapping_step(int keyframe_id) {
  if (!map_->has_keyframe(keyframe_id)) return;
  triangulate_new_landmarks(keyframe_id);
  std::vector<int> neighbors;
  for (const auto& [n, _] : map_->covisibility_neighbors(keyframe_id)) {
    neighbors.push_back(n);
  }
  fuse_duplicates(keyframe_id, neighbors, params_.local_match_angle_deg);
  local_bundle_adjustment(keyframe_id);

  map_->cull_landmarks(LandmarkCullPolicy{});

  // Snapshot poses and tree parents so frame records referencing a culled
  // keyframe can be re-anchored at shutdown.
  std::map<int, SE3Pose> poses;
  std::map<int, int> parents;
  for (int id : map_->keyframe_ids()) {
    poses[id] = map_->keyframe(id).pose;
    parents[id] = map_->spanning_tree_parent(id);
  }
  const std::vector<int> removed = map_->cull_keyframes(KeyframeCullPolicy{});
  for (int id : removed) {
    const int parent = parents.at(id);
    if (parent < 0) continue;
    culled_refs_[id] = {parent, poses.at(id) * poses.at(parent).inverse()};
  }
  if (!map_->has_keyframe(reference_keyframe_)) {
    const auto ids = map_->keyframe_ids();
    reference_keyframe_ =
        map_->has_keyframe(keyframe_id) ? keyframe_id : (ids.empty() ? -1 : ids.back());
  }
}

void System::triangulate_new_landmarks(int keyframe_id) {
  Keyframe kf = map_->keyframe(keyframe_id);
  const auto neighbors = map_->covisibility_neighbors(keyframe_id);
  const double epi_threshold = deg2rad(params_.init.epipolar_threshold_deg);
  TriangulationParams tri;
  tri.min_parallax_deg = params_.triangulation_min_parallax_deg;

  int visited = 0;
  for (const auto& [n_id, weight] : neighbors) {
    if (++visited > kTriangulationNeighbors) break;
    Keyframe nf = map_->keyframe(n_id);
    const SE3Pose rel = nf.pose * kf.pose.inverse();
    if (rel.translation().norm() < 1e-9) continue;  // no baseline, no depth
    const Mat3 E = essential_from_pose(rel);
    for (const auto& [i, j] : match(kf.features, nf.features, params_.matching)) {
      if (kf.landmark_links[i] != -1 || nf.landmark_links[j] != -1) continue;
      const Vec3& bi = kf.features.bearings[i];
      const Vec3& bj = nf.features.bearings[j];
      if (epipolar_angle(E, bi, bj) > epi_threshold) continue;
      const auto point = triangulate(kf.pose, nf.pose, bi, bj, tri);
      if (!point) continue;
      Landmark lm;
      lm.id = next_landmark_id_++;
      lm.position = *point;
      lm.descriptor = kf.features.descriptors[i];
      lm.first_keyframe_id = keyframe_id;
      lm.found = 2;
      lm.visible = 2;
      map_->add_landmark(lm);
      map_->add_observation(keyframe_id, i, lm.id);
      map_->add_observation(n_id, j, lm.id);
      kf.landmark_links[i] = lm.id;
      nf.landmark_links[j] = lm.id;
    }
  }
}

void System::fuse_duplicates(int keyframe_id,
                             const std::vector<int>& source_keyframes,
                             double window_deg) {
  if (!map_->has_keyframe(keyframe_id)) return;
  Keyframe kf = map_->keyframe(keyframe_id);
  const CameraModel camera = map_->camera(kf.camera_id);
  const double window = deg2rad(window_deg);

  std::set<int> candidates;
  for (int src : source_keyframes) {
    if (!map_->has_keyframe(src)) continue;
    for (int lm : map_->keyframe(src).landmark_links) {
      if (lm >= 0) candidates.insert(lm);
    }
  }
  for (int link : kf.landmark_links) {
    if (link >= 0) candidates.erase(link);
  }

  for (int lm_id : candidates) {
    if (!map_->has_landmark(lm_id)) continue;  // merged away earlier this pass
    const Landmark lm = map_->landmark(lm_id);
    if (lm.observations.count(keyframe_id)) continue;
    const Vec3 in_cam = kf.pose * lm.position;
    if (in_cam.norm() < 1e-9) continue;
    const Bearing predicted = in_cam.normalized();
    if (!camera.project(predicted)) continue;
    int best_kp = -1, best_dist = params_.matching.max_hamming + 1;
    for (std::size_t k = 0; k < kf.features.size(); ++k) {
      if (angle_between(kf.features.bearings[k], predicted) > window) continue;
      const int d = hamming(kf.features.descriptors[k], lm.descriptor);
      if (d < best_dist) {
        best_dist = d;
        best_kp = static_cast<int>(k);
      }
    }
    if (best_kp < 0) continue;
    const int existing = kf.landmark_links[best_kp];
    if (existing == -1) {
      map_->add_observation(keyframe_id, best_kp, lm_id);
      kf.landmark_links[best_kp] = lm_id;
    } else if (existing != lm_id && map_->has_landmark(existing)) {
      // Same physical point reconstructed twice; keep the older landmark.
      const int keep = std::min(existing, lm_id);
      const int drop = std::max(existing, lm_id);
      map_->merge_landmarks(keep, drop);
      kf.landmark_links[best_kp] = keep;
      for (auto& link : kf.landmark_links) {
        if (link == drop) link = keep;
      }
    }
  }
}

void System::local_bundle_adjustment(int keyframe_id) {
  const std::vector<int> local = map_->local_keyframes(keyframe_id, kLocalBaKeyframes);
  if (local.empty()) return;
  const std::set<int> local_set(local.begin(), local.end());

  BaProblem problem;
  std::set<int> landmark_ids;
  for (int id : local) {
    const Keyframe kf = map_->keyframe(id);
    problem.poses[id] = kf.pose;
    for (int lm : kf.landmark_links) {
      if (lm >= 0) landmark_ids.insert(lm);
    }
  }
  for (int lm_id : landmark_ids) {
    const Landmark lm = map_->landmark(lm_id);
    if (lm.observations.size() < 2) continue;
    problem.landmarks[lm_id] = lm.position;
    for (const auto& [kf_id, kp] : lm.observations) {
      const Keyframe obs_kf = map_->keyframe(kf_id);
      if (!problem.poses.count(kf_id)) {
        // External observer: anchors the window without being optimized.
        problem.poses[kf_id] = obs_kf.pose;
        problem.fixed_poses.insert(kf_id);
      }
      problem.factors.push_back(
          {kf_id, lm_id, obs_kf.features.bearings[kp],
           observation_weight(obs_kf.features.keypoints[kp].octave)});
    }
  }
  if (problem.landmarks.empty()) return;
  if (problem.fixed_poses.empty()) {
    problem.fixed_poses.insert(problem.poses.begin()->first);
  }
  if (problem.poses.size() <= problem.fixed_poses.size()) return;

  const BaResult result = solve_local_ba(problem, params_.solver);
  if (!result.ok) return;
  std::map<int, SE3Pose> poses;
  for (const auto& [id, pose] : result.poses) {
    if (!problem.fixed_poses.count(id)) poses[id] = pose;
  }
  map_->apply_correction(poses, result.landmarks);
}

}  // namespace vslam
