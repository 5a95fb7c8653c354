#include "vslam/pipeline.hpp"

#include "vslam/factors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vslam {

namespace {

double angle_between(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0));
}

}  // namespace

PipelineParams pipeline_params_from_config(const Config& config) {
  PipelineParams p;
  p.features.max_keypoints = config.get_int("feature.max_keypoints", p.features.max_keypoints);
  p.features.scale_factor = config.get_double("feature.scale_factor", p.features.scale_factor);
  p.features.num_levels = config.get_int("feature.num_levels", p.features.num_levels);
  p.features.fast_threshold =
      config.get_int("feature.fast_threshold", p.features.fast_threshold);
  p.features.grid_cell_size =
      config.get_int("feature.grid_cell_size", p.features.grid_cell_size);
  p.matching.ratio = config.get_double("matching.ratio", p.matching.ratio);
  p.matching.max_hamming = config.get_int("matching.max_hamming", p.matching.max_hamming);
  p.init.min_inliers = config.get_int("init.min_inliers", p.init.min_inliers);
  p.init.min_parallax_deg =
      config.get_double("init.min_parallax_deg", p.init.min_parallax_deg);
  p.init.ransac_iterations = config.get_int("ransac.iterations", p.init.ransac_iterations);
  p.pnp.ransac_iterations = config.get_int("ransac.iterations", p.pnp.ransac_iterations);
  p.seed = static_cast<std::uint64_t>(config.get_int("ransac.seed", 0));
  p.solver.max_iterations = config.get_int("ba.max_iterations", p.solver.max_iterations);
  p.huber_delta_deg = config.get_double("ba.huber_delta_deg", p.huber_delta_deg);
  p.posegraph_max_iterations =
      config.get_int("posegraph.max_iterations", p.posegraph_max_iterations);
  p.keyframe_max_interval =
      config.get_int("keyframe.max_interval", p.keyframe_max_interval);
  p.keyframe_min_tracked_ratio =
      config.get_double("keyframe.min_tracked_ratio", p.keyframe_min_tracked_ratio);
  p.loop_enabled = config.get_bool("loop.enabled", p.loop_enabled);
  p.loop_min_inliers = config.get_int("loop.min_inliers", p.loop_min_inliers);
  p.relocalization_min_inliers =
      config.get_int("relocalization.min_inliers", p.relocalization_min_inliers);
  return p;
}

System::System(const CameraModel& camera, const PipelineParams& params, Mode mode)
    : map_(std::make_unique<MapDatabase>()), params_(params), mode_(mode),
      rng_(params.seed) {
  map_->register_camera(0, camera);
  // Observation noise model: one pixel of image noise expressed as an angle.
  angular_sigma_ = camera.kind() == CameraKind::Equirectangular
                       ? 2.0 * kPi / camera.width()
                       : 1.0 / camera.fx();
  if (params_.huber_delta_deg > 0.0) {
    params_.solver.huber_delta_scale = deg2rad(params_.huber_delta_deg) / angular_sigma_;
  }
  if (mode_ == Mode::Concurrent) {
    mapping_thread_ = std::thread([this] {
      for (;;) {
        int id = -1;
        {
          std::unique_lock lock(queue_mutex_);
          queue_cv_.wait(lock, [this] { return stop_workers_ || !mapping_queue_.empty(); });
          if (mapping_queue_.empty()) return;
          id = mapping_queue_.front();
          mapping_queue_.pop_front();
        }
        {
          std::scoped_lock stage(stage_mutex_);
          mapping_step(id);
        }
        {
          std::scoped_lock lock(queue_mutex_);
          loop_queue_.push_back(id);
        }
        queue_cv_.notify_all();
      }
    });
    loop_thread_ = std::thread([this] {
      for (;;) {
        int id = -1;
        {
          std::unique_lock lock(queue_mutex_);
          queue_cv_.wait(lock, [this] { return stop_workers_ || !loop_queue_.empty(); });
          if (loop_queue_.empty()) return;
          id = loop_queue_.front();
          loop_queue_.pop_front();
        }
        loop_step(id);
        {
          std::scoped_lock lock(queue_mutex_);
          --in_flight_;
        }
        queue_cv_.notify_all();
      }
    });
  }
}

System::~System() {
  {
    std::scoped_lock lock(queue_mutex_);
    stop_workers_ = true;
  }
  queue_cv_.notify_all();
  if (mapping_thread_.joinable()) mapping_thread_.join();
  if (loop_thread_.joinable()) loop_thread_.join();
}

void System::set_vocabulary(Vocabulary vocabulary) {
  map_->set_vocabulary(std::move(vocabulary));
}

void System::set_localization_only(bool enabled) {
  if (enabled && map_->num_keyframes() == 0) {
    throw std::logic_error("pipeline: localization-only mode requires a loaded map");
  }
  drain_workers();
  localization_only_ = enabled;
  if (enabled && state_ == TrackingStatus::NotInitialized) state_ = TrackingStatus::Lost;
}

void System::save_map(const std::string& path) {
  drain_workers();
  vslam::save_map(*map_, path);
}

void System::load_map(const std::string& path) {
  drain_workers();
  map_ = vslam::load_map(path);
  const auto kf_ids = map_->keyframe_ids();
  next_keyframe_id_ = kf_ids.empty() ? 0 : kf_ids.back() + 1;
  const auto lm_ids = map_->landmark_ids();
  next_landmark_id_ = lm_ids.empty() ? 0 : lm_ids.back() + 1;
  reference_keyframe_ = kf_ids.empty() ? -1 : kf_ids.back();
  state_ = map_->num_keyframes() ? TrackingStatus::Lost : TrackingStatus::NotInitialized;
  records_.clear();
  culled_refs_.clear();
}

FrameResult System::track_frame(const Image& image, double timestamp) {
  FeatureFrame features = detect_and_describe(image, params_.features);
  compute_bearings(features, map_->camera(0));
  return track_features(features, timestamp);
}

FrameResult System::track_frame(const FeatureFrame& features, double timestamp) {
  if (features.bearings.size() != features.size()) {
    FeatureFrame with_bearings = features;
    compute_bearings(with_bearings, map_->camera(0));
    return track_features(with_bearings, timestamp);
  }
  return track_features(features, timestamp);
}

FrameResult System::track_features(const FeatureFrame& features, double timestamp) {
  if (any_frame_ && timestamp <= last_timestamp_) {
    throw std::invalid_argument("pipeline: timestamps must be strictly increasing");
  }
  any_frame_ = true;
  last_timestamp_ = timestamp;

  FrameResult result;
  result.timestamp = timestamp;

  switch (state_) {
    case TrackingStatus::NotInitialized: {
      if (try_initialize(features, timestamp)) {
        result.state = TrackingStatus::Tracking;
        result.pose = last_pose_;
        result.matches = reference_tracked_;
        result.inliers = reference_tracked_;
        result.keyframe_inserted = true;
      } else {
        result.state = TrackingStatus::NotInitialized;
      }
      break;
    }
    case TrackingStatus::Tracking: {
      SE3Pose pose = velocity_ * last_pose_;
      std::vector<TrackedPoint> tracked;
      int matches = 0;
      if (track_with_map(features, pose, tracked, matches)) {
        result.state = TrackingStatus::Tracking;
        result.matches = matches;
        result.inliers = static_cast<int>(tracked.size());
        velocity_ = pose * last_pose_.inverse();
        last_pose_ = pose;
        ++frames_since_keyframe_;
        if (need_new_keyframe(result.inliers)) {
          const int kf_id = insert_keyframe(features, timestamp, pose, tracked);
          result.keyframe_inserted = true;
          // Mapping and loop closing may have refined or corrected the pose;
          // the keyframe itself may even have been culled as redundant.
          if (mode_ == Mode::Stepped && map_->has_keyframe(kf_id)) {
            last_pose_ = map_->keyframe(kf_id).pose;
            velocity_ = SE3Pose::identity();
          }
        }
        result.pose = last_pose_;
        if (const auto ref = map_->try_keyframe(reference_keyframe_)) {
          records_.push_back({timestamp, reference_keyframe_,
                              last_pose_ * ref->pose.inverse()});
        }
      } else {
        state_ = TrackingStatus::Lost;
        result.state = TrackingStatus::Lost;
        result.matches = matches;
      }
      break;
    }
    case TrackingStatus::Lost: {
      std::vector<TrackedPoint> tracked;
      int matches = 0;
      const auto pose = relocalize(features, tracked, matches);
      result.matches = matches;
      if (pose) {
        state_ = TrackingStatus::Tracking;
        last_pose_ = *pose;
        velocity_ = SE3Pose::identity();
        result.state = TrackingStatus::Tracking;
        result.pose = last_pose_;
        result.inliers = static_cast<int>(tracked.size());
        if (const auto ref = map_->try_keyframe(reference_keyframe_)) {
          records_.push_back({timestamp, reference_keyframe_,
                              last_pose_ * ref->pose.inverse()});
        }
      } else {
        result.state = TrackingStatus::Lost;
      }
      break;
    }
  }
  return result;
}

bool System::try_initialize(const FeatureFrame& features, double timestamp) {
  if (localization_only_) return false;
  if (!init_frame_) {
    init_frame_ = features;
    init_timestamp_ = timestamp;
    return false;
  }
  const auto pairs = match(*init_frame_, features, params_.matching);
  if (static_cast<int>(pairs.size()) < params_.init.min_inliers) {
    // Too little overlap with the stored reference; restart from here.
    init_frame_ = features;
    init_timestamp_ = timestamp;
    return false;
  }
  std::vector<Vec3> b1, b2;
  b1.reserve(pairs.size());
  b2.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    b1.push_back(init_frame_->bearings[i]);
    b2.push_back(features.bearings[j]);
  }
  const TwoViewResult tv = estimate_relative_pose_ransac(b1, b2, params_.init, rng_);
  if (!tv.ok()) return false;  // keep the reference, wait for parallax

  // Monocular scale is free; normalize so the median depth in view 1 is 1.
  std::vector<double> depths;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (tv.inlier_mask[k] && tv.points[k]) depths.push_back(tv.points[k]->z());
  }
  if (static_cast<int>(depths.size()) < params_.init.min_inliers) return false;
  std::nth_element(depths.begin(), depths.begin() + depths.size() / 2, depths.end());
  const double median_depth = depths[depths.size() / 2];
  if (median_depth <= 1e-9) return false;
  const double inv_depth = 1.0 / median_depth;

  const SE3Pose pose0 = SE3Pose::identity();
  const SE3Pose pose1(tv.relative_pose.unit_quaternion(),
                      tv.relative_pose.translation() * inv_depth);

  const int kf0 = next_keyframe_id_++;
  const int kf1 = next_keyframe_id_++;
  std::vector<int> links0(init_frame_->size(), -1);
  std::vector<int> links1(features.size(), -1);
  int created = 0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (!tv.inlier_mask[k] || !tv.points[k]) continue;
    Landmark lm;
    lm.id = next_landmark_id_++;
    lm.position = *tv.points[k] * inv_depth;
    lm.descriptor = features.descriptors[pairs[k].second];
    lm.first_keyframe_id = kf0;
    lm.found = 2;
    lm.visible = 2;
    map_->add_landmark(lm);
    links0[pairs[k].first] = lm.id;
    links1[pairs[k].second] = lm.id;
    ++created;
  }

  Keyframe f0;
  f0.id = kf0;
  f0.timestamp = init_timestamp_;
  f0.pose = pose0;
  f0.features = *init_frame_;
  f0.landmark_links = links0;
  map_->insert_keyframe(f0);
  Keyframe f1;
  f1.id = kf1;
  f1.timestamp = timestamp;
  f1.pose = pose1;
  f1.features = features;
  f1.landmark_links = links1;
  map_->insert_keyframe(f1);

  // Refine the bootstrap with a two-keyframe bundle adjustment.
  local_bundle_adjustment(kf1);

  state_ = TrackingStatus::Tracking;
  reference_keyframe_ = kf1;
  reference_tracked_ = created;
  frames_since_keyframe_ = 0;
  last_pose_ = map_->keyframe(kf1).pose;
  velocity_ = SE3Pose::identity();
  records_.push_back({init_timestamp_, kf0, SE3Pose::identity()});
  records_.push_back({timestamp, kf1, SE3Pose::identity()});
  init_frame_.reset();
  return true;
}

int System::match_against_keyframe(const FeatureFrame& features, const Keyframe& kf,
                                   std::vector<TrackedPoint>& tracked) const {
  const auto pairs = match(features, kf.features, params_.matching);
  int added = 0;
  for (const auto& [i, j] : pairs) {
    const int lm = kf.landmark_links[j];
    if (lm < 0) continue;
    tracked.push_back({i, lm});
    ++added;
  }
  return added;
}

int System::project_local_map(const FeatureFrame& features, const SE3Pose& pose,
                              double window_deg, std::vector<TrackedPoint>& tracked,
                              std::vector<int>* predicted_visible) const {
  const CameraModel camera = map_->camera(0);
  std::set<int> used_landmarks, used_keypoints;
  for (const auto& t : tracked) {
    used_landmarks.insert(t.landmark);
    used_keypoints.insert(t.keypoint);
  }
  std::set<int> candidate_landmarks;
  for (int kf_id : map_->local_keyframes(reference_keyframe_, params_.local_map_keyframes)) {
    const auto kf = map_->try_keyframe(kf_id);
    if (!kf) continue;
    for (int lm : kf->landmark_links) {
      if (lm >= 0) candidate_landmarks.insert(lm);
    }
  }
  const double window = deg2rad(window_deg);
  int added = 0;
  for (int lm_id : candidate_landmarks) {
    if (used_landmarks.count(lm_id)) continue;
    const auto maybe_lm = map_->try_landmark(lm_id);
    if (!maybe_lm) continue;
    const Landmark& lm = *maybe_lm;
    const Vec3 in_cam = pose * lm.position;
    if (in_cam.norm() < 1e-9) continue;
    const Bearing predicted = in_cam.normalized();
    if (!camera.project(predicted)) continue;
    if (predicted_visible) predicted_visible->push_back(lm_id);
    int best_kp = -1, best_dist = params_.matching.max_hamming + 1;
    for (std::size_t k = 0; k < features.size(); ++k) {
      if (used_keypoints.count(static_cast<int>(k))) continue;
      if (angle_between(features.bearings[k], predicted) > window) continue;
      const int d = hamming(features.descriptors[k], lm.descriptor);
      if (d < best_dist) {
        best_dist = d;
        best_kp = static_cast<int>(k);
      }
    }
    if (best_kp < 0) continue;
    tracked.push_back({best_kp, lm_id});
    used_keypoints.insert(best_kp);
    ++added;
  }
  return added;
}

MotionOnlyResult System::optimize_pose(const FeatureFrame& features, const SE3Pose& pose0,
                                       std::vector<TrackedPoint>& tracked) const {
  std::vector<MotionOnlyFactor> factors;
  factors.reserve(tracked.size());
  std::vector<TrackedPoint> alive;
  alive.reserve(tracked.size());
  for (const auto& t : tracked) {
    const auto lm = map_->try_landmark(t.landmark);
    if (!lm) continue;  // culled since it was collected
    alive.push_back(t);
    factors.push_back({lm->position, features.bearings[t.keypoint],
                       observation_weight(features.keypoints[t.keypoint].octave)});
  }
  tracked.swap(alive);
  const MotionOnlyResult res = solve_motion_only(pose0, factors, params_.solver);
  std::vector<TrackedPoint> inliers;
  for (std::size_t k = 0; k < tracked.size(); ++k) {
    if (res.inliers[k]) inliers.push_back(tracked[k]);
  }
  tracked.swap(inliers);
  return res;
}

bool System::track_with_map(const FeatureFrame& features, SE3Pose& pose,
                            std::vector<TrackedPoint>& tracked, int& matches) {
  const SE3Pose predicted = pose;
  if (const auto ref = map_->try_keyframe(reference_keyframe_)) {
    matches = match_against_keyframe(features, *ref, tracked);
  }
  if (matches >= params_.min_tracked_matches) {
    const MotionOnlyResult res = optimize_pose(features, predicted, tracked);
    if (res.ok) pose = res.pose;
  }
  if (static_cast<int>(tracked.size()) < params_.min_tracked_matches) {
    // Robust fallback: re-match the whole local map through a wide window
    // around the motion-model prediction.
    tracked.clear();
    matches = project_local_map(features, predicted, params_.wide_match_angle_deg,
                                tracked, nullptr);
    if (matches < params_.min_tracked_matches) return false;
    const MotionOnlyResult res = optimize_pose(features, predicted, tracked);
    if (!res.ok || static_cast<int>(tracked.size()) < params_.min_tracked_matches) {
      return false;
    }
    pose = res.pose;
  }

  // Local-map tracking: project the covisibility surroundings and refine.
  std::vector<int> predicted_visible;
  matches += project_local_map(features, pose, params_.local_match_angle_deg, tracked,
                               &predicted_visible);
  const MotionOnlyResult res = optimize_pose(features, pose, tracked);
  if (!res.ok || static_cast<int>(tracked.size()) < params_.min_tracked_matches) {
    return false;
  }
  pose = res.pose;

  if (!localization_only_) {
    std::set<int> found;
    for (const auto& t : tracked) found.insert(t.landmark);
    for (int lm : predicted_visible) {
      map_->record_landmark_visibility(lm, found.count(lm) > 0);
    }
  }
  return true;
}

bool System::need_new_keyframe(int inliers) const {
  if (localization_only_) return false;
  {
    std::scoped_lock lock(queue_mutex_);
    if (global_opt_running_) return false;
  }
  if (reference_tracked_ <= 0) return frames_since_keyframe_ >= params_.keyframe_max_interval;
  const double ratio =
      static_cast<double>(inliers) / static_cast<double>(reference_tracked_);
  // The interval clause handles slow change; a frame that still tracks
  // everything the reference keyframe currently holds adds nothing, so a
  // stationary camera never grows the map. Mapping keeps extending the
  // reference after insertion, so compare against its live link count.
  if (frames_since_keyframe_ >= params_.keyframe_max_interval) {
    if (const auto ref = map_->try_keyframe(reference_keyframe_)) {
      int reference_links = 0;
      for (int l : ref->landmark_links) reference_links += l >= 0;
      if (inliers < 0.999 * reference_links) return true;
    }
  }
  return ratio < params_.keyframe_min_tracked_ratio &&
         inliers > params_.keyframe_min_matches;
}

int System::insert_keyframe(const FeatureFrame& features, double timestamp,
                            const SE3Pose& pose,
                            const std::vector<TrackedPoint>& tracked) {
  Keyframe kf;
  kf.id = next_keyframe_id_++;
  kf.timestamp = timestamp;
  kf.pose = pose;
  kf.features = features;
  kf.landmark_links.assign(features.size(), -1);
  for (const auto& t : tracked) {
    if (kf.landmark_links[t.keypoint] != -1) continue;
    // A landmark may not gain two observations in one keyframe.
    const auto lm = map_->try_landmark(t.landmark);
    if (lm && !lm->observations.count(kf.id)) {
      kf.landmark_links[t.keypoint] = t.landmark;
    }
  }
  map_->insert_keyframe(kf);
  reference_keyframe_ = kf.id;
  reference_tracked_ = static_cast<int>(tracked.size());
  frames_since_keyframe_ = 0;
  enqueue_keyframe(kf.id);
  return kf.id;
}

std::optional<SE3Pose> System::relocalize(const FeatureFrame& features,
                                          std::vector<TrackedPoint>& tracked,
                                          int& matches) {
  const auto candidates = map_->query_similar_keyframes(features, {});
  int tried = 0;
  for (const auto& [kf_id, score] : candidates) {
    if (++tried > 5) break;
    const auto cand_kf = map_->try_keyframe(kf_id);
    if (!cand_kf) continue;
    std::vector<TrackedPoint> local;
    const int n = match_against_keyframe(features, *cand_kf, local);
    matches = std::max(matches, n);
    if (n < 6) continue;
    std::vector<Vec3> bearings, points;
    std::vector<TrackedPoint> alive;
    for (const auto& t : local) {
      const auto lm = map_->try_landmark(t.landmark);
      if (!lm) continue;
      alive.push_back(t);
      bearings.push_back(features.bearings[t.keypoint]);
      points.push_back(lm->position);
    }
    local.swap(alive);
    PnpParams pnp = params_.pnp;
    pnp.min_inliers = std::min(pnp.min_inliers, params_.relocalization_min_inliers);
    const PnpResult res = solve_pnp_ransac(bearings, points, pnp, rng_);
    if (!res.ok) continue;
    std::vector<TrackedPoint> inliers;
    for (std::size_t k = 0; k < local.size(); ++k) {
      if (res.inlier_mask[k]) inliers.push_back(local[k]);
    }
    SE3Pose pose = res.pose;
    const MotionOnlyResult refined = optimize_pose(features, pose, inliers);
    if (!refined.ok ||
        static_cast<int>(inliers.size()) < params_.relocalization_min_inliers) {
      continue;
    }
    reference_keyframe_ = kf_id;
    reference_tracked_ = static_cast<int>(inliers.size());
    tracked = std::move(inliers);
    return refined.pose;
  }
  return std::nullopt;
}

double System::observation_weight(int octave) const {
  const double sigma =
      angular_sigma_ * std::pow(params_.features.scale_factor, std::max(0, octave));
  return 1.0 / (sigma * sigma);
}

void System::enqueue_keyframe(int keyframe_id) {
  if (mode_ == Mode::Stepped) {
    mapping_step(keyframe_id);
    loop_step(keyframe_id);
    return;
  }
  {
    std::scoped_lock lock(queue_mutex_);
    mapping_queue_.push_back(keyframe_id);
    ++in_flight_;
  }
  queue_cv_.notify_all();
}

void System::drain_workers() {
  if (mode_ == Mode::Stepped) return;
  std::unique_lock lock(queue_mutex_);
  queue_cv_.wait(lock, [this] {
    return mapping_queue_.empty() && loop_queue_.empty() && in_flight_ == 0;
  });
}

Trajectory System::shutdown() {
  drain_workers();
  Trajectory traj;
  traj.reserve(records_.size());
  for (const auto& rec : records_) {
    SE3Pose rel = rec.camera_from_reference;
    int ref = rec.reference_keyframe;
    // Chase references through culled keyframes to a surviving ancestor.
    while (!map_->has_keyframe(ref)) {
      auto it = culled_refs_.find(ref);
      if (it == culled_refs_.end()) break;
      rel = rel * it->second.second;
      ref = it->second.first;
    }
    if (!map_->has_keyframe(ref)) continue;
    const SE3Pose pose = rel * map_->keyframe(ref).pose;  // world -> camera
    traj.push_back({rec.timestamp, pose.inverse()});
  }
  return traj;
}

}  // namespace vslam
