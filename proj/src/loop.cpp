#include "vslam/pipeline.hpp"

#include "vslam/eval.hpp"
#include "vslam/factors.hpp"

#include <algorithm>
#include <cmath>

namespace vslam {

namespace {

constexpr int kLoopCandidates = 3;
constexpr int kLoopRansacIterations = 200;
constexpr double kLoopInlierAngleDeg = 1.5;

double angle_between(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0));
}

}  // namespace

void System::loop_step(int keyframe_id) {
  if (!params_.loop_enabled) return;
  if (map_->num_keyframes() < 5) return;
  const auto maybe_kf = map_->try_keyframe(keyframe_id);
  if (!maybe_kf) return;
  const Keyframe& kf = *maybe_kf;
  std::set<int> covisible{keyframe_id};
  for (const auto& [n, _] : map_->covisibility_neighbors(keyframe_id)) {
    covisible.insert(n);
  }

  const auto candidates = map_->query_similar_keyframes(kf.features, covisible);
  int examined = 0;
  for (const auto& [cand_id, score] : candidates) {
    if (covisible.count(cand_id)) continue;
    if (map_->covisibility_weight(keyframe_id, cand_id) > 0) continue;
    const auto maybe_cand = map_->try_keyframe(cand_id);
    if (!maybe_cand) continue;
    if (++examined > kLoopCandidates) break;

    const Keyframe& cand = *maybe_cand;
    // Landmark pairs via descriptor matching: (current-world, loop-world).
    std::vector<Vec3> p_new, p_old;
    std::vector<Bearing> cand_bearings;
    std::set<std::pair<int, int>> seen;
    for (const auto& [i, j] : match(kf.features, cand.features, params_.matching)) {
      const int lm_n = kf.landmark_links[i];
      const int lm_o = cand.landmark_links[j];
      if (lm_n < 0 || lm_o < 0) continue;
      const auto a = map_->try_landmark(lm_n);
      const auto b = map_->try_landmark(lm_o);
      if (!a || !b) continue;
      if (!seen.insert({lm_n, lm_o}).second) continue;
      p_new.push_back(a->position);
      p_old.push_back(b->position);
      cand_bearings.push_back(cand.features.bearings[j]);
    }
    if (static_cast<int>(p_new.size()) < params_.loop_min_inliers) continue;

    // Sim3 by 3-point Umeyama inside RANSAC; inliers judged by reprojection
    // into the loop keyframe.
    const double threshold = deg2rad(kLoopInlierAngleDeg);
    auto count_inliers = [&](const Sim3Transform& T, std::vector<char>& mask) {
      int count = 0;
      mask.assign(p_new.size(), 0);
      for (std::size_t k = 0; k < p_new.size(); ++k) {
        const Vec3 in_cand = cand.pose * T.apply(p_new[k]);
        if (in_cand.norm() < 1e-9) continue;
        if (angle_between(in_cand, cand_bearings[k]) > threshold) continue;
        mask[k] = 1;
        ++count;
      }
      return count;
    };

    std::uniform_int_distribution<std::size_t> pick(0, p_new.size() - 1);
    Sim3Transform best;
    int best_inliers = 0;
    std::vector<char> mask;
    for (int iter = 0; iter < kLoopRansacIterations; ++iter) {
      std::size_t a = pick(rng_), b = pick(rng_), c = pick(rng_);
      if (a == b || a == c || b == c) continue;
      try {
        const Sim3Transform T = umeyama_align({p_new[a], p_new[b], p_new[c]},
                                              {p_old[a], p_old[b], p_old[c]}, true);
        const int n = count_inliers(T, mask);
        if (n > best_inliers) {
          best_inliers = n;
          best = T;
        }
      } catch (const std::invalid_argument&) {
        continue;  // degenerate sample
      }
    }
    if (best_inliers < params_.loop_min_inliers) continue;

    // Refit on the consensus set.
    count_inliers(best, mask);
    std::vector<Vec3> in_new, in_old;
    for (std::size_t k = 0; k < p_new.size(); ++k) {
      if (mask[k]) {
        in_new.push_back(p_new[k]);
        in_old.push_back(p_old[k]);
      }
    }
    try {
      best = umeyama_align(in_new, in_old, true);
    } catch (const std::invalid_argument&) {
      continue;
    }
    const int inliers = count_inliers(best, mask);
    if (inliers < params_.loop_min_inliers) continue;

    run_loop_closure(keyframe_id, cand_id, best, inliers);
    return;
  }
}

void System::run_loop_closure(int keyframe_id, int candidate_id,
                              const Sim3Transform& cand_from_new, int inliers) {
  {
    std::scoped_lock lock(queue_mutex_);
    global_opt_running_ = true;
  }
  {
    std::scoped_lock stage(stage_mutex_);

    // Pre-correction snapshot.
    std::map<int, Sim3Transform> pre;
    for (int id : map_->keyframe_ids()) {
      pre[id] = Sim3Transform::from_se3(map_->keyframe(id).pose);
    }

    // Correct the loop keyframe's covisible neighborhood by the relative Sim3.
    std::set<int> neighborhood{keyframe_id};
    for (const auto& [n, _] : map_->covisibility_neighbors(keyframe_id)) {
      neighborhood.insert(n);
    }
    const Sim3Transform new_from_cand_world = cand_from_new.inverse();
    std::map<int, Sim3Transform> init = pre;
    for (int id : neighborhood) init[id] = pre[id] * new_from_cand_world;

    // Essential graph: spanning tree, strong covisibility, loop edges.
    std::set<std::pair<int, int>> edge_set;
    auto add_edge = [&](int a, int b) {
      if (a > b) std::swap(a, b);
      if (a != b && a >= 0) edge_set.insert({a, b});
    };
    for (const auto& [child, parent] : map_->spanning_tree_edges()) add_edge(child, parent);
    for (const auto& [a, b] : map_->loop_edges()) add_edge(a, b);
    for (int id : map_->keyframe_ids()) {
      for (const auto& [n, w] : map_->covisibility_neighbors(
               id, params_.essential_covisibility_threshold)) {
        add_edge(id, n);
      }
    }
    add_edge(candidate_id, keyframe_id);

    std::vector<Sim3Edge> edges;
    for (const auto& [a, b] : edge_set) {
      Sim3Edge e;
      e.from = a;
      e.to = b;
      if ((a == candidate_id && b == keyframe_id) ||
          (a == keyframe_id && b == candidate_id)) {
        // The verified loop constraint, expressed with the corrected keyframe.
        e.measurement = init.at(a).inverse() * init.at(b);
      } else {
        e.measurement = pre.at(a).inverse() * pre.at(b);
      }
      edges.push_back(e);
    }

    SolverConfig pg_cfg = params_.solver;
    pg_cfg.max_iterations = params_.posegraph_max_iterations;
    PoseGraphResult pg;
    try {
      pg = solve_pose_graph_sim3(init, edges, candidate_id, pg_cfg);
    } catch (const std::invalid_argument&) {
      std::scoped_lock lock(queue_mutex_);
      global_opt_running_ = false;
      return;
    }
    if (!pg.ok) {
      std::scoped_lock lock(queue_mutex_);
      global_opt_running_ = false;
      return;
    }

    // Apply: Sim3 nodes back to SE3 poses, landmarks via their anchor
    // keyframe so each point moves with the pose that created it.
    std::map<int, SE3Pose> poses;
    for (const auto& [id, node] : pg.nodes) {
      poses[id] = SE3Pose(Quat(node.rotation()), node.translation() / node.scale());
    }
    std::map<int, Vec3> positions;
    for (int lm_id : map_->landmark_ids()) {
      const Landmark lm = map_->landmark(lm_id);
      if (lm.observations.empty()) continue;
      int anchor = lm.observations.begin()->first;
      const Vec3 p = lm.position;
      const Vec3 p_mid = neighborhood.count(anchor) ? cand_from_new.apply(p) : p;
      positions[lm_id] = pg.nodes.at(anchor).inverse().apply(init.at(anchor).apply(p_mid));
    }
    map_->apply_correction(poses, positions);
    map_->add_loop_edge(candidate_id, keyframe_id);

    // Stitch the two sides together: absorb duplicated landmarks across the
    // whole corrected neighborhood so covisibility spans the closure and the
    // subsequent bundle adjustment sees one seam-free map.
    std::vector<int> sources{candidate_id};
    for (const auto& [n, _] : map_->covisibility_neighbors(candidate_id)) {
      sources.push_back(n);
    }
    for (int id : neighborhood) {
      fuse_duplicates(id, sources, params_.wide_match_angle_deg);
    }
    std::vector<int> new_side(neighborhood.begin(), neighborhood.end());
    for (int src : sources) {
      fuse_duplicates(src, new_side, params_.wide_match_angle_deg);
    }

    loop_closures_.push_back({keyframe_id, candidate_id, inliers});

    run_global_ba();
    // The first adjustment tightens the seam; a second fuse pass catches
    // duplicates that were too far apart before it, then settles the map.
    for (int id : neighborhood) {
      fuse_duplicates(id, sources, params_.wide_match_angle_deg);
    }
    for (int src : sources) {
      fuse_duplicates(src, new_side, params_.wide_match_angle_deg);
    }
    run_global_ba();
  }
  {
    std::scoped_lock lock(queue_mutex_);
    global_opt_running_ = false;
  }
}

void System::run_global_ba() {
  BaProblem problem;
  for (int id : map_->keyframe_ids()) {
    problem.poses[id] = map_->keyframe(id).pose;
  }
  if (problem.poses.size() < 2) return;
  for (int lm_id : map_->landmark_ids()) {
    const Landmark lm = map_->landmark(lm_id);
    if (lm.observations.size() < 2) continue;
    problem.landmarks[lm_id] = lm.position;
    for (const auto& [kf_id, kp] : lm.observations) {
      const Keyframe kf = map_->keyframe(kf_id);
      problem.factors.push_back(
          {kf_id, lm_id, kf.features.bearings[kp],
           observation_weight(kf.features.keypoints[kp].octave)});
    }
  }
  if (problem.landmarks.empty()) return;

  const BaResult result = solve_global_ba(problem, params_.solver);
  if (!result.ok) return;
  map_->apply_correction(result.poses, result.landmarks);
}

}  // namespace vslam
