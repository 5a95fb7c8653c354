#pragma once

#include "vslam/factors.hpp"
#include "vslam/sim3.hpp"

#include <map>
#include <set>
#include <vector>

namespace vslam {

struct SolverConfig {
  int max_iterations = 20;
  int motion_only_max_iterations = 10;
  double init_lambda = 1e-4;
  double gradient_tol = 1e-12;
  double rel_decrease_tol = 1e-14;
  double huber_delta_scale = 1.5;  // kernel width = scale * sigma
};

struct MotionOnlyFactor {
  Vec3 landmark;  // fixed world position
  Bearing observed;
  double weight = 1.0;  // 1 / sigma^2
};

struct MotionOnlyResult {
  bool ok = false;
  SE3Pose pose;
  std::vector<char> inliers;  // residual within kernel width after the fit
  double final_cost = 0.0;
};

// Levenberg-Marquardt over a single 6-DoF pose, landmarks fixed.
MotionOnlyResult solve_motion_only(const SE3Pose& pose0,
                                   const std::vector<MotionOnlyFactor>& factors,
                                   const SolverConfig& cfg);

// Joint pose/landmark adjustment problem. Poses map world -> camera.
struct BaProblem {
  std::map<int, SE3Pose> poses;
  std::set<int> fixed_poses;  // gauge; must be a subset of poses
  std::map<int, Vec3> landmarks;
  std::vector<ReprojectionFactor> factors;
};

struct BaResult {
  bool ok = false;
  std::map<int, SE3Pose> poses;
  std::map<int, Vec3> landmarks;
  std::vector<double> iteration_costs;  // robust cost after each accepted step
  double final_cost = 0.0;
};

// LM with Schur-complement elimination of the landmarks. Fixed poses are
// returned bit-identical. Throws std::invalid_argument on a malformed problem
// (empty fixed set, factor referencing unknown ids, landmark seen < 2 times).
BaResult solve_local_ba(const BaProblem& problem, const SolverConfig& cfg);

// Same solver over the whole problem with the lowest keyframe id as gauge.
BaResult solve_global_ba(BaProblem problem, const SolverConfig& cfg);

// Pose-graph optimization over Sim(3).
struct Sim3Edge {
  int from = -1;
  int to = -1;
  Sim3Transform measurement;  // expected value of from^{-1} * to
  Mat7 information = Mat7::Identity();
};

struct PoseGraphResult {
  bool ok = false;
  std::map<int, Sim3Transform> nodes;
  double final_cost = 0.0;
};

// LM over 7-DoF nodes minimizing sum of || log(meas^{-1} S_i^{-1} S_j) ||^2_I.
// Throws std::invalid_argument when the graph is disconnected (message names
// an unreachable node) or the fixed node is unknown.
PoseGraphResult solve_pose_graph_sim3(const std::map<int, Sim3Transform>& nodes,
                                      const std::vector<Sim3Edge>& edges,
                                      int fixed_node, const SolverConfig& cfg);

}  // namespace vslam
