#include "vslam/solvers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <stdexcept>

namespace vslam {

namespace {

double motion_cost(const SE3Pose& pose, const std::vector<MotionOnlyFactor>& factors,
                   double delta_scale) {
  double cost = 0.0;
  for (const auto& f : factors) {
    const auto ev = evaluate_reprojection(pose, f.landmark, f.observed, false);
    if (!ev.valid) continue;
    const double sigma = 1.0 / std::sqrt(f.weight);
    cost += f.weight * huber_cost(ev.residual.norm(), delta_scale * sigma);
  }
  return cost;
}

}  // namespace

namespace {

// One robustified LM pass over the pose; returns false when the very first
// step already stalls at the damping cap (a tracking-failure signal).
bool motion_lm_pass(SE3Pose& pose, const std::vector<MotionOnlyFactor>& factors,
                    const SolverConfig& cfg) {
  double lambda = cfg.init_lambda;
  double cost = motion_cost(pose, factors, cfg.huber_delta_scale);
  bool any_accept = false;

  for (int iter = 0; iter < cfg.motion_only_max_iterations; ++iter) {
    Mat6 H = Mat6::Zero();
    Vec6 g = Vec6::Zero();
    for (const auto& f : factors) {
      const auto ev = evaluate_reprojection(pose, f.landmark, f.observed);
      if (!ev.valid) continue;
      const double sigma = 1.0 / std::sqrt(f.weight);
      const double w = f.weight * huber_weight(ev.residual.norm(), cfg.huber_delta_scale * sigma);
      H += w * ev.J_pose.transpose() * ev.J_pose;
      g += w * ev.J_pose.transpose() * ev.residual;
    }
    if (g.lpNorm<Eigen::Infinity>() < cfg.gradient_tol) return true;
    const Mat6 Hd = H + lambda * Mat6::Identity();
    const Vec6 delta = Hd.ldlt().solve(-g);
    if (!delta.allFinite()) {
      lambda *= 10.0;
      continue;
    }
    const SE3Pose candidate = SE3Pose::exp(delta) * pose;
    const double new_cost = motion_cost(candidate, factors, cfg.huber_delta_scale);
    if (new_cost < cost) {
      const double rel = (cost - new_cost) / std::max(cost, 1e-300);
      pose = candidate;
      cost = new_cost;
      lambda *= 0.5;
      any_accept = true;
      if (rel < cfg.rel_decrease_tol) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) return any_accept;
    }
  }
  return true;
}

}  // namespace

MotionOnlyResult solve_motion_only(const SE3Pose& pose0,
                                   const std::vector<MotionOnlyFactor>& factors,
                                   const SolverConfig& cfg) {
  MotionOnlyResult result;
  result.pose = pose0;
  result.inliers.assign(factors.size(), 0);
  if (factors.size() < 3) return result;

  SE3Pose pose = pose0;
  if (!motion_lm_pass(pose, factors, cfg)) return result;  // diverged

  // Re-fit on the flagged inlier set to shed the residual outlier bias; a
  // second round with refreshed flags is enough in practice.
  for (int round = 0; round < 2; ++round) {
    std::vector<MotionOnlyFactor> kept;
    kept.reserve(factors.size());
    for (const auto& f : factors) {
      const auto ev = evaluate_reprojection(pose, f.landmark, f.observed, false);
      const double sigma = 1.0 / std::sqrt(f.weight);
      if (ev.valid && ev.residual.norm() <= cfg.huber_delta_scale * sigma) kept.push_back(f);
    }
    if (kept.size() < 3 || kept.size() == factors.size()) break;
    motion_lm_pass(pose, kept, cfg);
  }

  result.ok = true;
  result.pose = pose;
  result.final_cost = motion_cost(pose, factors, cfg.huber_delta_scale);
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const auto ev = evaluate_reprojection(pose, factors[i].landmark, factors[i].observed, false);
    const double sigma = 1.0 / std::sqrt(factors[i].weight);
    result.inliers[i] =
        ev.valid && ev.residual.norm() <= cfg.huber_delta_scale * sigma ? 1 : 0;
  }
  return result;
}

namespace {

struct BaState {
  std::vector<SE3Pose> poses;      // all poses, indexed densely
  std::vector<Vec3> landmarks;
};

struct BaIndex {
  std::vector<int> pose_ids;                  // dense idx -> id
  std::vector<int> landmark_ids;
  std::map<int, int> pose_idx;                // id -> dense idx
  std::map<int, int> landmark_idx;
  std::vector<int> free_of_pose;              // dense pose idx -> free idx or -1
  int num_free = 0;
};

struct FactorRef {
  int pose = 0;      // dense pose index
  int lm = 0;        // dense landmark index
  Bearing observed;
  double weight = 1.0;
};

double ba_cost(const BaState& s, const std::vector<FactorRef>& factors,
               double delta_scale) {
  double cost = 0.0;
  for (const auto& f : factors) {
    const auto ev =
        evaluate_reprojection(s.poses[f.pose], s.landmarks[f.lm], f.observed, false);
    if (!ev.valid) continue;
    const double sigma = 1.0 / std::sqrt(f.weight);
    cost += f.weight * huber_cost(ev.residual.norm(), delta_scale * sigma);
  }
  return cost;
}

}  // namespace

BaResult solve_local_ba(const BaProblem& problem, const SolverConfig& cfg) {
  if (problem.fixed_poses.empty()) {
    throw std::invalid_argument("local BA: fixed (gauge) set is empty");
  }
  for (int id : problem.fixed_poses) {
    if (!problem.poses.count(id)) {
      throw std::invalid_argument("local BA: fixed pose not in problem: " + std::to_string(id));
    }
  }
  std::map<int, int> obs_count;
  for (const auto& f : problem.factors) {
    if (!problem.poses.count(f.keyframe_id) || !problem.landmarks.count(f.landmark_id)) {
      throw std::invalid_argument("local BA: factor references unknown id");
    }
    if (f.weight <= 0.0) throw std::invalid_argument("local BA: non-positive factor weight");
    ++obs_count[f.landmark_id];
  }
  for (const auto& [id, cnt] : obs_count) {
    if (cnt < 2) {
      throw std::invalid_argument("local BA: landmark observed < 2 times: " + std::to_string(id));
    }
  }

  BaIndex index;
  BaState state;
  for (const auto& [id, pose] : problem.poses) {
    index.pose_idx[id] = static_cast<int>(index.pose_ids.size());
    index.pose_ids.push_back(id);
    state.poses.push_back(pose);
  }
  for (const auto& [id, pos] : problem.landmarks) {
    index.landmark_idx[id] = static_cast<int>(index.landmark_ids.size());
    index.landmark_ids.push_back(id);
    state.landmarks.push_back(pos);
  }
  index.free_of_pose.assign(state.poses.size(), -1);
  for (std::size_t i = 0; i < index.pose_ids.size(); ++i) {
    if (!problem.fixed_poses.count(index.pose_ids[i])) {
      index.free_of_pose[i] = index.num_free++;
    }
  }

  std::vector<FactorRef> factors;
  factors.reserve(problem.factors.size());
  for (const auto& f : problem.factors) {
    factors.push_back({index.pose_idx.at(f.keyframe_id), index.landmark_idx.at(f.landmark_id),
                       f.observed, f.weight});
  }

  const int np = 6 * index.num_free;
  const int nl = static_cast<int>(state.landmarks.size());

  BaResult result;
  double lambda = cfg.init_lambda;
  double cost = ba_cost(state, factors, cfg.huber_delta_scale);
  bool solver_failed = false;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    Eigen::MatrixXd Hpp = Eigen::MatrixXd::Zero(np, np);
    Eigen::VectorXd gp = Eigen::VectorXd::Zero(np);
    std::vector<Mat3> Hll(nl, Mat3::Zero());
    std::vector<Vec3> gl(nl, Vec3::Zero());
    // Off-diagonal pose-landmark blocks, grouped per landmark.
    std::vector<std::vector<std::pair<int, Eigen::Matrix<double, 6, 3>>>> W(nl);

    for (const auto& f : factors) {
      const auto ev = evaluate_reprojection(state.poses[f.pose], state.landmarks[f.lm], f.observed);
      if (!ev.valid) continue;
      const double sigma = 1.0 / std::sqrt(f.weight);
      const double w = f.weight * huber_weight(ev.residual.norm(), cfg.huber_delta_scale * sigma);
      const int fp = index.free_of_pose[f.pose];
      Hll[f.lm] += w * ev.J_landmark.transpose() * ev.J_landmark;
      gl[f.lm] += w * ev.J_landmark.transpose() * ev.residual;
      if (fp >= 0) {
        Hpp.block<6, 6>(6 * fp, 6 * fp) += w * ev.J_pose.transpose() * ev.J_pose;
        gp.segment<6>(6 * fp) += w * ev.J_pose.transpose() * ev.residual;
        W[f.lm].emplace_back(fp, w * ev.J_pose.transpose() * ev.J_landmark);
      }
    }

    double grad_inf = gp.size() > 0 ? gp.lpNorm<Eigen::Infinity>() : 0.0;
    for (const auto& v : gl) grad_inf = std::max(grad_inf, v.lpNorm<Eigen::Infinity>());
    if (grad_inf < cfg.gradient_tol) break;

    // Damp and eliminate the landmarks (Schur complement).
    Eigen::MatrixXd S = Hpp + lambda * Eigen::MatrixXd::Identity(np, np);
    Eigen::VectorXd bs = -gp;
    std::vector<Mat3> Hll_inv(nl);
    bool singular = false;
    for (int l = 0; l < nl; ++l) {
      const Mat3 D = Hll[l] + lambda * Mat3::Identity();
      const Mat3 Dinv = D.inverse();
      if (!Dinv.allFinite()) {
        singular = true;
        break;
      }
      Hll_inv[l] = Dinv;
      for (const auto& [pi, Wi] : W[l]) {
        bs.segment<6>(6 * pi) += Wi * Dinv * gl[l];
        for (const auto& [pj, Wj] : W[l]) {
          S.block<6, 6>(6 * pi, 6 * pj) -= Wi * Dinv * Wj.transpose();
        }
      }
    }
    if (singular) {
      lambda *= 10.0;
      if (lambda > 1e12) {
        solver_failed = result.iteration_costs.empty();
        break;
      }
      continue;
    }

    Eigen::VectorXd dp = Eigen::VectorXd::Zero(np);
    if (np > 0) {
      dp = S.ldlt().solve(bs);
      if (!dp.allFinite()) {
        lambda *= 10.0;
        if (lambda > 1e12) {
          solver_failed = result.iteration_costs.empty();
          break;
        }
        continue;
      }
    }

    BaState candidate = state;
    for (std::size_t i = 0; i < state.poses.size(); ++i) {
      const int fp = index.free_of_pose[i];
      if (fp >= 0) {
        candidate.poses[i] = SE3Pose::exp(dp.segment<6>(6 * fp)) * state.poses[i];
      }
    }
    for (int l = 0; l < nl; ++l) {
      Vec3 rhs = -gl[l];
      for (const auto& [pi, Wi] : W[l]) rhs -= Wi.transpose() * dp.segment<6>(6 * pi);
      candidate.landmarks[l] = state.landmarks[l] + Hll_inv[l] * rhs;
    }

    const double new_cost = ba_cost(candidate, factors, cfg.huber_delta_scale);
    if (new_cost < cost) {
      const double rel = (cost - new_cost) / std::max(cost, 1e-300);
      state = candidate;
      cost = new_cost;
      result.iteration_costs.push_back(cost);
      lambda *= 0.5;
      if (rel < cfg.rel_decrease_tol) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }

  if (solver_failed) {
    // Rank-deficient even at the damping cap: report the input state.
    result.ok = false;
    result.poses = problem.poses;
    result.landmarks = problem.landmarks;
    return result;
  }
  result.ok = true;
  result.final_cost = cost;
  for (std::size_t i = 0; i < index.pose_ids.size(); ++i) {
    const int id = index.pose_ids[i];
    // Gauge contract: fixed poses pass through bit-identical.
    result.poses[id] =
        problem.fixed_poses.count(id) ? problem.poses.at(id) : state.poses[i];
  }
  for (std::size_t l = 0; l < index.landmark_ids.size(); ++l) {
    result.landmarks[index.landmark_ids[l]] = state.landmarks[l];
  }
  return result;
}

BaResult solve_global_ba(BaProblem problem, const SolverConfig& cfg) {
  if (problem.poses.empty()) throw std::invalid_argument("global BA: empty problem");
  problem.fixed_poses = {problem.poses.begin()->first};
  return solve_local_ba(problem, cfg);
}

PoseGraphResult solve_pose_graph_sim3(const std::map<int, Sim3Transform>& nodes,
                                      const std::vector<Sim3Edge>& edges,
                                      int fixed_node, const SolverConfig& cfg) {
  if (!nodes.count(fixed_node)) {
    throw std::invalid_argument("pose graph: fixed node not in graph: " +
                                std::to_string(fixed_node));
  }
  // Connectivity check from the fixed node.
  {
    std::map<int, std::vector<int>> adj;
    for (const auto& e : edges) {
      if (!nodes.count(e.from) || !nodes.count(e.to)) {
        throw std::invalid_argument("pose graph: edge references unknown node");
      }
      adj[e.from].push_back(e.to);
      adj[e.to].push_back(e.from);
    }
    std::set<int> seen = {fixed_node};
    std::vector<int> stack = {fixed_node};
    while (!stack.empty()) {
      const int n = stack.back();
      stack.pop_back();
      for (int m : adj[n]) {
        if (seen.insert(m).second) stack.push_back(m);
      }
    }
    for (const auto& [id, _] : nodes) {
      if (!seen.count(id)) {
        throw std::invalid_argument("pose graph: node unreachable from fixed node: " +
                                    std::to_string(id));
      }
    }
  }

  std::vector<int> ids;
  std::map<int, int> idx;
  std::vector<Sim3Transform> state;
  for (const auto& [id, s] : nodes) {
    idx[id] = static_cast<int>(ids.size());
    ids.push_back(id);
    state.push_back(s);
  }
  const int fixed_idx = idx.at(fixed_node);
  auto free_idx = [&](int i) { return i < fixed_idx ? i : i - 1; };
  const int nf = static_cast<int>(ids.size()) - 1;

  auto total_cost = [&](const std::vector<Sim3Transform>& s) {
    double c = 0.0;
    for (const auto& e : edges) {
      const Vec7 r =
          (e.measurement.inverse() * s[idx.at(e.from)].inverse() * s[idx.at(e.to)]).log();
      c += r.dot(e.information * r);
    }
    return c;
  };

  double lambda = cfg.init_lambda;
  double cost = total_cost(state);

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(7 * nf, 7 * nf);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(7 * nf);
    for (const auto& e : edges) {
      const int i = idx.at(e.from);
      const int j = idx.at(e.to);
      const Sim3Transform err = e.measurement.inverse() * state[i].inverse() * state[j];
      const Vec7 r = err.log();
      // Right perturbation on node j, left-propagated perturbation on node i.
      const Mat7 Jj = sim3_inv_right_jacobian(r);
      const Mat7 Ji = -sim3_inv_right_jacobian(-r) * e.measurement.inverse().adjoint();
      const bool fi = i == fixed_idx;
      const bool fj = j == fixed_idx;
      if (!fi) {
        const int a = 7 * free_idx(i);
        H.block<7, 7>(a, a) += Ji.transpose() * e.information * Ji;
        g.segment<7>(a) += Ji.transpose() * e.information * r;
      }
      if (!fj) {
        const int b = 7 * free_idx(j);
        H.block<7, 7>(b, b) += Jj.transpose() * e.information * Jj;
        g.segment<7>(b) += Jj.transpose() * e.information * r;
      }
      if (!fi && !fj) {
        const int a = 7 * free_idx(i);
        const int b = 7 * free_idx(j);
        H.block<7, 7>(a, b) += Ji.transpose() * e.information * Jj;
        H.block<7, 7>(b, a) += Jj.transpose() * e.information * Ji;
      }
    }
    if (nf == 0 || g.lpNorm<Eigen::Infinity>() < cfg.gradient_tol) break;

    const Eigen::MatrixXd Hd =
        H + lambda * Eigen::MatrixXd::Identity(7 * nf, 7 * nf);
    const Eigen::VectorXd delta = Hd.ldlt().solve(-g);
    if (!delta.allFinite()) {
      lambda *= 10.0;
      continue;
    }
    std::vector<Sim3Transform> candidate = state;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (static_cast<int>(k) == fixed_idx) continue;
      candidate[k] = state[k] * Sim3Transform::exp(delta.segment<7>(7 * free_idx(k)));
    }
    const double new_cost = total_cost(candidate);
    if (new_cost < cost) {
      const double rel = (cost - new_cost) / std::max(cost, 1e-300);
      state = candidate;
      cost = new_cost;
      lambda *= 0.5;
      if (rel < cfg.rel_decrease_tol) break;
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
  }

  PoseGraphResult result;
  result.ok = true;
  result.final_cost = cost;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    result.nodes[ids[k]] = static_cast<int>(k) == fixed_idx ? nodes.at(fixed_node) : state[k];
  }
  return result;
}

}  // namespace vslam
