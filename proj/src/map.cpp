#include "vslam/map.hpp"

#include <algorithm>
#include <mutex>
#include <stdexcept>
#include <string>

namespace vslam {

namespace {

std::pair<int, int> ordered(int a, int b) { return a < b ? std::pair{a, b} : std::pair{b, a}; }

}  // namespace

void MapDatabase::register_camera(int id, const CameraModel& camera) {
  std::unique_lock lock(mutex_);
  cameras_.insert_or_assign(id, camera);
  bump_version_locked();
}

void MapDatabase::set_vocabulary(Vocabulary vocabulary) {
  std::unique_lock lock(mutex_);
  vocabulary_ = std::move(vocabulary);
  bow_of_keyframe_.clear();
  inverted_index_.clear();
  for (const auto& [id, kf] : keyframes_) {
    BowVector v = vocabulary_.transform(kf.features.descriptors);
    for (const auto& [word, _] : v) inverted_index_[word].insert(id);
    bow_of_keyframe_[id] = std::move(v);
  }
  bump_version_locked();
}

bool MapDatabase::has_vocabulary() const {
  std::shared_lock lock(mutex_);
  return !vocabulary_.empty();
}

void MapDatabase::bump_version_locked() { ++version_; }

void MapDatabase::link_locked(int keyframe_id, int keypoint_idx, int landmark_id) {
  Keyframe& kf = keyframes_.at(keyframe_id);
  Landmark& lm = landmarks_.at(landmark_id);
  if (keypoint_idx < 0 || keypoint_idx >= static_cast<int>(kf.features.size())) {
    throw std::invalid_argument("map: keypoint index out of range");
  }
  if (kf.landmark_links[keypoint_idx] != -1) {
    throw std::invalid_argument("map: keypoint already linked");
  }
  if (lm.observations.count(keyframe_id)) {
    throw std::invalid_argument("map: landmark already observed in keyframe " +
                                std::to_string(keyframe_id));
  }
  kf.landmark_links[keypoint_idx] = landmark_id;
  lm.observations[keyframe_id] = keypoint_idx;
  for (const auto& [other_id, _] : lm.observations) {
    if (other_id == keyframe_id) continue;
    ++covisibility_[keyframe_id][other_id];
    ++covisibility_[other_id][keyframe_id];
  }
  refresh_descriptor_locked(landmark_id);
}

void MapDatabase::unlink_locked(int keyframe_id, int keypoint_idx, int landmark_id) {
  Keyframe& kf = keyframes_.at(keyframe_id);
  Landmark& lm = landmarks_.at(landmark_id);
  kf.landmark_links[keypoint_idx] = -1;
  lm.observations.erase(keyframe_id);
  for (const auto& [other_id, _] : lm.observations) {
    auto drop = [this](int a, int b) {
      auto& row = covisibility_[a];
      auto it = row.find(b);
      if (it != row.end() && --it->second <= 0) row.erase(it);
    };
    drop(keyframe_id, other_id);
    drop(other_id, keyframe_id);
  }
}

void MapDatabase::refresh_descriptor_locked(int landmark_id) {
  Landmark& lm = landmarks_.at(landmark_id);
  if (lm.observations.empty()) return;
  std::vector<const Descriptor*> members;
  for (const auto& [kf_id, kp] : lm.observations) {
    members.push_back(&keyframes_.at(kf_id).features.descriptors[kp]);
  }
  if (members.size() == 1) {
    lm.descriptor = *members[0];
    return;
  }
  // Member with minimal median Hamming distance to the others.
  double best_median = 1e9;
  const Descriptor* best = members[0];
  for (const Descriptor* a : members) {
    std::vector<int> dists;
    for (const Descriptor* b : members) {
      if (a != b) dists.push_back(hamming(*a, *b));
    }
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
    double median = dists[dists.size() / 2];
    if (dists.size() % 2 == 0) {
      const int lower = *std::max_element(dists.begin(), dists.begin() + dists.size() / 2);
      median = 0.5 * (median + lower);
    }
    if (median < best_median) {
      best_median = median;
      best = a;
    }
  }
  lm.descriptor = *best;
}

void MapDatabase::insert_keyframe(const Keyframe& kf) {
  std::unique_lock lock(mutex_);
  if (kf.id <= max_keyframe_id_) {
    throw std::invalid_argument("map: keyframe ids must be fresh and increasing");
  }
  if (!cameras_.count(kf.camera_id)) {
    throw std::invalid_argument("map: unknown camera id " + std::to_string(kf.camera_id));
  }
  if (!kf.landmark_links.empty() && kf.landmark_links.size() != kf.features.size()) {
    throw std::invalid_argument("map: landmark_links size must match keypoint count");
  }
  for (int lm_id : kf.landmark_links) {
    if (lm_id != -1 && !landmarks_.count(lm_id)) {
      throw std::invalid_argument("map: link to unknown landmark " + std::to_string(lm_id));
    }
  }

  Keyframe stored = kf;
  stored.landmark_links.assign(kf.features.size(), -1);
  keyframes_.emplace(kf.id, std::move(stored));
  max_keyframe_id_ = kf.id;
  for (std::size_t i = 0; i < kf.landmark_links.size(); ++i) {
    if (kf.landmark_links[i] != -1) {
      link_locked(kf.id, static_cast<int>(i), kf.landmark_links[i]);
    }
  }

  // Spanning tree: parent is the strongest covisible keyframe at insertion;
  // with no covisibility yet, fall back to the latest earlier keyframe so the
  // tree stays connected.
  int parent = -1;
  if (keyframes_.size() > 1) {
    int best_weight = 0;
    const auto& row = covisibility_[kf.id];
    for (const auto& [other, weight] : row) {
      if (weight > best_weight || (weight == best_weight && parent != -1 && other < parent)) {
        best_weight = weight;
        parent = other;
      }
    }
    if (parent == -1) {
      auto it = keyframes_.find(kf.id);
      parent = std::prev(it)->first;
    }
  }
  parent_[kf.id] = parent;

  if (!vocabulary_.empty()) {
    BowVector v = vocabulary_.transform(kf.features.descriptors);
    for (const auto& [word, _] : v) inverted_index_[word].insert(kf.id);
    bow_of_keyframe_[kf.id] = std::move(v);
  }
  bump_version_locked();
}

void MapDatabase::add_landmark(const Landmark& lm) {
  std::unique_lock lock(mutex_);
  if (lm.id < 0 || landmarks_.count(lm.id)) {
    throw std::invalid_argument("map: landmark id invalid or already present");
  }
  Landmark stored = lm;
  stored.observations.clear();
  if (stored.first_keyframe_id < 0) stored.first_keyframe_id = max_keyframe_id_;
  landmarks_.emplace(lm.id, std::move(stored));
  bump_version_locked();
}

void MapDatabase::add_observation(int keyframe_id, int keypoint_idx, int landmark_id) {
  std::unique_lock lock(mutex_);
  if (!keyframes_.count(keyframe_id)) {
    throw std::invalid_argument("map: unknown keyframe " + std::to_string(keyframe_id));
  }
  if (!landmarks_.count(landmark_id)) {
    throw std::invalid_argument("map: unknown landmark " + std::to_string(landmark_id));
  }
  link_locked(keyframe_id, keypoint_idx, landmark_id);
  bump_version_locked();
}

void MapDatabase::set_keyframe_pose(int keyframe_id, const SE3Pose& pose) {
  std::unique_lock lock(mutex_);
  keyframes_.at(keyframe_id).pose = pose;
  bump_version_locked();
}

void MapDatabase::set_landmark_position(int landmark_id, const Vec3& position) {
  std::unique_lock lock(mutex_);
  landmarks_.at(landmark_id).position = position;
  bump_version_locked();
}

void MapDatabase::apply_correction(const std::map<int, SE3Pose>& poses,
                                   const std::map<int, Vec3>& positions) {
  std::unique_lock lock(mutex_);
  for (const auto& [id, pose] : poses) keyframes_.at(id).pose = pose;
  for (const auto& [id, pos] : positions) landmarks_.at(id).position = pos;
  bump_version_locked();
}

void MapDatabase::record_landmark_visibility(int landmark_id, bool found) {
  std::unique_lock lock(mutex_);
  auto it = landmarks_.find(landmark_id);
  if (it == landmarks_.end()) return;
  ++it->second.visible;
  if (found) ++it->second.found;
  bump_version_locked();
}

void MapDatabase::merge_landmarks(int keep, int drop) {
  std::unique_lock lock(mutex_);
  if (keep == drop) throw std::invalid_argument("map: merging a landmark with itself");
  auto keep_it = landmarks_.find(keep);
  auto drop_it = landmarks_.find(drop);
  if (keep_it == landmarks_.end() || drop_it == landmarks_.end()) {
    throw std::invalid_argument("map: merge of unknown landmark");
  }
  const auto obs = drop_it->second.observations;  // copy: unlink mutates it
  for (const auto& [kf_id, kp] : obs) unlink_locked(kf_id, kp, drop);
  keep_it->second.found += drop_it->second.found;
  keep_it->second.visible += drop_it->second.visible;
  landmarks_.erase(drop_it);
  for (const auto& [kf_id, kp] : obs) {
    if (keep_it->second.observations.count(kf_id)) continue;
    link_locked(kf_id, kp, keep);
  }
  bump_version_locked();
}

std::vector<int> MapDatabase::cull_landmarks(const LandmarkCullPolicy& policy) {
  std::unique_lock lock(mutex_);
  std::vector<int> removed;
  for (auto it = landmarks_.begin(); it != landmarks_.end();) {
    const Landmark& lm = it->second;
    const int age = max_keyframe_id_ - lm.first_keyframe_id;
    const bool recent = age <= policy.probation_keyframes;
    const bool bad_ratio =
        recent && lm.visible > 0 &&
        static_cast<double>(lm.found) / static_cast<double>(lm.visible) < policy.min_found_ratio;
    const bool too_few = recent && age >= policy.grace_keyframes &&
                         static_cast<int>(lm.observations.size()) < policy.min_observations;
    if (!bad_ratio && !too_few) {
      ++it;
      continue;
    }
    const auto obs = lm.observations;  // copy: unlink mutates it
    for (const auto& [kf_id, kp] : obs) unlink_locked(kf_id, kp, it->first);
    removed.push_back(it->first);
    it = landmarks_.erase(it);
  }
  if (!removed.empty()) bump_version_locked();
  return removed;
}

std::vector<int> MapDatabase::cull_keyframes(const KeyframeCullPolicy& policy) {
  std::unique_lock lock(mutex_);
  std::vector<int> removed;
  const int root = keyframes_.empty() ? -1 : keyframes_.begin()->first;
  std::vector<int> ids;
  for (const auto& [id, _] : keyframes_) ids.push_back(id);

  for (int id : ids) {
    if (id == root || !keyframes_.count(id)) continue;
    // Keyframes anchoring loop edges stay.
    bool in_loop = false;
    for (const auto& [a, b] : loop_edges_) {
      if (a == id || b == id) {
        in_loop = true;
        break;
      }
    }
    if (in_loop) continue;
    const Keyframe& kf = keyframes_.at(id);
    int linked = 0, redundant = 0;
    for (int lm_id : kf.landmark_links) {
      if (lm_id == -1) continue;
      ++linked;
      const auto& obs = landmarks_.at(lm_id).observations;
      if (static_cast<int>(obs.size()) - 1 >= policy.min_other_observers) ++redundant;
    }
    if (linked == 0 || redundant < policy.redundancy_ratio * linked) continue;

    // Remove: detach observations, covisibility, index and tree entries.
    for (std::size_t kp = 0; kp < kf.landmark_links.size(); ++kp) {
      const int lm_id = kf.landmark_links[kp];
      if (lm_id != -1) {
        unlink_locked(id, static_cast<int>(kp), lm_id);
        refresh_descriptor_locked(lm_id);
      }
    }
    for (const auto& [other, _] : covisibility_[id]) covisibility_[other].erase(id);
    covisibility_.erase(id);
    if (auto bow = bow_of_keyframe_.find(id); bow != bow_of_keyframe_.end()) {
      for (const auto& [word, _] : bow->second) inverted_index_[word].erase(id);
      bow_of_keyframe_.erase(bow);
    }
    const int old_parent = parent_.at(id);
    parent_.erase(id);
    keyframes_.erase(id);

    // Re-parent orphans to their strongest surviving covisible keyframe,
    // refusing choices that would close a cycle; fall back to the removed
    // node's own parent.
    for (auto& [child, par] : parent_) {
      if (par != id) continue;
      int best = -1, best_weight = 0;
      for (const auto& [other, weight] : covisibility_[child]) {
        if (weight <= best_weight) continue;
        // Walk ancestors of the candidate to rule out a cycle through child.
        // Chains may still pass through the node being removed (its other
        // children are not re-parented yet); route them to its old parent.
        bool cycles = false;
        for (int a = other; a != -1;) {
          if (a == child) {
            cycles = true;
            break;
          }
          if (a == id) {
            a = old_parent;
            continue;
          }
          const auto it = parent_.find(a);
          a = it == parent_.end() ? -1 : it->second;
        }
        if (!cycles) {
          best = other;
          best_weight = weight;
        }
      }
      par = best != -1 ? best : old_parent;
    }
    removed.push_back(id);
  }
  if (!removed.empty()) bump_version_locked();
  return removed;
}

void MapDatabase::add_loop_edge(int a, int b) {
  std::unique_lock lock(mutex_);
  if (!keyframes_.count(a) || !keyframes_.count(b) || a == b) {
    throw std::invalid_argument("map: bad loop edge");
  }
  loop_edges_.insert(ordered(a, b));
  bump_version_locked();
}

void MapDatabase::restore_spanning_tree(const std::map<int, int>& parents) {
  std::unique_lock lock(mutex_);
  if (parents.size() != keyframes_.size()) {
    throw std::invalid_argument("map: spanning tree entry count mismatch");
  }
  int roots = 0;
  for (const auto& [child, parent] : parents) {
    if (!keyframes_.count(child)) {
      throw std::invalid_argument("map: spanning tree references unknown keyframe " +
                                  std::to_string(child));
    }
    if (parent == -1) {
      ++roots;
    } else if (!keyframes_.count(parent)) {
      throw std::invalid_argument("map: spanning tree parent unknown: " + std::to_string(parent));
    }
  }
  if (!keyframes_.empty() && roots != 1) {
    throw std::invalid_argument("map: spanning tree must have exactly one root");
  }
  for (const auto& [child, parent] : parents) {
    std::set<int> seen = {child};
    for (int a = parent; a != -1; a = parents.at(a)) {
      if (!seen.insert(a).second) {
        throw std::invalid_argument("map: spanning tree cycle at " + std::to_string(child));
      }
    }
  }
  parent_ = parents;
  bump_version_locked();
}

std::vector<std::pair<int, double>> MapDatabase::query_similar_keyframes(
    const FeatureFrame& features, const std::set<int>& covisible) const {
  std::shared_lock lock(mutex_);
  std::map<int, double> scores;
  if (!vocabulary_.empty()) {
    const BowVector query = vocabulary_.transform(features.descriptors);
    std::set<int> candidates;
    for (const auto& [word, _] : query) {
      auto it = inverted_index_.find(word);
      if (it == inverted_index_.end()) continue;
      candidates.insert(it->second.begin(), it->second.end());
    }
    for (int id : candidates) {
      scores[id] = Vocabulary::similarity(query, bow_of_keyframe_.at(id));
    }
  } else {
    // Brute-force descriptor voting fallback.
    MatchParams mp;
    for (const auto& [id, kf] : keyframes_) {
      const auto matches = match(features, kf.features, mp);
      const double denom = std::max<std::size_t>(
          1, std::min(features.size(), kf.features.size()));
      scores[id] = static_cast<double>(matches.size()) / static_cast<double>(denom);
    }
  }

  double floor = 0.0;
  for (int id : covisible) {
    auto it = scores.find(id);
    if (it != scores.end()) floor = std::max(floor, kRelativeFloor * it->second);
  }
  std::vector<std::pair<int, double>> ranked;
  for (const auto& [id, score] : scores) {
    if (covisible.count(id) || score < floor || score <= 0.0) continue;
    ranked.emplace_back(id, score);
  }
  std::sort(ranked.begin(), ranked.end(),
            [](const auto& a, const auto& b) { return a.second > b.second; });
  return ranked;
}

Keyframe MapDatabase::keyframe(int id) const {
  std::shared_lock lock(mutex_);
  auto it = keyframes_.find(id);
  if (it == keyframes_.end()) {
    throw std::out_of_range("map: no keyframe " + std::to_string(id));
  }
  return it->second;
}

Landmark MapDatabase::landmark(int id) const {
  std::shared_lock lock(mutex_);
  auto it = landmarks_.find(id);
  if (it == landmarks_.end()) {
    throw std::out_of_range("map: no landmark " + std::to_string(id));
  }
  return it->second;
}

std::optional<Keyframe> MapDatabase::try_keyframe(int id) const {
  std::shared_lock lock(mutex_);
  auto it = keyframes_.find(id);
  if (it == keyframes_.end()) return std::nullopt;
  return it->second;
}

std::optional<Landmark> MapDatabase::try_landmark(int id) const {
  std::shared_lock lock(mutex_);
  auto it = landmarks_.find(id);
  if (it == landmarks_.end()) return std::nullopt;
  return it->second;
}

bool MapDatabase::has_keyframe(int id) const {
  std::shared_lock lock(mutex_);
  return keyframes_.count(id) > 0;
}

bool MapDatabase::has_landmark(int id) const {
  std::shared_lock lock(mutex_);
  return landmarks_.count(id) > 0;
}

CameraModel MapDatabase::camera(int id) const {
  std::shared_lock lock(mutex_);
  auto it = cameras_.find(id);
  if (it == cameras_.end()) {
    throw std::out_of_range("map: no camera " + std::to_string(id));
  }
  return it->second;
}

std::vector<int> MapDatabase::camera_ids() const {
  std::shared_lock lock(mutex_);
  std::vector<int> ids;
  for (const auto& [id, _] : cameras_) ids.push_back(id);
  return ids;
}

std::vector<int> MapDatabase::keyframe_ids() const {
  std::shared_lock lock(mutex_);
  std::vector<int> ids;
  for (const auto& [id, _] : keyframes_) ids.push_back(id);
  return ids;
}

std::vector<int> MapDatabase::landmark_ids() const {
  std::shared_lock lock(mutex_);
  std::vector<int> ids;
  for (const auto& [id, _] : landmarks_) ids.push_back(id);
  return ids;
}

std::size_t MapDatabase::num_keyframes() const {
  std::shared_lock lock(mutex_);
  return keyframes_.size();
}

std::size_t MapDatabase::num_landmarks() const {
  std::shared_lock lock(mutex_);
  return landmarks_.size();
}

int MapDatabase::covisibility_weight(int a, int b) const {
  std::shared_lock lock(mutex_);
  auto row = covisibility_.find(a);
  if (row == covisibility_.end()) return 0;
  auto it = row->second.find(b);
  return it == row->second.end() ? 0 : it->second;
}

std::vector<std::pair<int, int>> MapDatabase::covisibility_neighbors(int id,
                                                                     int min_weight) const {
  std::shared_lock lock(mutex_);
  std::vector<std::pair<int, int>> out;
  auto row = covisibility_.find(id);
  if (row == covisibility_.end()) return out;
  for (const auto& [other, weight] : row->second) {
    if (weight >= min_weight) out.emplace_back(other, weight);
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

std::vector<int> MapDatabase::local_keyframes(int reference_id, std::size_t max_count) const {
  std::shared_lock lock(mutex_);
  std::vector<int> out;
  if (!keyframes_.count(reference_id) || max_count == 0) return out;
  out.push_back(reference_id);
  auto row = covisibility_.find(reference_id);
  if (row != covisibility_.end()) {
    std::vector<std::pair<int, int>> neigh(row->second.begin(), row->second.end());
    std::sort(neigh.begin(), neigh.end(),
              [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [id, _] : neigh) {
      if (out.size() >= max_count) break;
      out.push_back(id);
    }
  }
  return out;
}

int MapDatabase::spanning_tree_parent(int id) const {
  std::shared_lock lock(mutex_);
  auto it = parent_.find(id);
  if (it == parent_.end()) throw std::out_of_range("map: no keyframe " + std::to_string(id));
  return it->second;
}

std::vector<std::pair<int, int>> MapDatabase::spanning_tree_edges() const {
  std::shared_lock lock(mutex_);
  std::vector<std::pair<int, int>> out;
  for (const auto& [child, parent] : parent_) {
    if (parent != -1) out.emplace_back(parent, child);
  }
  return out;
}

std::vector<std::pair<int, int>> MapDatabase::loop_edges() const {
  std::shared_lock lock(mutex_);
  return {loop_edges_.begin(), loop_edges_.end()};
}

std::uint64_t MapDatabase::version() const {
  std::shared_lock lock(mutex_);
  return version_;
}

void MapDatabase::audit() const {
  std::shared_lock lock(mutex_);
  for (const auto& [id, kf] : keyframes_) {
    if (!cameras_.count(kf.camera_id)) {
      throw std::logic_error("audit: keyframe " + std::to_string(id) + " has unknown camera");
    }
    if (kf.landmark_links.size() != kf.features.size()) {
      throw std::logic_error("audit: keyframe " + std::to_string(id) + " link size mismatch");
    }
    for (std::size_t kp = 0; kp < kf.landmark_links.size(); ++kp) {
      const int lm_id = kf.landmark_links[kp];
      if (lm_id == -1) continue;
      auto it = landmarks_.find(lm_id);
      if (it == landmarks_.end()) {
        throw std::logic_error("audit: keyframe " + std::to_string(id) +
                               " links deleted landmark " + std::to_string(lm_id));
      }
      auto obs = it->second.observations.find(id);
      if (obs == it->second.observations.end() || obs->second != static_cast<int>(kp)) {
        throw std::logic_error("audit: asymmetric link keyframe " + std::to_string(id) +
                               " landmark " + std::to_string(lm_id));
      }
    }
  }
  for (const auto& [id, lm] : landmarks_) {
    for (const auto& [kf_id, kp] : lm.observations) {
      auto it = keyframes_.find(kf_id);
      if (it == keyframes_.end()) {
        throw std::logic_error("audit: landmark " + std::to_string(id) +
                               " observed by deleted keyframe " + std::to_string(kf_id));
      }
      if (it->second.landmark_links[kp] != id) {
        throw std::logic_error("audit: asymmetric observation landmark " + std::to_string(id));
      }
    }
  }
  // Covisibility symmetry.
  for (const auto& [a, row] : covisibility_) {
    if (!keyframes_.count(a)) throw std::logic_error("audit: covisibility row for deleted keyframe");
    for (const auto& [b, w] : row) {
      auto rb = covisibility_.find(b);
      if (rb == covisibility_.end() || !rb->second.count(a) || rb->second.at(a) != w) {
        throw std::logic_error("audit: asymmetric covisibility " + std::to_string(a) + "-" +
                               std::to_string(b));
      }
    }
  }
  // Spanning tree: |edges| = |keyframes| - 1, acyclic, parents alive.
  if (parent_.size() != keyframes_.size()) {
    throw std::logic_error("audit: spanning tree entry count mismatch");
  }
  int roots = 0;
  for (const auto& [child, parent] : parent_) {
    if (parent == -1) {
      ++roots;
      continue;
    }
    if (!keyframes_.count(parent)) {
      throw std::logic_error("audit: spanning tree parent deleted for " + std::to_string(child));
    }
    std::set<int> seen = {child};
    for (int a = parent; a != -1; a = parent_.at(a)) {
      if (!seen.insert(a).second) {
        throw std::logic_error("audit: spanning tree cycle at " + std::to_string(child));
      }
    }
  }
  if (!keyframes_.empty() && roots != 1) {
    throw std::logic_error("audit: spanning tree must have exactly one root");
  }
  for (const auto& [a, b] : loop_edges_) {
    if (!keyframes_.count(a) || !keyframes_.count(b)) {
      throw std::logic_error("audit: loop edge references deleted keyframe");
    }
  }
}

}  // namespace vslam
