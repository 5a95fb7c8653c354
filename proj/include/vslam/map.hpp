#pragma once

#include "vslam/bow.hpp"
#include "vslam/camera.hpp"
#include "vslam/features.hpp"
#include "vslam/se3.hpp"

#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <vector>

namespace vslam {

struct Keyframe {
  int id = -1;  // unique, monotone, never reused
  double timestamp = 0.0;
  SE3Pose pose;  // world -> camera
  FeatureFrame features;
  std::vector<int> landmark_links;  // per keypoint, landmark id or -1
  int camera_id = 0;
};

struct Landmark {
  int id = -1;
  Vec3 position = Vec3::Zero();  // world
  Descriptor descriptor;         // representative
  std::map<int, int> observations;  // keyframe id -> keypoint index
  int found = 0;    // frames where it was actually matched
  int visible = 0;  // frames where it was predicted visible
  int first_keyframe_id = -1;  // grace-period anchor
};

struct LandmarkCullPolicy {
  double min_found_ratio = 0.25;
  int min_observations = 2;
  int grace_keyframes = 2;      // keyframes inserted since creation before the
                                // observation-count rule applies
  int probation_keyframes = 5;  // culling only examines landmarks younger than
                                // this; mature landmarks persist even if later
                                // keyframe culling leaves them a single observer
};

struct KeyframeCullPolicy {
  double redundancy_ratio = 0.9;  // fraction of landmarks seen elsewhere
  int min_other_observers = 3;
};

// Shared world model. Thread contract: many concurrent readers or one writer;
// every mutation is atomic with respect to readers and bumps the version
// counter so readers can detect staleness.
class MapDatabase {
 public:
  MapDatabase() = default;

  void register_camera(int id, const CameraModel& camera);
  void set_vocabulary(Vocabulary vocabulary);
  bool has_vocabulary() const;

  // Keyframe ids must be fresh and increasing; landmark links must reference
  // existing landmarks and get registered as observations. Throws
  // std::invalid_argument on violations.
  void insert_keyframe(const Keyframe& kf);
  void add_landmark(const Landmark& lm);
  void add_observation(int keyframe_id, int keypoint_idx, int landmark_id);

  void set_keyframe_pose(int keyframe_id, const SE3Pose& pose);
  void set_landmark_position(int landmark_id, const Vec3& position);
  // Atomic bulk update used by loop correction and global BA.
  void apply_correction(const std::map<int, SE3Pose>& poses,
                        const std::map<int, Vec3>& positions);
  void record_landmark_visibility(int landmark_id, bool found);

  std::vector<int> cull_landmarks(const LandmarkCullPolicy& policy);
  std::vector<int> cull_keyframes(const KeyframeCullPolicy& policy);

  // Moves every observation of `drop` onto `keep` (keyframes already
  // observing `keep` just lose the duplicate link) and erases `drop`.
  void merge_landmarks(int keep, int drop);

  void add_loop_edge(int a, int b);

  // Overwrites the spanning tree with persisted parents (child -> parent,
  // root mapped to -1). Validates shape and acyclicity.
  void restore_spanning_tree(const std::map<int, int>& parents);

  // Place recognition: ranked (keyframe id, score), best first. Uses the
  // vocabulary index when present, otherwise brute-force descriptor voting.
  // Candidates scoring below kRelativeFloor x the best score among `covisible`
  // are dropped (no floor when `covisible` is empty).
  std::vector<std::pair<int, double>> query_similar_keyframes(
      const FeatureFrame& features, const std::set<int>& covisible) const;

  // Snapshot accessors (copies, safe to use without holding any lock).
  Keyframe keyframe(int id) const;
  Landmark landmark(int id) const;
  // Atomic exists-and-copy; concurrent culling makes the separate
  // has_*/accessor pairs racy.
  std::optional<Keyframe> try_keyframe(int id) const;
  std::optional<Landmark> try_landmark(int id) const;
  bool has_keyframe(int id) const;
  bool has_landmark(int id) const;
  CameraModel camera(int id) const;
  std::vector<int> camera_ids() const;
  std::vector<int> keyframe_ids() const;
  std::vector<int> landmark_ids() const;
  std::size_t num_keyframes() const;
  std::size_t num_landmarks() const;

  int covisibility_weight(int a, int b) const;
  // Neighbors with weight >= min_weight, strongest first.
  std::vector<std::pair<int, int>> covisibility_neighbors(int id, int min_weight = 1) const;
  // The reference keyframe plus its covisibility-strongest surroundings,
  // capped (local-map bound).
  std::vector<int> local_keyframes(int reference_id, std::size_t max_count = 60) const;
  int spanning_tree_parent(int id) const;  // -1 for the root
  std::vector<std::pair<int, int>> spanning_tree_edges() const;
  std::vector<std::pair<int, int>> loop_edges() const;

  std::uint64_t version() const;

  // Full referential-integrity audit; throws std::logic_error describing the
  // first violation found.
  void audit() const;

  static constexpr double kRelativeFloor = 0.75;

 private:
  void link_locked(int keyframe_id, int keypoint_idx, int landmark_id);
  void unlink_locked(int keyframe_id, int keypoint_idx, int landmark_id);
  void refresh_descriptor_locked(int landmark_id);
  void bump_version_locked();

  mutable std::shared_mutex mutex_;
  std::map<int, Keyframe> keyframes_;
  std::map<int, Landmark> landmarks_;
  std::map<int, CameraModel> cameras_;
  // Covisibility: per keyframe, neighbor id -> shared-landmark count.
  std::map<int, std::map<int, int>> covisibility_;
  std::map<int, int> parent_;  // spanning tree, root maps to -1
  std::set<std::pair<int, int>> loop_edges_;  // stored with a < b
  int max_keyframe_id_ = -1;
  std::uint64_t version_ = 0;

  Vocabulary vocabulary_;
  std::map<int, BowVector> bow_of_keyframe_;
  std::map<int, std::set<int>> inverted_index_;  // word -> keyframes
};

}  // namespace vslam
