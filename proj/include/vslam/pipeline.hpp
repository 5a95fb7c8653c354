#pragma once

#include "vslam/io.hpp"
#include "vslam/map.hpp"
#include "vslam/pnp.hpp"
#include "vslam/solvers.hpp"
#include "vslam/two_view.hpp"

#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <thread>

namespace vslam {

enum class TrackingStatus { NotInitialized, Tracking, Lost };

struct FrameResult {
  double timestamp = 0.0;
  TrackingStatus state = TrackingStatus::NotInitialized;
  std::optional<SE3Pose> pose;  // world -> camera, present iff Tracking
  int matches = 0;
  int inliers = 0;
  bool keyframe_inserted = false;
};

struct LoopClosure {
  int keyframe_id = -1;
  int matched_keyframe_id = -1;
  int inliers = 0;
};

struct PipelineParams {
  FeatureParams features;
  MatchParams matching;
  TwoViewParams init;
  PnpParams pnp;
  SolverConfig solver;
  int posegraph_max_iterations = 30;

  int keyframe_max_interval = 30;        // frames since last keyframe
  double keyframe_min_tracked_ratio = 0.9;
  int keyframe_min_matches = 15;         // floor below which no keyframe helps

  // Huber kernel width in degrees of angular error; non-positive keeps the
  // solver default of 1.5 x the observation sigma.
  double huber_delta_deg = -1.0;

  bool loop_enabled = true;
  int loop_min_inliers = 20;
  int essential_covisibility_threshold = 100;
  int relocalization_min_inliers = 10;

  int min_tracked_matches = 10;          // below this the frame is Lost
  // Mapping can triangulate shallower than initialization: bundle adjustment
  // keeps refining the points afterwards.
  double triangulation_min_parallax_deg = 0.5;
  double local_match_angle_deg = 2.0;    // projection search window
  double wide_match_angle_deg = 8.0;     // robust fallback window
  std::size_t local_map_keyframes = 60;

  std::uint64_t seed = 0;
};

// Pulls the pipeline knobs out of a parsed configuration file; keys absent
// from the file keep their defaults.
PipelineParams pipeline_params_from_config(const Config& config);

// The full system: tracking, mapping, loop closing, relocalization. Stepped
// mode runs everything synchronously on the caller's thread and is
// deterministic; concurrent mode runs mapping and global optimization on
// worker threads.
class System {
 public:
  enum class Mode { Stepped, Concurrent };

  System(const CameraModel& camera, const PipelineParams& params,
         Mode mode = Mode::Stepped);
  ~System();

  System(const System&) = delete;
  System& operator=(const System&) = delete;

  void set_vocabulary(Vocabulary vocabulary);

  // Sequential input; timestamps must be strictly increasing (throws
  // std::invalid_argument otherwise).
  FrameResult track_frame(const FeatureFrame& features, double timestamp);
  FrameResult track_frame(const Image& image, double timestamp);

  // Localization-only: the map becomes read-only (version frozen), frames are
  // tracked or relocalized against it but never extend it. Throws
  // std::logic_error without a non-empty map.
  void set_localization_only(bool enabled);
  bool localization_only() const { return localization_only_; }

  void save_map(const std::string& path);
  void load_map(const std::string& path);

  // Drains the workers and composes the final camera-to-world trajectory.
  // Per-frame poses are stored relative to their reference keyframe, so loop
  // corrections propagate into every frame.
  Trajectory shutdown();

  const MapDatabase& map() const { return *map_; }
  const std::vector<LoopClosure>& loop_closures() const { return loop_closures_; }
  TrackingStatus state() const { return state_; }

 private:
  struct FrameRecord {
    double timestamp = 0.0;
    int reference_keyframe = -1;
    SE3Pose camera_from_reference;  // T_frame_w * T_ref_w^{-1}
  };
  struct TrackedPoint {
    int keypoint = -1;
    int landmark = -1;
  };

  FrameResult track_features(const FeatureFrame& features, double timestamp);
  bool try_initialize(const FeatureFrame& features, double timestamp);
  bool track_with_map(const FeatureFrame& features, SE3Pose& pose,
                      std::vector<TrackedPoint>& tracked, int& matches);
  int match_against_keyframe(const FeatureFrame& features, const Keyframe& kf,
                             std::vector<TrackedPoint>& tracked) const;
  int project_local_map(const FeatureFrame& features, const SE3Pose& pose,
                        double window_deg, std::vector<TrackedPoint>& tracked,
                        std::vector<int>* predicted_visible) const;
  MotionOnlyResult optimize_pose(const FeatureFrame& features, const SE3Pose& pose0,
                                 std::vector<TrackedPoint>& tracked) const;
  bool need_new_keyframe(int inliers) const;
  int insert_keyframe(const FeatureFrame& features, double timestamp,
                      const SE3Pose& pose, const std::vector<TrackedPoint>& tracked);
  std::optional<SE3Pose> relocalize(const FeatureFrame& features,
                                    std::vector<TrackedPoint>& tracked, int& matches);

  // Mapping stage.
  void mapping_step(int keyframe_id);
  void triangulate_new_landmarks(int keyframe_id);
  void fuse_duplicates(int keyframe_id, const std::vector<int>& source_keyframes,
                       double window_deg);
  void local_bundle_adjustment(int keyframe_id);

  // Global optimization stage.
  void loop_step(int keyframe_id);
  void run_loop_closure(int keyframe_id, int candidate_id,
                        const Sim3Transform& cand_from_new, int inliers);
  void run_global_ba();

  void enqueue_keyframe(int keyframe_id);
  void drain_workers();
  double observation_weight(int octave) const;

  std::unique_ptr<MapDatabase> map_;
  PipelineParams params_;
  Mode mode_;
  std::mt19937_64 rng_;

  TrackingStatus state_ = TrackingStatus::NotInitialized;
  bool localization_only_ = false;
  double last_timestamp_ = 0.0;
  bool any_frame_ = false;

  // Initialization reference.
  std::optional<FeatureFrame> init_frame_;
  double init_timestamp_ = 0.0;

  // Tracking state.
  SE3Pose last_pose_;          // world -> camera of the previous tracked frame
  SE3Pose velocity_;           // T_cur_prev of the last frame pair
  int reference_keyframe_ = -1;
  int reference_tracked_ = 0;  // landmark count tracked when the reference
                               // keyframe was created
  int frames_since_keyframe_ = 0;
  FeatureFrame last_features_;
  std::vector<int> last_landmarks_;  // per keypoint of the previous frame

  int next_keyframe_id_ = 0;
  int next_landmark_id_ = 0;

  std::vector<FrameRecord> records_;
  std::vector<LoopClosure> loop_closures_;
  // Culled keyframe id -> (surviving parent at cull time, T_culled_from_parent)
  // so frame records referencing culled keyframes still resolve at shutdown.
  std::map<int, std::pair<int, SE3Pose>> culled_refs_;
  double angular_sigma_ = 1e-3;  // one-pixel observation noise, radians

  // Concurrent mode plumbing.
  std::thread mapping_thread_;
  std::thread loop_thread_;
  mutable std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<int> mapping_queue_;
  std::deque<int> loop_queue_;
  int in_flight_ = 0;
  bool stop_workers_ = false;
  bool global_opt_running_ = false;
  std::mutex stage_mutex_;  // serializes mapping vs. loop correction
};

}  // namespace vslam
