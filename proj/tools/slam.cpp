#include "vslam/bow.hpp"
#include "vslam/eval.hpp"
#include "vslam/io.hpp"
#include "vslam/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace {

using namespace vslam;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitQuality = 2;

struct Args {
  std::map<std::string, std::string> values;
  std::set<std::string> flags;

  bool has(const std::string& name) const {
    return values.count(name) || flags.count(name);
  }
  std::string get(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) {
      throw std::invalid_argument("missing required option --" + name);
    }
    return it->second;
  }
  std::string get(const std::string& name, const std::string& fallback) const {
    auto it = values.find(name);
    return it == values.end() ? fallback : it->second;
  }
};

Args parse_args(int argc, char** argv, int first,
                const std::set<std::string>& value_options,
                const std::set<std::string>& flag_options) {
  Args args;
  for (int i = first; i < argc; ++i) {
    std::string token = argv[i];
    if (token.rfind("--", 0) != 0) {
      throw std::invalid_argument("unexpected argument: " + token);
    }
    const std::string name = token.substr(2);
    if (flag_options.count(name)) {
      args.flags.insert(name);
    } else if (value_options.count(name)) {
      if (i + 1 >= argc) {
        throw std::invalid_argument("option --" + name + " needs a value");
      }
      args.values[name] = argv[++i];
    } else {
      throw std::invalid_argument("unknown option --" + name);
    }
  }
  return args;
}

struct RunReport {
  std::size_t processed = 0;
  std::size_t tracked = 0;
  std::size_t keyframes = 0;
  std::size_t landmarks = 0;
  std::size_t loop_closures = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  std::vector<std::pair<std::string, std::string>> outputs;
};

void print_report(const RunReport& r) {
  std::printf("frames processed:  %zu\n", r.processed);
  std::printf("frames tracked:    %zu\n", r.tracked);
  std::printf("keyframes:         %zu\n", r.keyframes);
  std::printf("landmarks:         %zu\n", r.landmarks);
  std::printf("loop closures:     %zu\n", r.loop_closures);
  std::printf("mean ms/frame:     %.3f\n", r.mean_ms);
  std::printf("median ms/frame:   %.3f\n", r.median_ms);
  for (const auto& [label, path] : r.outputs) {
    std::printf("%-18s %s\n", (label + ":").c_str(), path.c_str());
  }
}

// Feeds every dataset frame through the system, timing each call.
RunReport drive(System& system, const Dataset& dataset) {
  RunReport report;
  std::vector<double> times_ms;
  times_ms.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    FrameResult result;
    if (dataset.has_feature_frames()) {
      result = system.track_frame(dataset.features(i), dataset.timestamp(i));
    } else {
      result = system.track_frame(dataset.image(i), dataset.timestamp(i));
    }
    const auto stop = std::chrono::steady_clock::now();
    times_ms.push_back(
        std::chrono::duration<double, std::milli>(stop - start).count());
    ++report.processed;
    if (result.state == TrackingStatus::Tracking) ++report.tracked;
  }
  if (!times_ms.empty()) {
    double sum = 0.0;
    for (double t : times_ms) sum += t;
    report.mean_ms = sum / static_cast<double>(times_ms.size());
    std::vector<double> sorted = times_ms;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    report.median_ms = n % 2 == 1 ? sorted[n / 2]
                                  : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  return report;
}

int cmd_run(int argc, char** argv) {
  const Args args = parse_args(
      argc, argv, 2,
      {"config", "dataset", "vocab", "save-map", "save-traj", "seed"},
      {"stepped"});
  const Config config = Config::parse_file(args.get("config"));
  const Dataset dataset = Dataset::open(args.get("dataset"));
  const CameraModel camera = camera_from_config(config);
  PipelineParams params = pipeline_params_from_config(config);
  if (args.has("seed")) {
    params.seed = static_cast<std::uint64_t>(std::stoull(args.get("seed")));
  }
  const System::Mode mode =
      args.has("stepped") ? System::Mode::Stepped : System::Mode::Concurrent;

  System system(camera, params, mode);
  if (args.has("vocab")) system.set_vocabulary(Vocabulary::load(args.get("vocab")));

  RunReport report = drive(system, dataset);
  const Trajectory trajectory = system.shutdown();
  report.keyframes = system.map().num_keyframes();
  report.landmarks = system.map().num_landmarks();
  report.loop_closures = system.loop_closures().size();
  if (args.has("save-traj")) {
    write_trajectory(trajectory, args.get("save-traj"));
    report.outputs.push_back({"trajectory", args.get("save-traj")});
  }
  if (args.has("save-map")) {
    system.save_map(args.get("save-map"));
    report.outputs.push_back({"map", args.get("save-map")});
  }
  print_report(report);
  return report.tracked * 5 >= report.processed * 4 ? kExitOk : kExitQuality;
}

int cmd_localize(int argc, char** argv) {
  const Args args = parse_args(argc, argv, 2,
                               {"config", "dataset", "map", "save-traj"}, {});
  const Config config = Config::parse_file(args.get("config"));
  const Dataset dataset = Dataset::open(args.get("dataset"));
  const CameraModel camera = camera_from_config(config);
  const PipelineParams params = pipeline_params_from_config(config);

  System system(camera, params, System::Mode::Stepped);
  system.load_map(args.get("map"));
  system.set_localization_only(true);

  RunReport report = drive(system, dataset);
  const Trajectory trajectory = system.shutdown();
  report.keyframes = system.map().num_keyframes();
  report.landmarks = system.map().num_landmarks();
  if (args.has("save-traj")) {
    write_trajectory(trajectory, args.get("save-traj"));
    report.outputs.push_back({"trajectory", args.get("save-traj")});
  }
  print_report(report);
  return report.tracked * 5 >= report.processed * 4 ? kExitOk : kExitQuality;
}

int cmd_eval_ate(int argc, char** argv) {
  const Args args = parse_args(argc, argv, 2, {"est", "gt", "align"}, {});
  const std::string align = args.get("align", "sim3");
  AteAlignment alignment;
  if (align == "sim3") {
    alignment = AteAlignment::Sim3;
  } else if (align == "se3") {
    alignment = AteAlignment::Se3;
  } else {
    throw std::invalid_argument("--align must be sim3 or se3, got: " + align);
  }
  const Trajectory est = read_trajectory(args.get("est"));
  const Trajectory gt = read_trajectory(args.get("gt"));
  const AteReport report = compute_ate(est, gt, alignment);
  std::printf("rmse:   %.6f\n", report.rmse);
  std::printf("mean:   %.6f\n", report.mean);
  std::printf("median: %.6f\n", report.median);
  std::printf("max:    %.6f\n", report.max);
  return kExitOk;
}

int cmd_synth(int argc, char** argv) {
  const Args args = parse_args(argc, argv, 2, {"preset", "seed", "out"}, {});
  const std::string preset = args.get("preset");
  SyntheticScene scene;
  if (preset == "orbit") {
    scene.preset = SyntheticScene::Preset::Orbit;
    scene.num_frames = 200;
    scene.num_landmarks = 400;
    scene.pixel_sigma = 0.5;
  } else if (preset == "square-loop") {
    scene.preset = SyntheticScene::Preset::SquareLoop;
    scene.camera = CameraModel::equirectangular(1024, 512, 30.0);
    scene.max_visible_distance = 12.0;
    scene.revolutions = 1.5;
    scene.num_frames = 300;
    scene.num_landmarks = 600;
    scene.pixel_sigma = 0.3;
    scene.drift_fraction = 0.05;
  } else if (preset == "line") {
    scene.preset = SyntheticScene::Preset::Line;
    scene.num_frames = 200;
    scene.num_landmarks = 400;
    scene.pixel_sigma = 0.5;
  } else {
    throw std::invalid_argument(
        "--preset must be orbit, square-loop, or line, got: " + preset);
  }
  scene.seed = static_cast<std::uint64_t>(std::stoull(args.get("seed", "0")));
  const std::string out = args.get("out");
  const SyntheticDataset dataset = generate_synthetic(scene);
  write_synthetic_dataset(dataset, out);

  // A ready-to-run configuration for the generated camera.
  std::FILE* cfg = std::fopen((out + "/config.txt").c_str(), "w");
  if (!cfg) throw std::runtime_error("synth: cannot write " + out + "/config.txt");
  const CameraModel& cam = scene.camera;
  switch (cam.kind()) {
    case CameraKind::Perspective:
      std::fprintf(cfg, "camera.kind perspective\n");
      break;
    case CameraKind::Fisheye:
      std::fprintf(cfg, "camera.kind fisheye\n");
      break;
    case CameraKind::Equirectangular:
      std::fprintf(cfg, "camera.kind equirectangular\n");
      break;
  }
  std::fprintf(cfg, "camera.width %d\n", cam.width());
  std::fprintf(cfg, "camera.height %d\n", cam.height());
  std::fprintf(cfg, "camera.fps %.17g\n", cam.fps());
  if (cam.kind() != CameraKind::Equirectangular) {
    std::fprintf(cfg, "camera.fx %.17g\n", cam.fx());
    std::fprintf(cfg, "camera.fy %.17g\n", cam.fy());
    std::fprintf(cfg, "camera.cx %.17g\n", cam.cx());
    std::fprintf(cfg, "camera.cy %.17g\n", cam.cy());
  }
  std::fclose(cfg);
  for (const auto& warning : dataset.warnings) {
    std::fprintf(stderr, "warning: %s\n", warning.c_str());
  }
  std::printf("dataset: %s (%zu frames)\n", out.c_str(), dataset.frames.size());
  return kExitOk;
}

void print_usage() {
  std::fprintf(stderr,
               "usage: slam <command> [options]\n"
               "  run       --config C --dataset D [--vocab V] [--save-map M]\n"
               "            [--save-traj T] [--seed N] [--stepped]\n"
               "  localize  --config C --dataset D --map M [--save-traj T]\n"
               "  eval-ate  --est E --gt G [--align sim3|se3]\n"
               "  synth     --preset orbit|square-loop|line [--seed N] --out DIR\n");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    print_usage();
    return kExitUsage;
  }
  const std::string command = argv[1];
  try {
    if (command == "run") return cmd_run(argc, argv);
    if (command == "localize") return cmd_localize(argc, argv);
    if (command == "eval-ate") return cmd_eval_ate(argc, argv);
    if (command == "synth") return cmd_synth(argc, argv);
    std::fprintf(stderr, "unknown command: %s\n", command.c_str());
    print_usage();
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
}
