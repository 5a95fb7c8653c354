#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout only
};

CliResult run_cli(const std::string& arguments) {
  const std::string out_path =
      (fs::temp_directory_path() / "slam_cli_out.txt").string();
  const std::string command =
      std::string(SLAM_CLI_PATH) + " " + arguments + " > " + out_path + " 2>/dev/null";
  const int status = std::system(command.c_str());
  CliResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_path);
  std::stringstream ss;
  ss << in.rdbuf();
  result.output = ss.str();
  return result;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// The orbit dataset and a finished mapping run are shared by several cases.
struct Workspace {
  fs::path dataset = fs::temp_directory_path() / "slam_cli_orbit";
  fs::path trajectory = fs::temp_directory_path() / "slam_cli_traj.txt";
  fs::path map = fs::temp_directory_path() / "slam_cli_map.msg";

  Workspace() {
    fs::remove_all(dataset);
    REQUIRE(run_cli("synth --preset orbit --seed 7 --out " + dataset.string())
                .exit_code == 0);
    const CliResult run = run_cli("run --config " + (dataset / "config.txt").string() +
                                  " --dataset " + dataset.string() +
                                  " --stepped --seed 3 --save-traj " +
                                  trajectory.string() + " --save-map " + map.string());
    REQUIRE(run.exit_code == 0);
  }
};

Workspace& workspace() {
  static Workspace ws;
  return ws;
}

}  // namespace

TEST_CASE("run reports the full table and exits 0 on a healthy sequence") {
  Workspace& ws = workspace();
  const CliResult run = run_cli("run --config " + (ws.dataset / "config.txt").string() +
                                " --dataset " + ws.dataset.string() + " --stepped");
  CHECK(run.exit_code == 0);
  for (const char* field :
       {"frames processed:", "frames tracked:", "keyframes:", "landmarks:",
        "loop closures:", "mean ms/frame:", "median ms/frame:"}) {
    INFO(field);
    CHECK(run.output.find(field) != std::string::npos);
  }
}

TEST_CASE("stepped runs with the same seed write identical trajectory files") {
  Workspace& ws = workspace();
  const fs::path traj_b = fs::temp_directory_path() / "slam_cli_traj_b.txt";
  const CliResult run = run_cli("run --config " + (ws.dataset / "config.txt").string() +
                                " --dataset " + ws.dataset.string() +
                                " --stepped --seed 3 --save-traj " + traj_b.string());
  REQUIRE(run.exit_code == 0);
  CHECK(slurp(ws.trajectory) == slurp(traj_b));
}

TEST_CASE("synth is deterministic for a fixed seed") {
  const fs::path a = fresh_dir("slam_cli_synth_a");
  const fs::path b = fresh_dir("slam_cli_synth_b");
  REQUIRE(run_cli("synth --preset square-loop --seed 7 --out " + a.string()).exit_code == 0);
  REQUIRE(run_cli("synth --preset square-loop --seed 7 --out " + b.string()).exit_code == 0);
  std::vector<std::string> names_a, names_b;
  for (const auto& e : fs::directory_iterator(a)) names_a.push_back(e.path().filename());
  for (const auto& e : fs::directory_iterator(b)) names_b.push_back(e.path().filename());
  std::sort(names_a.begin(), names_a.end());
  std::sort(names_b.begin(), names_b.end());
  REQUIRE(names_a == names_b);
  REQUIRE(!names_a.empty());
  for (const auto& name : names_a) {
    INFO(name);
    CHECK(slurp(a / name) == slurp(b / name));
  }
}

TEST_CASE("localize reuses the map read-only and localizes nearly all frames") {
  Workspace& ws = workspace();
  const std::string before = slurp(ws.map);
  const CliResult loc = run_cli("localize --config " + (ws.dataset / "config.txt").string() +
                                " --dataset " + ws.dataset.string() + " --map " +
                                ws.map.string());
  CHECK(loc.exit_code == 0);
  CHECK(slurp(ws.map) == before);  // checksum-identical contract

  // The report shows >= 95% of frames localized.
  std::size_t processed = 0, tracked = 0;
  std::sscanf(loc.output.c_str(), "frames processed: %zu frames tracked: %zu",
              &processed, &tracked);
  REQUIRE(processed > 0);
  CHECK(tracked * 20 >= processed * 19);
}

TEST_CASE("localizing against a disjoint scene fails the quality gate") {
  Workspace& ws = workspace();
  const fs::path other = fresh_dir("slam_cli_line");
  REQUIRE(run_cli("synth --preset line --seed 99 --out " + other.string()).exit_code == 0);
  const CliResult loc = run_cli("localize --config " + (other / "config.txt").string() +
                                " --dataset " + other.string() + " --map " +
                                ws.map.string());
  CHECK(loc.exit_code == 2);
}

TEST_CASE("eval-ate prints the fixed-order table and honors the alignment flag") {
  Workspace& ws = workspace();
  const fs::path gt = ws.dataset / "groundtruth.txt";
  const CliResult self = run_cli("eval-ate --est " + gt.string() + " --gt " + gt.string() +
                                 " --align sim3");
  CHECK(self.exit_code == 0);
  CHECK(self.output.find("rmse:   0.000000") != std::string::npos);
  const auto mean_pos = self.output.find("mean:");
  const auto median_pos = self.output.find("median:");
  const auto max_pos = self.output.find("max:");
  CHECK(self.output.find("rmse:") < mean_pos);
  CHECK(mean_pos < median_pos);
  CHECK(median_pos < max_pos);

  // x3-scaled copy: similarity alignment absorbs the scale, rigid cannot.
  std::ifstream in(gt);
  const fs::path scaled_path = fs::temp_directory_path() / "slam_cli_scaled.txt";
  std::ofstream out(scaled_path);
  double t, x, y, z, qx, qy, qz, qw;
  while (in >> t >> x >> y >> z >> qx >> qy >> qz >> qw) {
    char line[256];
    std::snprintf(line, sizeof(line), "%.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  t, 3 * x, 3 * y, 3 * z, qx, qy, qz, qw);
    out << line;
  }
  out.close();
  const CliResult sim3 = run_cli("eval-ate --est " + scaled_path.string() + " --gt " +
                                 gt.string() + " --align sim3");
  CHECK(sim3.exit_code == 0);
  CHECK(sim3.output.find("rmse:   0.000000") != std::string::npos);
  const CliResult se3 = run_cli("eval-ate --est " + scaled_path.string() + " --gt " +
                                gt.string() + " --align se3");
  CHECK(se3.exit_code == 0);
  CHECK(se3.output.find("rmse:   0.000000") == std::string::npos);
}

TEST_CASE("usage and input errors exit 1") {
  Workspace& ws = workspace();
  CHECK(run_cli("").exit_code == 1);
  CHECK(run_cli("bogus").exit_code == 1);
  CHECK(run_cli("run --config /does/not/exist.txt --dataset " + ws.dataset.string())
            .exit_code == 1);
  CHECK(run_cli("run --config " + (ws.dataset / "config.txt").string() +
                " --dataset /does/not/exist")
            .exit_code == 1);
  CHECK(run_cli("localize --config " + (ws.dataset / "config.txt").string() +
                " --dataset " + ws.dataset.string() + " --map /does/not/exist.msg")
            .exit_code == 1);
  CHECK(run_cli("eval-ate --est a --gt b --align nope").exit_code == 1);
  CHECK(run_cli("synth --preset nope --out /tmp/x").exit_code == 1);
  CHECK(run_cli("run --unknown-flag 1").exit_code == 1);
}

TEST_CASE("a config with an unknown key is rejected with the key named") {
  Workspace& ws = workspace();
  const fs::path bad = fs::temp_directory_path() / "slam_cli_bad.txt";
  std::ofstream(bad) << "camera.kind perspective\ncamera.typo 1\n";
  const CliResult run =
      run_cli("run --config " + bad.string() + " --dataset " + ws.dataset.string());
  CHECK(run.exit_code == 1);
}
