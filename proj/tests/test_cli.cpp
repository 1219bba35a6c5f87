#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "deftrack/cli.hpp"
#include "deftrack/eval.hpp"

using namespace deftrack;
namespace fs = std::filesystem;

namespace {

const fs::path kData = DEFTRACK_DATA_DIR;

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("deftrack_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("a subcommand is required") {
  const Run r = run({});
  CHECK(r.code == kExitConfig);
  CHECK(!r.err.empty());
}

TEST_CASE("tracking a missing image folder fails cleanly") {
  const fs::path dir = scratch("missing");
  const Run r = run({"track", "--images", (dir / "nope").string(), "--calib",
                     (dir / "calib.txt").string(), "--out", (dir / "out").string()});
  CHECK(r.code != kExitOk);
  CHECK(!r.err.empty());
  fs::remove_all(dir);
}

TEST_CASE("tracking an empty image folder fails cleanly") {
  const fs::path dir = scratch("empty");
  fs::create_directories(dir / "frames");
  REQUIRE(run({"sim", "--scene", (kData / "rigid_tube.cfg").string(), "--frames", "2",
               "--out", (dir / "sim").string()}).code == kExitOk);
  const Run r = run({"track", "--images", (dir / "frames").string(), "--calib",
                     (dir / "sim" / "calib.txt").string(), "--out", (dir / "out").string()});
  CHECK(r.code != kExitOk);
  CHECK(!r.err.empty());
  fs::remove_all(dir);
}

TEST_CASE("unknown scene fields are configuration errors") {
  const fs::path dir = scratch("badscene");
  {
    std::ofstream cfg(dir / "bad.cfg");
    cfg << "surface = tube\nwobble = 3\n";
  }
  const Run r = run({"sim", "--scene", (dir / "bad.cfg").string(), "--out",
                     (dir / "out").string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("wobble") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("sim, track and eval chain on the bundled rigid scene") {
  const fs::path dir = scratch("chain");
  const std::string ini = (kData / "rigid_tube.ini").string();
  Run r = run({"--config", ini, "sim", "--scene", (kData / "rigid_tube.cfg").string(),
               "--frames", "30", "--out", (dir / "sim").string()});
  REQUIRE(r.code == kExitOk);
  for (const char* f : {"truth_points.csv", "truth_poses.csv", "observations.csv",
                        "calib.txt", "scene.cfg"}) {
    CHECK(fs::exists(dir / "sim" / f));
  }
  r = run({"--config", ini, "track", "--observations",
           (dir / "sim" / "observations.csv").string(), "--calib",
           (dir / "sim" / "calib.txt").string(), "--out", (dir / "trk").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(fs::exists(dir / "trk" / "poses.csv"));
  CHECK(fs::exists(dir / "trk" / "trajectories.csv"));
  r = run({"eval", "--estimate", (dir / "trk").string(), "--truth", (dir / "sim").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(fs::exists(dir / "trk" / "eval.csv"));
  CHECK(fs::exists(dir / "trk" / "eval.txt"));

  // The reported error agrees with an evaluation of the written tables.
  const auto est = eval::read_point_table(dir / "trk" / "trajectories.csv");
  const auto truth = eval::read_point_table(dir / "sim" / "truth_points.csv");
  const eval::EvalReport report = eval::evaluate(est, truth);
  CHECK(report.frames.size() == 30);
  CHECK(report.sequence_rmse < 0.25);
  std::ostringstream rmse;
  rmse << report.sequence_rmse;
  CHECK(r.out.find(rmse.str().substr(0, 5)) != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("same seed gives byte-identical outputs") {
  const fs::path dir = scratch("determinism");
  const std::vector<std::string> base = {
      "--config", (kData / "rigid_tube.ini").string(), "full", "--scene",
      (kData / "rigid_tube.cfg").string(), "--frames", "25", "--out"};
  auto a = base, b = base;
  a.push_back((dir / "a").string());
  b.push_back((dir / "b").string());
  REQUIRE(run(a).code == kExitOk);
  REQUIRE(run(b).code == kExitOk);
  const std::string pa = slurp(dir / "a" / "poses.csv");
  CHECK(!pa.empty());
  CHECK(pa == slurp(dir / "b" / "poses.csv"));
  CHECK(slurp(dir / "a" / "trajectories.csv") == slurp(dir / "b" / "trajectories.csv"));
  fs::remove_all(dir);
}

TEST_CASE("ground-truth depth start-up runs on a deforming scene") {
  const fs::path dir = scratch("gtdepth");
  const Run r = run({"--init-mode", "gt-depth", "full", "--scene",
                     (kData / "deform_tube.cfg").string(), "--amplitude", "2.5", "--omega",
                     "2.5", "--frames", "20", "--out", (dir / "run").string()});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("sequence RMSE") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("invalid option values are configuration errors") {
  CHECK(run({"--pyramid-levels", "0", "sim", "--out", "/tmp/x"}).code == kExitConfig);
  CHECK(run({"--init-mode", "stereo", "sim", "--out", "/tmp/x"}).code == kExitConfig);
}
