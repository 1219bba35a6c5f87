#include "deftrack/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>

#include <CLI11.hpp>

#include "deftrack/calibration.hpp"
#include "deftrack/eval.hpp"
#include "deftrack/image_io.hpp"
#include "deftrack/io.hpp"
#include "deftrack/pipeline.hpp"
#include "deftrack/sim.hpp"

namespace deftrack {

namespace {

namespace fs = std::filesystem;

constexpr const char* kVersion = "0.1.0";

struct SceneOverrides {
  std::optional<double> amplitude;
  std::optional<double> omega;
  std::optional<int> frames;
  std::optional<std::uint64_t> seed;
  std::optional<double> track_noise;
  std::optional<double> pixel_noise;
};

void add_scene_options(CLI::App* app, std::string& scene_path,
                       SceneOverrides& o) {
  app->add_option("--scene", scene_path, "Scene description file")
      ->check(CLI::ExistingFile);
  app->add_option("--amplitude", o.amplitude, "Deformation amplitude A");
  app->add_option("--omega", o.omega, "Deformation angular frequency");
  app->add_option("--frames", o.frames, "Number of frames");
  app->add_option("--scene-seed", o.seed, "Scene random seed");
  app->add_option("--track-noise", o.track_noise, "Observation noise, pixels");
  app->add_option("--pixel-noise", o.pixel_noise, "Image noise, intensity levels");
}

sim::SceneConfig resolve_scene(const std::string& path, const SceneOverrides& o) {
  sim::SceneConfig c = path.empty() ? sim::SceneConfig{} : sim::load_scene_config(path);
  if (o.amplitude) c.amplitude = *o.amplitude;
  if (o.omega) c.omega = *o.omega;
  if (o.frames) c.frames = *o.frames;
  if (o.seed) c.seed = *o.seed;
  if (o.track_noise) c.track_noise = *o.track_noise;
  if (o.pixel_noise) c.pixel_noise = *o.pixel_noise;
  c.validate();
  return c;
}

void write_manifest(const fs::path& dir, const CLI::App& app) {
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.txt");
  if (!out) throw FormatError("cannot write " + (dir / "manifest.txt").string());
  out << "# deftrack " << kVersion << ", Eigen " << EIGEN_WORLD_VERSION << "."
      << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION << "\n"
      << "# replay: deftrack --config manifest.txt <subcommand>\n"
      << app.config_to_str(true, false);
}

GroundTruthHints hints_from(const sim::CameraZeroTruth& truth,
                            const std::vector<int>& ids) {
  GroundTruthHints h;
  h.poses = truth.poses;
  if (!truth.points.empty()) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      h.first_frame_points[ids[i]] = truth.points.front()[i];
    }
  }
  return h;
}

std::vector<eval::PointFrame> truth_frames(const sim::CameraZeroTruth& truth,
                                           const std::vector<int>& ids) {
  std::vector<eval::PointFrame> out;
  for (std::size_t f = 0; f < truth.points.size(); ++f) {
    out.push_back({static_cast<int>(f), ids, truth.points[f]});
  }
  return out;
}

eval::EvalReport evaluate_result(const SequenceResult& result,
                                 std::span<const eval::PointFrame> truth,
                                 const std::map<int, Pose>& truth_poses) {
  std::vector<eval::PointFrame> est;
  std::map<int, Pose> poses;
  std::vector<double> seconds;
  for (const auto& f : result.frames) {
    est.push_back(f.points);
    poses[f.frame] = f.pose;
    if (f.frame > 0) seconds.push_back(f.seconds);
  }
  return eval::evaluate(est, truth, poses, truth_poses, seconds);
}

void write_report(const fs::path& dir, const eval::EvalReport& report) {
  {
    std::ofstream out(dir / "eval.csv");
    if (!out) throw FormatError("cannot write " + (dir / "eval.csv").string());
    eval::write_report_csv(out, report);
  }
  std::ofstream out(dir / "eval.txt");
  if (!out) throw FormatError("cannot write " + (dir / "eval.txt").string());
  eval::write_report_text(out, report);
}

int finish(const SequenceResult& result, std::ostream& out, std::ostream& err) {
  switch (result.status) {
    case RunStatus::kOk:
      out << "tracked " << result.frames.size() << " frames, "
          << (result.frames.empty() ? 0 : result.frames.back().active)
          << " active points\n";
      return kExitOk;
    case RunStatus::kInitFailed:
      err << "initialisation failed: " << result.message << "\n";
      return kExitInit;
    case RunStatus::kTrackingFailed:
      err << result.message << " (failed frame " << result.failed_frame << ")\n";
      return kExitTracking;
  }
  return kExitTracking;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"Monocular deformable-scene tracking"};
  app.name("deftrack");
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "Option file (key = value); flags win over it");
  app.set_version_flag("--version", kVersion);

  PipelineConfig cfg;
  std::string init_mode = "mono";
  std::uint64_t seed = cfg.initializer.ransac.seed;
  double min_parallax_deg = cfg.initializer.triangulation.min_parallax * 180.0 / std::numbers::pi;

  app.add_option("--pyramid-levels", cfg.pyramid_levels, "Pyramid levels")
      ->capture_default_str()->check(CLI::Range(1, 8));
  app.add_option("--patch-size", cfg.tracker.patch_size, "Tracking patch side, pixels")
      ->capture_default_str()->check(CLI::Range(3, 63));
  app.add_option("--track-iterations", cfg.tracker.max_iterations,
                 "Gauss-Newton iterations per pyramid level")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--ssim-threshold", cfg.tracker.ssim_threshold, "SSIM outlier gate")
      ->capture_default_str()->check(CLI::Range(-1.0, 1.0));
  app.add_option("--refresh-period", cfg.tracker.refresh_period,
                 "Frames between reference patch refreshes")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--grid-rows", cfg.detector.grid_rows, "Detector grid rows")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--grid-cols", cfg.detector.grid_cols, "Detector grid columns")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--features-per-cell", cfg.detector.max_per_cell,
                 "Detector cap per grid cell")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--ransac-iterations", cfg.initializer.ransac.iterations,
                 "RANSAC hypotheses")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--ransac-early-exit", cfg.initializer.ransac.early_exit_ratio,
                 "Stop RANSAC once this inlier fraction is reached")
      ->capture_default_str()->check(CLI::Range(0.0, 1.0));
  app.add_option("--ransac-threshold-px", cfg.initializer.inlier_threshold_px,
                 "Epipolar inlier threshold, pixels at the mean focal length")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--min-parallax-deg", min_parallax_deg,
                 "Triangulation parallax floor, degrees")
      ->capture_default_str()->check(CLI::NonNegativeNumber);
  app.add_option("--init-gap", cfg.init_gap, "Frame paired with frame 0 at start-up")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--max-init-gap", cfg.max_init_gap, "Largest gap tried on failure")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--init-mode", init_mode, "mono or gt-depth (simulator only)")
      ->capture_default_str()->check(CLI::IsMember({"mono", "gt-depth"}));
  app.add_option("--sigma-rep", cfg.deform.sigma_reprojection,
                 "Reprojection std, pixels")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--sigma-spa", cfg.deform.sigma_spatial, "Spatial std, milli-units")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--sigma-tmp", cfg.deform.sigma_temporal, "Temporal std, milli-units")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--lambda-spa", cfg.deform.lambda_spatial, "Spatial weight")
      ->capture_default_str()->check(CLI::NonNegativeNumber);
  app.add_option("--lambda-tmp", cfg.deform.lambda_temporal, "Temporal weight")
      ->capture_default_str()->check(CLI::NonNegativeNumber);
  app.add_option("--graph-k", cfg.deform.graph_k, "Neighbours per graph node")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--graph-sigma", cfg.deform.graph_sigma,
                 "Graph radial basis scale, milli-units")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--graph-sigma-gt", cfg.graph_sigma_gt_depth,
                 "Graph scale with ground-truth depth start-up")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--mm-per-unit", cfg.mm_per_unit,
                 "Milli-units per map unit for external sequences")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--lost-gate", cfg.deform.lost_gate,
                 "Post-fit squared reprojection gate for losing points")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--rigid-iterations", cfg.deform.rigid_solver.max_iterations,
                 "Rigid refinement iterations")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--joint-iterations", cfg.deform.joint_solver.max_iterations,
                 "Joint solve iterations")
      ->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "RANSAC seed")->capture_default_str();
  app.add_flag("--ply", cfg.write_ply, "Write one PLY cloud per frame");
  app.add_flag("-v,--verbose", cfg.verbosity, "More logging (repeatable)");

  // sim
  CLI::App* sim_cmd = app.add_subcommand("sim", "Generate a synthetic sequence");
  std::string sim_scene, sim_out;
  SceneOverrides sim_over;
  bool sim_render = false;
  std::string sim_format = "png";
  add_scene_options(sim_cmd, sim_scene, sim_over);
  sim_cmd->add_option("--out", sim_out, "Output directory")->required();
  sim_cmd->add_flag("--render", sim_render, "Render image frames");
  sim_cmd->add_option("--format", sim_format, "png or pgm")
      ->capture_default_str()->check(CLI::IsMember({"png", "pgm"}));

  // track
  CLI::App* track_cmd = app.add_subcommand("track", "Track an image folder or observation table");
  std::string images_dir, obs_path, calib_path, track_out, track_truth;
  auto* images_opt = track_cmd->add_option("--images", images_dir, "Folder of frames")
                         ->check(CLI::ExistingDirectory);
  auto* obs_opt = track_cmd->add_option("--observations", obs_path,
                                        "frame,id,u_x,u_y table")
                      ->check(CLI::ExistingFile);
  images_opt->excludes(obs_opt);
  track_cmd->add_option("--calib", calib_path, "Calibration file")
      ->required()->check(CLI::ExistingFile);
  track_cmd->add_option("--out", track_out, "Output directory")->required();
  track_cmd->add_option("--truth", track_truth,
                        "Simulator truth folder (sets the map scale)")
      ->check(CLI::ExistingDirectory);

  // eval
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a tracked sequence against truth");
  std::string eval_est, eval_truth, eval_out;
  eval_cmd->add_option("--estimate", eval_est, "Tracking output folder")
      ->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--truth", eval_truth, "Simulator truth folder")
      ->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--out", eval_out, "Report folder (default: estimate folder)");

  // full
  CLI::App* full_cmd = app.add_subcommand("full", "Simulate, track and evaluate");
  std::string full_scene, full_out, frontend = "tracks";
  SceneOverrides full_over;
  add_scene_options(full_cmd, full_scene, full_over);
  full_cmd->add_option("--out", full_out, "Output directory")->required();
  full_cmd->add_option("--frontend", frontend,
                       "tracks: simulated observations; images: render and track")
      ->capture_default_str()->check(CLI::IsMember({"tracks", "images"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  cfg.initializer.ransac.seed = seed;
  cfg.initializer.triangulation.min_parallax = min_parallax_deg * std::numbers::pi / 180.0;
  cfg.init_mode = init_mode == "gt-depth" ? InitMode::kGroundTruthDepth
                                          : InitMode::kMonocular;
  if (cfg.max_init_gap < cfg.init_gap) cfg.max_init_gap = cfg.init_gap;

  try {
    if (sim_cmd->parsed()) {
      const sim::SceneConfig scene = resolve_scene(sim_scene, sim_over);
      const fs::path dir = sim_out;
      write_manifest(dir, app);
      const sim::SceneTruth truth = sim::generate_truth(scene);
      sim::write_truth(dir, truth, cfg.write_ply);
      {
        std::ofstream s(dir / "scene.cfg");
        sim::write_scene_config(s, scene);
        std::ofstream c(dir / "calib.txt");
        write_calibration(c, scene.camera);
        std::ofstream o(dir / "observations.csv");
        write_observations(o, sim::emit_observations(scene, truth));
      }
      if (sim_render) {
        const sim::Mesh mesh = sim::build_mesh(scene);
        fs::create_directories(dir / "frames");
        for (int f = 0; f < scene.frames; ++f) {
          const auto r = sim::render_frame(scene, mesh, truth, f);
          char name[32];
          std::snprintf(name, sizeof(name), "frame_%04d.%s", f, sim_format.c_str());
          if (sim_format == "png") {
            write_png(dir / "frames" / name, r.image);
          } else {
            write_pgm(dir / "frames" / name, r.image);
          }
        }
      }
      out << "simulated " << scene.frames << " frames, "
          << truth.point_ids.size() << " tracked points\n";
      return kExitOk;
    }

    if (track_cmd->parsed()) {
      if (images_dir.empty() && obs_path.empty()) {
        err << "track: one of --images or --observations is required\n";
        return kExitConfig;
      }
      const CameraModel camera = load_calibration(calib_path);
      const fs::path dir = track_out;
      write_manifest(dir, app);
      std::vector<std::vector<Observation>> obs;
      if (!images_dir.empty()) {
        const auto frames = list_frames(images_dir);
        std::ofstream tracks(dir / "tracks.csv");
        precise(tracks);
        obs = track_image_sequence(frames, cfg, &tracks);
      } else {
        obs = read_observations(obs_path);
      }
      std::optional<GroundTruthHints> hints;
      if (!track_truth.empty()) {
        GroundTruthHints h;
        for (const auto& [frame, pose] :
             eval::read_pose_table(fs::path(track_truth) / "truth_poses.csv")) {
          if (frame >= static_cast<int>(h.poses.size())) h.poses.resize(frame + 1);
          h.poses[frame] = pose;
        }
        const auto pts = eval::read_point_table(fs::path(track_truth) / "truth_points.csv");
        if (!pts.empty() && pts.front().frame == 0) {
          for (std::size_t i = 0; i < pts.front().ids.size(); ++i) {
            h.first_frame_points[pts.front().ids[i]] = pts.front().points[i];
          }
        }
        hints = std::move(h);
      }
      const SequenceResult result =
          run_tracking(obs, camera, cfg, hints ? &*hints : nullptr);
      write_sequence_outputs(dir, result, cfg);
      return finish(result, out, err);
    }

    if (eval_cmd->parsed()) {
      const fs::path est_dir = eval_est;
      const fs::path truth_dir = eval_truth;
      const fs::path dir = eval_out.empty() ? est_dir : fs::path(eval_out);
      fs::create_directories(dir);
      const auto est = eval::read_point_table(est_dir / "trajectories.csv");
      const auto truth = eval::read_point_table(truth_dir / "truth_points.csv");
      const auto est_poses = eval::read_pose_table(est_dir / "poses.csv");
      const auto truth_poses = eval::read_pose_table(truth_dir / "truth_poses.csv");
      const eval::EvalReport report = eval::evaluate(est, truth, est_poses, truth_poses);
      write_report(dir, report);
      eval::write_report_text(out, report);
      return kExitOk;
    }

    if (full_cmd->parsed()) {
      const sim::SceneConfig scene = resolve_scene(full_scene, full_over);
      const fs::path dir = full_out;
      write_manifest(dir, app);
      const sim::SceneTruth truth = sim::generate_truth(scene);
      sim::write_truth(dir / "truth", truth, cfg.write_ply);
      {
        std::ofstream s(dir / "scene.cfg");
        sim::write_scene_config(s, scene);
        std::ofstream c(dir / "calib.txt");
        write_calibration(c, scene.camera);
      }
      std::vector<std::vector<Observation>> obs;
      if (frontend == "images") {
        const sim::Mesh mesh = sim::build_mesh(scene);
        std::vector<ImageBuffer> frames;
        for (int f = 0; f < scene.frames; ++f) {
          frames.push_back(sim::render_frame(scene, mesh, truth, f).image);
        }
        std::ofstream tracks(dir / "tracks.csv");
        precise(tracks);
        obs = track_images(frames, cfg, &tracks);
      } else {
        obs = sim::emit_observations(scene, truth);
      }
      {
        std::ofstream o(dir / "observations.csv");
        write_observations(o, obs);
      }
      const sim::CameraZeroTruth cz = sim::to_camera_zero(truth);
      GroundTruthHints hints = hints_from(cz, truth.point_ids);
      if (frontend == "images") {
        // Detected features have their own ids; ground-truth depth start-up
        // is only defined for simulated tracks.
        hints.first_frame_points.clear();
      }
      const SequenceResult result = run_tracking(obs, scene.camera, cfg, &hints);
      write_sequence_outputs(dir, result, cfg);
      const int code = finish(result, out, err);
      if (frontend == "tracks" && !result.frames.empty()) {
        std::map<int, Pose> truth_poses;
        for (std::size_t f = 0; f < cz.poses.size(); ++f) {
          truth_poses[static_cast<int>(f)] = cz.poses[f];
        }
        const auto tf = truth_frames(cz, truth.point_ids);
        const eval::EvalReport report = evaluate_result(result, tf, truth_poses);
        write_report(dir, report);
        eval::write_report_text(out, report);
      }
      return code;
    }
  } catch (const FormatError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const GeometryError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ImageError& e) {
    err << "image error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const eval::EvalError& e) {
    err << "evaluation error: " << e.what() << "\n";
    return kExitTracking;
  }
  return kExitOk;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("deftrack");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace deftrack
