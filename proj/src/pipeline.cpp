#include "deftrack/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "deftrack/image_io.hpp"
#include "deftrack/io.hpp"

namespace deftrack {

namespace {

std::vector<Observation> active_observations(
    std::span<const TrackedFeature> features) {
  std::vector<Observation> out;
  for (const auto& f : features) {
    if (f.active()) out.push_back({f.id, f.current_pixel});
  }
  return out;
}

double median_norm(const std::vector<std::pair<int, Eigen::Vector3d>>& v) {
  if (v.empty()) return 0.0;
  std::vector<double> n;
  n.reserve(v.size());
  for (const auto& [id, d] : v) n.push_back(d.norm());
  const auto mid = n.begin() + n.size() / 2;
  std::nth_element(n.begin(), mid, n.end());
  return *mid;
}

eval::PointFrame active_cloud(int frame, std::span<const MapPoint> map) {
  eval::PointFrame pf;
  pf.frame = frame;
  for (const MapPoint& p : map) {
    if (!p.active()) continue;
    pf.ids.push_back(p.id);
    pf.points.push_back(p.position());
  }
  return pf;
}

std::string frame_name(const char* prefix, int frame, const char* ext) {
  std::ostringstream s;
  s << prefix << std::setw(4) << std::setfill('0') << frame << ext;
  return s.str();
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  precise(out);
  return out;
}

}  // namespace

namespace {

// One frontend step: detect on the first frame, afterwards track, gate and
// refresh.
std::vector<Observation> frontend_step(const ImageBuffer& image, int frame,
                                       std::vector<TrackedFeature>& features,
                                       const PipelineConfig& config,
                                       std::ostream* tracks) {
  const Pyramid pyr = build_pyramid(image, config.pyramid_levels);
  if (frame == 0) {
    const auto keypoints = detect_shi_tomasi(pyr, config.detector);
    features = make_features(pyr, keypoints, 0, config.tracker);
  } else {
    track_features(pyr, features, config.tracker);
    gate_outliers(pyr, features, config.tracker.ssim_threshold, config.tracker);
    refresh_patches(pyr, features, config.tracker.refresh_period, config.tracker);
  }
  if (tracks) write_track_rows(*tracks, frame, features);
  return active_observations(features);
}

}  // namespace

std::vector<std::vector<Observation>> track_images(
    const std::vector<ImageBuffer>& frames, const PipelineConfig& config,
    std::ostream* tracks) {
  std::vector<std::vector<Observation>> out;
  std::vector<TrackedFeature> features;
  if (tracks) write_track_header(*tracks);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    out.push_back(frontend_step(frames[f], static_cast<int>(f), features, config,
                                tracks));
  }
  return out;
}

std::vector<std::vector<Observation>> track_image_sequence(
    const std::vector<std::filesystem::path>& frames,
    const PipelineConfig& config, std::ostream* tracks) {
  std::vector<std::vector<Observation>> out;
  std::vector<TrackedFeature> features;
  if (tracks) write_track_header(*tracks);
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const ImageBuffer image = read_image(frames[f]);
    out.push_back(frontend_step(image, static_cast<int>(f), features, config,
                                tracks));
  }
  return out;
}

SequenceResult run_tracking(
    const std::vector<std::vector<Observation>>& observations,
    const CameraModel& camera, const PipelineConfig& config,
    const GroundTruthHints* hints) {
  SequenceResult result;
  const int n = static_cast<int>(observations.size());
  if (n < 2) {
    result.status = RunStatus::kInitFailed;
    result.message = "need at least two frames";
    return result;
  }

  std::vector<MapPoint> map;
  Pose before_previous;
  DeformOptions deform = config.deform;

  if (config.init_mode == InitMode::kGroundTruthDepth) {
    if (!hints || hints->first_frame_points.empty()) {
      result.status = RunStatus::kInitFailed;
      result.message = "ground-truth depth initialisation needs simulator truth";
      return result;
    }
    for (const Observation& obs : observations[0]) {
      const auto it = hints->first_frame_points.find(obs.point_id);
      if (it == hints->first_frame_points.end() || it->second.z() <= 0.0) continue;
      const Eigen::Vector3d ray = unproject(camera, obs.pixel);
      if (ray.z() <= 0.0) continue;
      MapPoint p;
      p.id = obs.point_id;
      p.anchor = ray * (it->second.z() / ray.z());
      p.reference_pixel = obs.pixel;
      map.push_back(p);
      result.init.points.push_back({p.id, p.anchor, obs.pixel});
    }
    result.init_frame = 0;
    result.mm_per_unit = 1.0;
    deform.graph_sigma = config.graph_sigma_gt_depth;
  } else {
    const int last = std::min(config.max_init_gap, n - 1);
    for (int k = config.init_gap; k <= last; ++k) {
      std::unordered_map<int, Eigen::Vector2d> first;
      for (const Observation& o : observations[0]) first[o.point_id] = o.pixel;
      std::vector<PixelMatch> matches;
      for (const Observation& o : observations[k]) {
        if (const auto it = first.find(o.point_id); it != first.end()) {
          matches.push_back({o.point_id, it->second, o.pixel});
        }
      }
      try {
        result.init = initialize_map(matches, camera, config.initializer);
        result.init_frame = k;
        break;
      } catch (const InitializationError& e) {
        result.message = e.what();
        if (config.verbosity > 0) {
          std::cerr << "initialisation with frame " << k << " failed: " << e.what()
                    << "\n";
        }
      }
    }
    if (result.init_frame < 0) {
      result.status = RunStatus::kInitFailed;
      if (result.message.empty()) result.message = "no frame pair available";
      return result;
    }
    for (const InitialPoint& ip : result.init.points) {
      MapPoint p;
      p.id = ip.id;
      p.anchor = ip.position;
      p.reference_pixel = ip.pixel0;
      map.push_back(p);
    }
    const int k = result.init_frame;
    before_previous = se3_exp(Vector6d(-se3_log(result.init.relative_pose) / k));
    result.mm_per_unit =
        hints && static_cast<int>(hints->poses.size()) > k
            ? hints->poses[k].center().norm()
            : config.mm_per_unit;
  }
  if (!(result.mm_per_unit > 0.0)) {
    result.status = RunStatus::kInitFailed;
    result.message = "degenerate map scale";
    return result;
  }
  deform.sigma_spatial /= result.mm_per_unit;
  deform.sigma_temporal /= result.mm_per_unit;
  deform.graph_sigma /= result.mm_per_unit;

  DeformableTracker tracker(camera, std::move(map), deform);
  tracker.set_pose_history(before_previous, Pose());

  FrameOutput first;
  first.frame = 0;
  first.points = active_cloud(0, tracker.map());
  first.active = static_cast<int>(first.points.ids.size());
  result.frames.push_back(first);

  for (int f = 1; f < n; ++f) {
    const auto start = std::chrono::steady_clock::now();
    const FrameState state = tracker.track_frame(f, observations[f]);
    const auto stop = std::chrono::steady_clock::now();
    FrameOutput out;
    out.frame = f;
    out.pose = state.pose;
    out.status = state.status;
    out.points = active_cloud(f, tracker.map());
    out.active = state.active_points;
    out.lost = state.lost_this_frame;
    out.iterations = state.summary.iterations;
    out.final_cost = state.summary.final_cost;
    out.median_increment = median_norm(state.increments);
    out.seconds = std::chrono::duration<double>(stop - start).count();
    result.frames.push_back(std::move(out));
    if (config.verbosity > 1) {
      std::cerr << "frame " << f << ": " << to_string(state.status) << ", "
                << state.active_points << " active, " << state.summary.iterations
                << " iterations\n";
    }
    if (state.status == FrameStatus::kFailed) {
      result.status = RunStatus::kTrackingFailed;
      result.failed_frame = f;
      result.message = "tracking failed at frame " + std::to_string(f) + " with " +
                        std::to_string(state.observations.size()) + " usable observations";
      break;
    }
  }
  return result;
}

void write_sequence_outputs(const std::filesystem::path& dir,
                            const SequenceResult& result,
                            const PipelineConfig& config) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out = open_output(dir / "poses.csv");
    out << "frame,tx,ty,tz,qx,qy,qz,qw\n";
    for (const auto& f : result.frames) write_pose_row(out, f.frame, f.pose);
  }
  {
    std::ofstream out = open_output(dir / "trajectories.csv");
    out << "id,frame,x,y,z\n";
    for (const auto& f : result.frames) eval::write_point_rows(out, f.points);
  }
  {
    std::ofstream out = open_output(dir / "frames.csv");
    out << "frame,status,active,lost,iterations,final_cost,median_increment,seconds\n";
    for (const auto& f : result.frames) {
      out << f.frame << "," << to_string(f.status) << "," << f.active << ","
          << f.lost << "," << f.iterations << "," << f.final_cost << ","
          << f.median_increment << "," << f.seconds << "\n";
    }
  }
  if (!result.init.points.empty()) {
    std::vector<int> ids;
    std::vector<Eigen::Vector3d> pts;
    for (const auto& p : result.init.points) {
      ids.push_back(p.id);
      pts.push_back(p.position);
    }
    write_ply(dir / "init_map.ply", ids, pts);
    std::ofstream out = open_output(dir / "init_pose.csv");
    out << "frame,tx,ty,tz,qx,qy,qz,qw\n";
    write_pose_row(out, std::max(result.init_frame, 0), result.init.relative_pose);
  }
  if (config.write_ply) {
    for (const auto& f : result.frames) {
      write_ply(dir / frame_name("cloud_", f.frame, ".ply"), f.points.ids,
                f.points.points);
    }
  }
}

void write_observations(std::ostream& out,
                        const std::vector<std::vector<Observation>>& observations) {
  precise(out);
  out << "frame,id,u_x,u_y\n";
  for (std::size_t f = 0; f < observations.size(); ++f) {
    for (const auto& o : observations[f]) {
      out << f << "," << o.point_id << "," << o.pixel.x() << "," << o.pixel.y()
          << "\n";
    }
  }
}

std::vector<std::vector<Observation>> read_observations(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  std::vector<std::vector<Observation>> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 4) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected frame,id,u_x,u_y");
    }
    const int frame = parse_int(f[0], "frame");
    if (frame < 0) throw FormatError(path.string() + ": negative frame index");
    if (frame >= static_cast<int>(out.size())) out.resize(frame + 1);
    out[frame].push_back({parse_int(f[1], "id"),
                          {parse_double(f[2], "u_x"), parse_double(f[3], "u_y")}});
  }
  return out;
}

}  // namespace deftrack
