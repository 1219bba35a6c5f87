#include "deftrack/sim.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "deftrack/initializer.hpp"
#include "deftrack/io.hpp"

namespace deftrack::sim {

namespace {

constexpr double kNearPlane = 0.1;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double lattice_value(std::int64_t ix, std::int64_t iy, std::int64_t iz,
                     std::uint64_t seed) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(ix));
  h = splitmix64(h ^ static_cast<std::uint64_t>(iy));
  h = splitmix64(h ^ static_cast<std::uint64_t>(iz));
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

double quintic(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double single_octave(const Eigen::Vector3d& p, std::uint64_t seed) {
  const Eigen::Vector3d f = p.array().floor();
  const std::int64_t ix = static_cast<std::int64_t>(f.x());
  const std::int64_t iy = static_cast<std::int64_t>(f.y());
  const std::int64_t iz = static_cast<std::int64_t>(f.z());
  const double u = quintic(p.x() - f.x());
  const double v = quintic(p.y() - f.y());
  const double w = quintic(p.z() - f.z());
  double corner[2][2][2];
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c)
        corner[a][b][c] = lattice_value(ix + a, iy + b, iz + c, seed);
  auto lerp = [](double x0, double x1, double t) { return x0 + t * (x1 - x0); };
  const double x00 = lerp(corner[0][0][0], corner[1][0][0], u);
  const double x10 = lerp(corner[0][1][0], corner[1][1][0], u);
  const double x01 = lerp(corner[0][0][1], corner[1][0][1], u);
  const double x11 = lerp(corner[0][1][1], corner[1][1][1], u);
  return lerp(lerp(x00, x10, v), lerp(x01, x11, v), w);
}

Eigen::Matrix3d camera_to_world_rotation(const Eigen::Vector3d& rpy_deg) {
  const Eigen::Vector3d r = rpy_deg * (std::numbers::pi / 180.0);
  return (Eigen::AngleAxisd(r.z(), Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(r.y(), Eigen::Vector3d::UnitX()) *
          Eigen::AngleAxisd(r.x(), Eigen::Vector3d::UnitZ()))
      .toRotationMatrix();
}

// Camera axes for a viewing direction: x is world x projected onto the image
// plane, which stays continuous for any view that is not along world x.
Eigen::Matrix3d look_at_rotation(const Eigen::Vector3d& direction) {
  const Eigen::Vector3d z = direction.normalized();
  Eigen::Vector3d x = Eigen::Vector3d::UnitX() - z.x() * z;
  if (x.norm() < 1e-9) x = Eigen::Vector3d::UnitY().cross(z);
  x.normalize();
  Eigen::Matrix3d r;
  r.col(0) = x;
  r.col(1) = z.cross(x);
  r.col(2) = z;
  return r;
}

std::mt19937_64 frame_rng(std::uint64_t seed, std::uint64_t stream, int frame) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(frame)};
  return std::mt19937_64(seq);
}

double draw_uniform(std::mt19937_64& rng, double lo, double hi) {
  if (!(hi > lo)) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

const char* surface_name(Surface s) {
  return s == Surface::kTube ? "tube" : "plane";
}

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw std::invalid_argument("scene field `" + field + "`: " + why);
}

}  // namespace

void SceneConfig::validate() const {
  require(amplitude >= 0.0, "amplitude", "must be >= 0");
  require(omega >= 0.0, "omega", "must be >= 0");
  require(fps > 0.0, "fps", "must be > 0");
  require(frames >= 1, "frames", "must be >= 1");
  require(tube_radius > 0.0 && tube_length > 0.0, "tube_radius",
          "tube dimensions must be > 0");
  require(plane_width > 0.0 && plane_height > 0.0 && plane_distance > 0.0,
          "plane_width", "plane dimensions must be > 0");
  require(mesh_around >= 3 && mesh_along >= 1, "mesh_around",
          "mesh resolution too small");
  require(gain_max >= gain_min && gain_min > 0.0, "gain", "need 0 < min <= max");
  require(bias_max >= bias_min, "bias", "need min <= max");
  require(pixel_noise >= 0.0, "pixel_noise", "must be >= 0");
  require(track_noise >= 0.0, "track_noise", "must be >= 0");
  require(texture_scale > 0.0, "texture_scale", "must be > 0");
  require(texture_octaves >= 1, "texture_octaves", "must be >= 1");
  require(light_range >= 0.0, "light_range", "must be >= 0");
  require(candidate_points >= 1, "candidate_points", "must be >= 1");
  require(grid_rows >= 1 && grid_cols >= 1, "grid", "must be >= 1");
  require(points_per_cell >= 1, "points_per_cell", "must be >= 1");
  require(!trajectory.empty(), "keyframe", "at least one keyframe required");
  require(camera.kind == CameraKind::kPinhole, "model",
          "the simulator renders pinhole cameras only");
  try {
    camera.validate();
  } catch (const GeometryError& e) {
    require(false, "camera", e.what());
  }
  for (std::size_t i = 1; i < trajectory.size(); ++i) {
    require(trajectory[i].frame > trajectory[i - 1].frame, "keyframe",
            "frames must be strictly increasing");
  }
  for (const auto& k : trajectory) {
    if (surface == Surface::kTube) {
      require(k.position.head<2>().norm() < tube_radius &&
                  k.position.z() < tube_length,
              "keyframe", "camera must stay inside the tube");
    } else {
      require(k.position.z() < plane_distance, "keyframe",
              "camera must stay in front of the plane");
    }
  }
}

SceneConfig parse_scene_config(std::istream& in, const std::string& source) {
  const KeyValueText kv = KeyValueText::parse(in, source);
  static const std::set<std::string> known = {
      "surface", "tube_radius", "tube_length", "plane_width", "plane_height",
      "plane_distance", "mesh_around", "mesh_along", "amplitude", "omega",
      "phase_scale", "fps", "frames", "width", "height", "fx", "fy", "cx",
      "cy", "keyframe", "gain_range", "bias_range", "pixel_noise",
      "track_noise", "texture_scale", "texture_octaves", "texture_contrast",
      "light_range", "background", "candidate_points", "grid",
      "points_per_cell", "border", "seed", "look_at"};
  for (const auto& key : kv.keys()) {
    if (!known.count(key)) {
      throw FormatError(source + ": unknown scene field `" + key + "`");
    }
  }

  SceneConfig c;
  if (kv.has("surface")) {
    const std::string& s = kv.get("surface");
    if (s == "tube") {
      c.surface = Surface::kTube;
    } else if (s == "plane") {
      c.surface = Surface::kPlane;
    } else {
      throw FormatError(source + ": field `surface` must be tube or plane");
    }
  }
  c.tube_radius = kv.get_double("tube_radius", c.tube_radius);
  c.tube_length = kv.get_double("tube_length", c.tube_length);
  c.plane_width = kv.get_double("plane_width", c.plane_width);
  c.plane_height = kv.get_double("plane_height", c.plane_height);
  c.plane_distance = kv.get_double("plane_distance", c.plane_distance);
  c.mesh_around = kv.get_int("mesh_around", c.mesh_around);
  c.mesh_along = kv.get_int("mesh_along", c.mesh_along);
  c.amplitude = kv.get_double("amplitude", c.amplitude);
  c.omega = kv.get_double("omega", c.omega);
  c.phase_scale = kv.get_double("phase_scale", c.phase_scale);
  c.fps = kv.get_double("fps", c.fps);
  c.frames = kv.get_int("frames", c.frames);

  CameraModel& cam = c.camera;
  cam.width = kv.get_int("width", cam.width);
  cam.height = kv.get_int("height", cam.height);
  cam.fx = kv.get_double("fx", cam.fx);
  cam.fy = kv.get_double("fy", cam.fy);
  cam.cx = kv.get_double("cx", cam.cx);
  cam.cy = kv.get_double("cy", cam.cy);

  if (kv.has("keyframe")) {
    c.trajectory.clear();
    for (const auto& text : kv.get_all("keyframe")) {
      const auto f = split_fields(text);
      if (f.size() != 7) {
        throw FormatError(source +
                          ": field `keyframe` needs `frame x y z roll pitch yaw`");
      }
      Keyframe k;
      k.frame = parse_int(f[0], "keyframe");
      k.position = {parse_double(f[1], "keyframe"),
                    parse_double(f[2], "keyframe"),
                    parse_double(f[3], "keyframe")};
      k.roll_pitch_yaw_deg = {parse_double(f[4], "keyframe"),
                              parse_double(f[5], "keyframe"),
                              parse_double(f[6], "keyframe")};
      c.trajectory.push_back(k);
    }
  }
  if (kv.has("look_at")) {
    const auto v = kv.get_doubles("look_at");
    if (v.size() != 3) throw FormatError(source + ": field `look_at` needs `x y z`");
    c.look_at = Eigen::Vector3d(v[0], v[1], v[2]);
  }
  auto range = [&](const char* key, double& lo, double& hi) {
    if (!kv.has(key)) return;
    const auto v = kv.get_doubles(key);
    if (v.size() != 2) throw FormatError(source + ": field `" + key + "` needs two values");
    lo = v[0];
    hi = v[1];
  };
  range("gain_range", c.gain_min, c.gain_max);
  range("bias_range", c.bias_min, c.bias_max);
  c.pixel_noise = kv.get_double("pixel_noise", c.pixel_noise);
  c.track_noise = kv.get_double("track_noise", c.track_noise);
  c.texture_scale = kv.get_double("texture_scale", c.texture_scale);
  c.texture_octaves = kv.get_int("texture_octaves", c.texture_octaves);
  c.texture_contrast = kv.get_double("texture_contrast", c.texture_contrast);
  c.light_range = kv.get_double("light_range", c.light_range);
  c.background = kv.get_double("background", c.background);
  c.candidate_points = kv.get_int("candidate_points", c.candidate_points);
  if (kv.has("grid")) {
    const auto v = kv.get_doubles("grid");
    if (v.size() != 2) throw FormatError(source + ": field `grid` needs `rows cols`");
    c.grid_rows = static_cast<int>(v[0]);
    c.grid_cols = static_cast<int>(v[1]);
  }
  c.points_per_cell = kv.get_int("points_per_cell", c.points_per_cell);
  c.border = kv.get_int("border", c.border);
  if (kv.has("seed")) {
    const std::string& s = kv.get("seed");
    std::uint64_t seed = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw FormatError(source + ": field `seed` must be a non-negative integer");
    }
    c.seed = seed;
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(source + ": " + e.what());
  }
  return c;
}

SceneConfig load_scene_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open scene config " + path.string());
  return parse_scene_config(in, path.string());
}

void write_scene_config(std::ostream& out, const SceneConfig& c) {
  precise(out);
  out << "surface = " << surface_name(c.surface) << "\n"
      << "tube_radius = " << c.tube_radius << "\n"
      << "tube_length = " << c.tube_length << "\n"
      << "plane_width = " << c.plane_width << "\n"
      << "plane_height = " << c.plane_height << "\n"
      << "plane_distance = " << c.plane_distance << "\n"
      << "mesh_around = " << c.mesh_around << "\n"
      << "mesh_along = " << c.mesh_along << "\n"
      << "amplitude = " << c.amplitude << "\n"
      << "omega = " << c.omega << "\n"
      << "phase_scale = " << c.phase_scale << "\n"
      << "fps = " << c.fps << "\n"
      << "frames = " << c.frames << "\n"
      << "width = " << c.camera.width << "\n"
      << "height = " << c.camera.height << "\n"
      << "fx = " << c.camera.fx << "\n"
      << "fy = " << c.camera.fy << "\n"
      << "cx = " << c.camera.cx << "\n"
      << "cy = " << c.camera.cy << "\n";
  for (const auto& k : c.trajectory) {
    out << "keyframe = " << k.frame << " " << k.position.x() << " "
        << k.position.y() << " " << k.position.z() << " "
        << k.roll_pitch_yaw_deg.x() << " " << k.roll_pitch_yaw_deg.y() << " "
        << k.roll_pitch_yaw_deg.z() << "\n";
  }
  if (c.look_at) {
    out << "look_at = " << c.look_at->x() << " " << c.look_at->y() << " "
        << c.look_at->z() << "\n";
  }
  out << "gain_range = " << c.gain_min << " " << c.gain_max << "\n"
      << "bias_range = " << c.bias_min << " " << c.bias_max << "\n"
      << "pixel_noise = " << c.pixel_noise << "\n"
      << "track_noise = " << c.track_noise << "\n"
      << "texture_scale = " << c.texture_scale << "\n"
      << "texture_octaves = " << c.texture_octaves << "\n"
      << "texture_contrast = " << c.texture_contrast << "\n"
      << "light_range = " << c.light_range << "\n"
      << "background = " << c.background << "\n"
      << "candidate_points = " << c.candidate_points << "\n"
      << "grid = " << c.grid_rows << " " << c.grid_cols << "\n"
      << "points_per_cell = " << c.points_per_cell << "\n"
      << "border = " << c.border << "\n"
      << "seed = " << c.seed << "\n";
}

Eigen::Vector3d deform_vertex(const Eigen::Vector3d& rest, double amplitude,
                              double omega, double time, double phase_scale) {
  Eigen::Vector3d out = rest;
  out.y() += amplitude *
             std::sin(omega * time + phase_scale * (rest.x() + rest.y() + rest.z()));
  return out;
}

std::vector<Eigen::Vector3d> deform_vertices(
    std::span<const Eigen::Vector3d> rest, double amplitude, double omega,
    double time, double phase_scale) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(rest.size());
  for (const auto& v : rest) {
    out.push_back(deform_vertex(v, amplitude, omega, time, phase_scale));
  }
  return out;
}

Pose trajectory_pose(std::span<const Keyframe> trajectory, double frame,
                     const std::optional<Eigen::Vector3d>& look_at) {
  if (trajectory.empty()) throw std::invalid_argument("empty trajectory");
  std::size_t i = 1;
  double s = 0.0;
  if (frame <= trajectory.front().frame || trajectory.size() == 1) {
    i = 1;
    s = 0.0;
  } else if (frame >= trajectory.back().frame) {
    i = trajectory.size() - 1;
    s = 1.0;
  } else {
    while (trajectory[i].frame < frame) ++i;
    s = (frame - trajectory[i - 1].frame) /
        static_cast<double>(trajectory[i].frame - trajectory[i - 1].frame);
  }
  const Keyframe& a = trajectory[trajectory.size() == 1 ? 0 : i - 1];
  const Keyframe& b = trajectory[trajectory.size() == 1 ? 0 : i];
  const Eigen::Vector3d position = (1.0 - s) * a.position + s * b.position;
  Eigen::Matrix3d r_wc;
  if (look_at) {
    const double roll_deg = (1.0 - s) * a.roll_pitch_yaw_deg.x() +
                            s * b.roll_pitch_yaw_deg.x();
    r_wc = look_at_rotation(*look_at - position) *
           Eigen::AngleAxisd(roll_deg * std::numbers::pi / 180.0,
                             Eigen::Vector3d::UnitZ())
               .toRotationMatrix();
  } else {
    const Eigen::Quaterniond qa(camera_to_world_rotation(a.roll_pitch_yaw_deg));
    const Eigen::Quaterniond qb(camera_to_world_rotation(b.roll_pitch_yaw_deg));
    r_wc = qa.slerp(s, qb).toRotationMatrix();
  }
  const Eigen::Matrix3d r_cw = r_wc.transpose();
  return Pose(r_cw, -r_cw * position);
}

Mesh build_mesh(const SceneConfig& config) {
  Mesh mesh;
  if (config.surface == Surface::kTube) {
    const int n = config.mesh_around;
    const int m = config.mesh_along;
    const double r = config.tube_radius;
    for (int j = 0; j <= m; ++j) {
      const double z = config.tube_length * j / m;
      for (int i = 0; i < n; ++i) {
        const double a = 2.0 * std::numbers::pi * i / n;
        mesh.rest.emplace_back(r * std::cos(a), r * std::sin(a), z);
      }
    }
    for (int j = 0; j < m; ++j) {
      for (int i = 0; i < n; ++i) {
        const int a = j * n + i;
        const int b = j * n + (i + 1) % n;
        const int c = (j + 1) * n + i;
        const int d = (j + 1) * n + (i + 1) % n;
        mesh.triangles.emplace_back(a, b, d);
        mesh.triangles.emplace_back(a, d, c);
      }
    }
    // Far cap: concentric rings so the interpolated deformation stays smooth.
    const int rings = std::max(2, n / 8);
    const int outer = m * n;
    const int first = static_cast<int>(mesh.rest.size());
    for (int k = 1; k < rings; ++k) {
      const double rk = r * (rings - k) / rings;
      for (int i = 0; i < n; ++i) {
        const double a = 2.0 * std::numbers::pi * i / n;
        mesh.rest.emplace_back(rk * std::cos(a), rk * std::sin(a),
                               config.tube_length);
      }
    }
    const int centre = static_cast<int>(mesh.rest.size());
    mesh.rest.emplace_back(0.0, 0.0, config.tube_length);
    auto ring_start = [&](int k) { return k == 0 ? outer : first + (k - 1) * n; };
    for (int k = 0; k + 1 < rings; ++k) {
      const int s0 = ring_start(k);
      const int s1 = ring_start(k + 1);
      for (int i = 0; i < n; ++i) {
        const int i1 = (i + 1) % n;
        mesh.triangles.emplace_back(s0 + i, s0 + i1, s1 + i1);
        mesh.triangles.emplace_back(s0 + i, s1 + i1, s1 + i);
      }
    }
    const int last = ring_start(rings - 1);
    for (int i = 0; i < n; ++i) {
      mesh.triangles.emplace_back(last + i, last + (i + 1) % n, centre);
    }
  } else {
    const int nx = config.mesh_around;
    const int ny = config.mesh_along;
    for (int j = 0; j <= ny; ++j) {
      const double y = config.plane_height * (static_cast<double>(j) / ny - 0.5);
      for (int i = 0; i <= nx; ++i) {
        const double x = config.plane_width * (static_cast<double>(i) / nx - 0.5);
        mesh.rest.emplace_back(x, y, config.plane_distance);
      }
    }
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const int a = j * (nx + 1) + i;
        const int b = a + 1;
        const int c = a + nx + 1;
        const int d = c + 1;
        mesh.triangles.emplace_back(a, b, d);
        mesh.triangles.emplace_back(a, d, c);
      }
    }
  }
  return mesh;
}

double value_noise(const Eigen::Vector3d& p, std::uint64_t seed, int octaves,
                   double scale) {
  double sum = 0.0;
  double norm = 0.0;
  double amp = 1.0;
  double freq = 1.0 / scale;
  for (int o = 0; o < octaves; ++o) {
    sum += amp * single_octave(p * freq, seed + 0x51ed2701ULL * (o + 1));
    norm += amp;
    amp *= 0.5;
    freq *= 2.0;
  }
  return sum / norm;
}

SceneTruth generate_truth(const SceneConfig& config) {
  config.validate();
  SceneTruth truth;
  for (int f = 0; f < config.frames; ++f) {
    truth.poses.push_back(trajectory_pose(config.trajectory, f, config.look_at));
    truth.times.push_back(f / config.fps);
  }

  std::mt19937_64 rng = frame_rng(config.seed, 1, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Eigen::Vector3d> candidates;
  candidates.reserve(config.candidate_points);
  for (int i = 0; i < config.candidate_points; ++i) {
    const double a = unit(rng);
    const double b = unit(rng);
    if (config.surface == Surface::kTube) {
      const double angle = 2.0 * std::numbers::pi * a;
      candidates.emplace_back(config.tube_radius * std::cos(angle),
                              config.tube_radius * std::sin(angle),
                              config.tube_length * b);
    } else {
      candidates.emplace_back(config.plane_width * (a - 0.5),
                              config.plane_height * (b - 0.5),
                              config.plane_distance);
    }
  }

  const CameraModel& cam = config.camera;
  const Pose& t0 = truth.poses.front();
  const double t_start = truth.times.front();
  std::vector<int> per_cell(config.grid_rows * config.grid_cols, 0);
  for (int i = 0; i < static_cast<int>(candidates.size()); ++i) {
    const Eigen::Vector3d x0 = deform_vertex(candidates[i], config.amplitude,
                                             config.omega, t_start,
                                             config.phase_scale);
    const Eigen::Vector3d xc = t0 * x0;
    if (xc.z() <= kNearPlane) continue;
    const Eigen::Vector2d u = project(cam, xc);
    if (!cam.in_bounds(u, config.border)) continue;
    const int col = std::min(config.grid_cols - 1,
                             static_cast<int>(u.x() * config.grid_cols / cam.width));
    const int row = std::min(config.grid_rows - 1,
                             static_cast<int>(u.y() * config.grid_rows / cam.height));
    int& count = per_cell[row * config.grid_cols + col];
    if (count >= config.points_per_cell) continue;
    ++count;
    truth.point_ids.push_back(i);
    truth.rest_points.push_back(candidates[i]);
  }

  truth.points.resize(config.frames);
  for (int f = 0; f < config.frames; ++f) {
    truth.points[f] = deform_vertices(truth.rest_points, config.amplitude,
                                      config.omega, truth.times[f],
                                      config.phase_scale);
  }
  return truth;
}

RenderResult render_frame(const SceneConfig& config, const Mesh& mesh,
                          const SceneTruth& truth, int frame) {
  if (frame < 0 || frame >= static_cast<int>(truth.poses.size())) {
    throw std::out_of_range("render_frame: frame out of range");
  }
  const CameraModel& cam = config.camera;
  const int w = cam.width;
  const int h = cam.height;
  const Pose& pose = truth.poses[frame];
  const double time = truth.times[frame];

  std::vector<Eigen::Vector3d> cam_pts(mesh.rest.size());
  for (std::size_t i = 0; i < mesh.rest.size(); ++i) {
    cam_pts[i] = pose * deform_vertex(mesh.rest[i], config.amplitude, config.omega,
                                      time, config.phase_scale);
  }

  RenderResult out;
  out.depth = Eigen::ArrayXXd::Zero(h, w);
  out.hit.setConstant(h, w, false);
  out.rest.assign(static_cast<std::size_t>(w) * h, Eigen::Vector3d::Zero());
  Eigen::ArrayXXd inv_depth = Eigen::ArrayXXd::Zero(h, w);

  for (const auto& tri : mesh.triangles) {
    const Eigen::Vector3d& c0 = cam_pts[tri[0]];
    const Eigen::Vector3d& c1 = cam_pts[tri[1]];
    const Eigen::Vector3d& c2 = cam_pts[tri[2]];
    if (c0.z() < kNearPlane || c1.z() < kNearPlane || c2.z() < kNearPlane) continue;
    const std::array<Eigen::Vector2d, 3> p = {
        Eigen::Vector2d(cam.fx * c0.x() / c0.z() + cam.cx, cam.fy * c0.y() / c0.z() + cam.cy),
        Eigen::Vector2d(cam.fx * c1.x() / c1.z() + cam.cx, cam.fy * c1.y() / c1.z() + cam.cy),
        Eigen::Vector2d(cam.fx * c2.x() / c2.z() + cam.cx, cam.fy * c2.y() / c2.z() + cam.cy)};
    const double area = (p[1] - p[0]).x() * (p[2] - p[0]).y() -
                        (p[1] - p[0]).y() * (p[2] - p[0]).x();
    if (std::abs(area) < 1e-12) continue;
    const double xmin = std::min({p[0].x(), p[1].x(), p[2].x()});
    const double xmax = std::max({p[0].x(), p[1].x(), p[2].x()});
    const double ymin = std::min({p[0].y(), p[1].y(), p[2].y()});
    const double ymax = std::max({p[0].y(), p[1].y(), p[2].y()});
    const int x0 = std::max(0, static_cast<int>(std::ceil(xmin)));
    const int x1 = std::min(w - 1, static_cast<int>(std::floor(xmax)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(ymin)));
    const int y1 = std::min(h - 1, static_cast<int>(std::floor(ymax)));
    if (x0 > x1 || y0 > y1) continue;
    const double iz[3] = {1.0 / c0.z(), 1.0 / c1.z(), 1.0 / c2.z()};
    const Eigen::Vector3d& r0 = mesh.rest[tri[0]];
    const Eigen::Vector3d& r1 = mesh.rest[tri[1]];
    const Eigen::Vector3d& r2 = mesh.rest[tri[2]];
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const Eigen::Vector2d q(x, y);
        auto edge = [&](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
          return (b - a).x() * (q - a).y() - (b - a).y() * (q - a).x();
        };
        const double l0 = edge(p[1], p[2]) / area;
        const double l1 = edge(p[2], p[0]) / area;
        const double l2 = 1.0 - l0 - l1;
        constexpr double kEps = -1e-9;
        if (l0 < kEps || l1 < kEps || l2 < kEps) continue;
        const double w0 = l0 * iz[0];
        const double w1 = l1 * iz[1];
        const double w2 = l2 * iz[2];
        const double sum = w0 + w1 + w2;
        if (sum <= inv_depth(y, x)) continue;  // farther than what is stored
        inv_depth(y, x) = sum;
        out.depth(y, x) = 1.0 / sum;
        out.hit(y, x) = true;
        out.rest[static_cast<std::size_t>(y) * w + x] = (w0 * r0 + w1 * r1 + w2 * r2) / sum;
      }
    }
  }

  std::mt19937_64 rng = frame_rng(config.seed, 2, frame);
  out.gain = draw_uniform(rng, config.gain_min, config.gain_max);
  out.bias = draw_uniform(rng, config.bias_min, config.bias_max);
  std::normal_distribution<double> noise(0.0, 1.0);

  ImageArray pixels(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double value = config.background;
      if (out.hit(y, x)) {
        const Eigen::Vector3d& r = out.rest[static_cast<std::size_t>(y) * w + x];
        value = 128.0 + config.texture_contrast *
                            value_noise(r, config.seed, config.texture_octaves,
                                        config.texture_scale);
        if (config.light_range > 0.0) {
          const double d = out.depth(y, x) / config.light_range;
          value /= 1.0 + d * d;
        }
      }
      value = out.gain * value + out.bias;
      if (config.pixel_noise > 0.0) value += config.pixel_noise * noise(rng);
      pixels(y, x) = static_cast<float>(value);
    }
  }
  out.image = ImageBuffer(std::move(pixels), frame, time);
  return out;
}

std::vector<std::vector<Observation>> emit_observations(
    const SceneConfig& config, const SceneTruth& truth) {
  std::vector<std::vector<Observation>> out(truth.points.size());
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t f = 0; f < truth.points.size(); ++f) {
    std::mt19937_64 rng = frame_rng(config.seed, 3, static_cast<int>(f));
    for (std::size_t i = 0; i < truth.point_ids.size(); ++i) {
      const Eigen::Vector3d xc = truth.poses[f] * truth.points[f][i];
      // Draw for every point so the noise of a point does not depend on the
      // visibility of the others.
      const Eigen::Vector2d n(noise(rng), noise(rng));
      if (xc.z() <= kNearPlane) continue;
      const Eigen::Vector2d u = project(config.camera, xc);
      if (!config.camera.in_bounds(u)) continue;
      out[f].push_back({truth.point_ids[i], u + config.track_noise * n});
    }
  }
  return out;
}

int visible_vertex_count(const SceneConfig& config, const Mesh& mesh,
                         const SceneTruth& truth, int frame) {
  int count = 0;
  for (const auto& v : mesh.rest) {
    const Eigen::Vector3d xc =
        truth.poses[frame] * deform_vertex(v, config.amplitude, config.omega,
                                           truth.times[frame], config.phase_scale);
    if (xc.z() <= kNearPlane) continue;
    if (config.camera.in_bounds(project(config.camera, xc))) ++count;
  }
  return count;
}

CameraZeroTruth to_camera_zero(const SceneTruth& truth) {
  CameraZeroTruth out;
  if (truth.poses.empty()) return out;
  const Pose& t0 = truth.poses.front();
  const Pose t0_inv = t0.inverse();
  for (std::size_t f = 0; f < truth.poses.size(); ++f) {
    out.poses.push_back(truth.poses[f] * t0_inv);
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(truth.points[f].size());
    for (const auto& p : truth.points[f]) pts.push_back(t0 * p);
    out.points.push_back(std::move(pts));
  }
  return out;
}

void write_truth(const std::filesystem::path& dir, const SceneTruth& truth,
                 bool per_frame_ply) {
  std::filesystem::create_directories(dir);
  const CameraZeroTruth cz = to_camera_zero(truth);
  {
    std::ofstream out(dir / "truth_poses.csv");
    if (!out) throw FormatError("cannot write " + (dir / "truth_poses.csv").string());
    precise(out);
    out << "frame,tx,ty,tz,qx,qy,qz,qw\n";
    for (std::size_t f = 0; f < cz.poses.size(); ++f) {
      write_pose_row(out, static_cast<int>(f), cz.poses[f]);
    }
  }
  {
    std::ofstream out(dir / "truth_points.csv");
    if (!out) throw FormatError("cannot write " + (dir / "truth_points.csv").string());
    precise(out);
    out << "id,frame,x,y,z\n";
    for (std::size_t f = 0; f < cz.points.size(); ++f) {
      for (std::size_t i = 0; i < truth.point_ids.size(); ++i) {
        const auto& p = cz.points[f][i];
        out << truth.point_ids[i] << "," << f << "," << p.x() << "," << p.y()
            << "," << p.z() << "\n";
      }
    }
  }
  if (per_frame_ply) {
    for (std::size_t f = 0; f < cz.points.size(); ++f) {
      std::ostringstream name;
      name << "truth_" << std::setw(4) << std::setfill('0') << f << ".ply";
      write_ply(dir / name.str(), truth.point_ids, cz.points[f]);
    }
  }
}

}  // namespace deftrack::sim
