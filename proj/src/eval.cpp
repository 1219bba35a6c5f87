#include "deftrack/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include <Eigen/Geometry>

#include "deftrack/io.hpp"

namespace deftrack::eval {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_pair(std::span<const Eigen::Vector3d> a,
                std::span<const Eigen::Vector3d> b) {
  if (a.empty()) throw EvalError("no matched points");
  if (a.size() != b.size()) throw EvalError("point count mismatch");
}

std::ifstream open_table(const std::filesystem::path& path, std::string& header) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  if (!std::getline(in, header)) throw FormatError(path.string() + ": empty file");
  return in;
}

double median(std::vector<double> v) {
  if (v.empty()) return kNaN;
  const auto mid = v.begin() + v.size() / 2;
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(v.begin(), mid);
  return 0.5 * (lower + upper);
}

}  // namespace

double optimal_scale(std::span<const Eigen::Vector3d> estimated,
                     std::span<const Eigen::Vector3d> truth) {
  check_pair(estimated, truth);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    num += estimated[i].dot(truth[i]);
    den += estimated[i].squaredNorm();
  }
  if (!(den > 0.0)) throw EvalError("undefined scale: estimate is all zero");
  return num / den;
}

double rmse_frame(std::span<const Eigen::Vector3d> estimated,
                  std::span<const Eigen::Vector3d> truth, double scale) {
  check_pair(estimated, truth);
  double sum = 0.0;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    sum += (scale * estimated[i] - truth[i]).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(estimated.size()));
}

std::pair<double, double> trajectory_error(const std::map<int, Pose>& estimated,
                                           const std::map<int, Pose>& truth) {
  std::vector<Eigen::Vector3d> src, dst;
  for (const auto& [frame, pose] : estimated) {
    const auto it = truth.find(frame);
    if (it == truth.end()) continue;
    src.push_back(pose.center());
    dst.push_back(it->second.center());
  }
  if (src.size() < 3) return {kNaN, kNaN};
  Eigen::Matrix3Xd a(3, src.size()), b(3, dst.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    a.col(i) = src[i];
    b.col(i) = dst[i];
  }
  const Eigen::Matrix4d t = Eigen::umeyama(a, b, true);
  const Eigen::Matrix3d sr = t.topLeftCorner<3, 3>();
  const double scale = std::cbrt(sr.determinant());
  const Eigen::Matrix3Xd aligned = (sr * a).colwise() + t.topRightCorner<3, 1>();
  const double rmse =
      std::sqrt((aligned - b).colwise().squaredNorm().sum() / src.size());
  return {rmse, scale};
}

EvalReport evaluate(std::span<const PointFrame> estimated,
                    std::span<const PointFrame> truth,
                    const std::map<int, Pose>& estimated_poses,
                    const std::map<int, Pose>& truth_poses,
                    std::span<const double> frame_seconds) {
  std::map<int, const PointFrame*> truth_by_frame;
  for (const auto& t : truth) truth_by_frame[t.frame] = &t;

  EvalReport report;
  double pooled = 0.0;
  std::size_t pooled_n = 0;
  std::unordered_map<int, Eigen::Vector3d> previous;
  for (const auto& est : estimated) {
    std::unordered_map<int, Eigen::Vector3d> current;
    for (std::size_t i = 0; i < est.ids.size(); ++i) current[est.ids[i]] = est.points[i];

    FrameError fe;
    fe.frame = est.frame;
    std::vector<double> steps;
    for (const auto& [id, p] : current) {
      if (const auto it = previous.find(id); it != previous.end()) {
        steps.push_back((p - it->second).norm());
      }
    }
    fe.median_step = median(std::move(steps));
    previous = std::move(current);

    const auto it = truth_by_frame.find(est.frame);
    if (it == truth_by_frame.end()) continue;
    std::unordered_map<int, std::size_t> truth_index;
    for (std::size_t i = 0; i < it->second->ids.size(); ++i) {
      truth_index[it->second->ids[i]] = i;
    }
    std::vector<Eigen::Vector3d> a, b;
    for (std::size_t i = 0; i < est.ids.size(); ++i) {
      const auto j = truth_index.find(est.ids[i]);
      if (j == truth_index.end()) continue;
      a.push_back(est.points[i]);
      b.push_back(it->second->points[j->second]);
    }
    if (a.empty()) continue;
    fe.matched = static_cast<int>(a.size());
    fe.scale = optimal_scale(a, b);
    fe.rmse = rmse_frame(a, b, fe.scale);
    fe.sum_squared = fe.rmse * fe.rmse * fe.matched;
    pooled += fe.sum_squared;
    pooled_n += a.size();
    report.frames.push_back(fe);
  }
  if (report.frames.empty()) throw EvalError("no frame shares points with the truth");

  report.sequence_rmse = std::sqrt(pooled / static_cast<double>(pooled_n));
  double sum = 0.0;
  for (const auto& f : report.frames) {
    sum += f.rmse;
    report.max_frame_rmse = std::max(report.max_frame_rmse, f.rmse);
  }
  report.mean_frame_rmse = sum / report.frames.size();

  std::tie(report.ate_rmse, report.ate_scale) =
      trajectory_error(estimated_poses, truth_poses);

  if (!frame_seconds.empty()) {
    double total = 0.0;
    for (const double s : frame_seconds) {
      total += s;
      report.max_seconds = std::max(report.max_seconds, s);
    }
    report.mean_seconds = total / frame_seconds.size();
  } else {
    report.mean_seconds = report.max_seconds = kNaN;
  }
  return report;
}

std::vector<PointFrame> read_point_table(const std::filesystem::path& path) {
  std::string line;
  std::ifstream in = open_table(path, line);
  std::map<int, PointFrame> frames;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 5) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected id,frame,x,y,z");
    }
    const int id = parse_int(f[0], "id");
    const int frame = parse_int(f[1], "frame");
    PointFrame& pf = frames[frame];
    pf.frame = frame;
    pf.ids.push_back(id);
    pf.points.emplace_back(parse_double(f[2], "x"), parse_double(f[3], "y"),
                           parse_double(f[4], "z"));
  }
  std::vector<PointFrame> out;
  for (auto& [frame, pf] : frames) out.push_back(std::move(pf));
  return out;
}

void write_point_rows(std::ostream& out, const PointFrame& frame) {
  for (std::size_t i = 0; i < frame.ids.size(); ++i) {
    const auto& p = frame.points[i];
    out << frame.ids[i] << "," << frame.frame << "," << p.x() << "," << p.y()
        << "," << p.z() << "\n";
  }
}

std::map<int, Pose> read_pose_table(const std::filesystem::path& path) {
  std::string line;
  std::ifstream in = open_table(path, line);
  std::map<int, Pose> poses;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 8) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected frame,tx,ty,tz,qx,qy,qz,qw");
    }
    const Eigen::Vector3d t(parse_double(f[1], "tx"), parse_double(f[2], "ty"),
                            parse_double(f[3], "tz"));
    const Eigen::Quaterniond q(parse_double(f[7], "qw"), parse_double(f[4], "qx"),
                               parse_double(f[5], "qy"), parse_double(f[6], "qz"));
    poses[parse_int(f[0], "frame")] = Pose(q, t);
  }
  return poses;
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
  precise(out);
  out << "frame,matched,scale,rmse,median_step\n";
  for (const auto& f : report.frames) {
    out << f.frame << "," << f.matched << "," << f.scale << "," << f.rmse << ","
        << f.median_step << "\n";
  }
}

void write_report_text(std::ostream& out, const EvalReport& report) {
  out << std::setprecision(6);
  out << "frames evaluated      " << report.frames.size() << "\n"
      << "sequence RMSE         " << report.sequence_rmse << "\n"
      << "mean per-frame RMSE   " << report.mean_frame_rmse << "\n"
      << "max per-frame RMSE    " << report.max_frame_rmse << "\n"
      << "ATE (diagnostic)      " << report.ate_rmse << "  (scale "
      << report.ate_scale << ")\n";
  if (!std::isnan(report.mean_seconds)) {
    out << "seconds per frame     mean " << report.mean_seconds << ", max "
        << report.max_seconds << "\n";
  }
}

TrendReport trend_report(const std::map<GridCell, double>& rmse) {
  if (rmse.size() < 2) throw EvalError("trend report needs at least 2 cells");
  TrendReport report;

  std::set<double> amplitudes, omegas;
  for (const auto& [cell, value] : rmse) {
    amplitudes.insert(cell.first);
    omegas.insert(cell.second);
  }
  std::ostringstream table;
  table << std::fixed << std::setprecision(3);
  table << std::setw(8) << "A \\ w";
  for (const double w : omegas) table << std::setw(10) << w;
  table << "\n";
  for (const double a : amplitudes) {
    table << std::setw(8) << a;
    for (const double w : omegas) {
      const auto it = rmse.find({a, w});
      if (it == rmse.end()) {
        table << std::setw(10) << "-";
      } else {
        table << std::setw(10) << it->second;
      }
    }
    table << "\n";
  }
  report.table = table.str();

  auto less = [&](GridCell lo, GridCell hi, bool strict) {
    std::ostringstream name;
    name << "RMSE(" << lo.first << "," << lo.second << ")"
         << (strict ? " < " : " <= ") << "RMSE(" << hi.first << "," << hi.second
         << ")";
    Verdict v{name.str(), false, false};
    const auto a = rmse.find(lo);
    const auto b = rmse.find(hi);
    if (a != rmse.end() && b != rmse.end()) {
      v.evaluated = true;
      v.pass = strict ? a->second < b->second : a->second <= b->second;
    }
    report.verdicts.push_back(v);
  };
  // The rigid cell is whichever omega was used with zero amplitude.
  GridCell rigid{0.0, 0.0};
  for (const double w : omegas) {
    if (rmse.count({0.0, w})) {
      rigid = {0.0, w};
      break;
    }
  }
  less(rigid, {2.5, 2.5}, true);
  less({2.5, 2.5}, {10.0, 5.0}, true);
  for (const double a : amplitudes) {
    if (a < 5.0) continue;
    std::vector<double> ws;
    for (const double w : omegas) {
      if (rmse.count({a, w})) ws.push_back(w);
    }
    for (std::size_t i = 1; i < ws.size(); ++i) less({a, ws[i - 1]}, {a, ws[i]}, false);
  }

  bool any = false;
  report.pass = true;
  for (const auto& v : report.verdicts) {
    if (!v.evaluated) continue;
    any = true;
    report.pass = report.pass && v.pass;
  }
  report.pass = report.pass && any;
  return report;
}

}  // namespace deftrack::eval
