#include "deftrack/calibration.hpp"

#include <fstream>
#include <ostream>

#include "deftrack/io.hpp"

namespace deftrack {

namespace {

CameraModel from_fields(const KeyValueText& kv) {
  CameraModel c;
  const std::string& model = kv.get("model");
  if (model == "pinhole") {
    c.kind = CameraKind::kPinhole;
  } else if (model == "fisheye") {
    c.kind = CameraKind::kFisheye;
  } else {
    throw FormatError("field `model`: expected pinhole or fisheye, got '" +
                      model + "'");
  }
  c.width = kv.get_int("width");
  c.height = kv.get_int("height");
  c.fx = kv.get_double("fx");
  c.fy = kv.get_double("fy");
  c.cx = kv.get_double("cx");
  c.cy = kv.get_double("cy");
  if (kv.has("dist")) c.distortion = kv.get_doubles("dist");
  c.validate();
  return c;
}

}  // namespace

CameraModel parse_calibration(std::istream& in, const std::string& source) {
  return from_fields(KeyValueText::parse(in, source));
}

CameraModel load_calibration(const std::filesystem::path& path) {
  return from_fields(KeyValueText::load(path));
}

void write_calibration(std::ostream& out, const CameraModel& camera) {
  precise(out);
  out << "model = "
      << (camera.kind == CameraKind::kPinhole ? "pinhole" : "fisheye") << '\n'
      << "width = " << camera.width << '\n'
      << "height = " << camera.height << '\n'
      << "fx = " << camera.fx << '\n'
      << "fy = " << camera.fy << '\n'
      << "cx = " << camera.cx << '\n'
      << "cy = " << camera.cy << '\n';
  if (!camera.distortion.empty()) {
    out << "dist =";
    for (double d : camera.distortion) out << ' ' << d;
    out << '\n';
  }
}

}  // namespace deftrack
