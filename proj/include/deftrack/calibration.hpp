#pragma once

#include <filesystem>
#include <iosfwd>

#include "deftrack/geometry.hpp"

namespace deftrack {

// Calibration files are `key = value` text (see io.hpp):
//
//   model  = pinhole | fisheye
//   width  = <int>       height = <int>
//   fx = <px>  fy = <px>  cx = <px>  cy = <px>
//   dist   = <c0> <c1> ...   (optional; comma or space separated)
//
// Pinhole coefficients are (k1, k2, p1, p2, k3); fisheye coefficients are the
// equidistant (k1, k2, k3, k4).

CameraModel parse_calibration(std::istream& in, const std::string& source = "");
CameraModel load_calibration(const std::filesystem::path& path);
void write_calibration(std::ostream& out, const CameraModel& camera);

}  // namespace deftrack
