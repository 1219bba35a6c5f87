#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace deftrack {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Line-oriented `key = value` text. `#` starts a comment; keys may repeat
/// (e.g. keyframes), in which case every occurrence is kept in order.
class KeyValueText {
 public:
  static KeyValueText parse(std::istream& in, const std::string& source = "");
  static KeyValueText load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::vector<std::string> get_all(const std::string& key) const;
  std::vector<std::string> keys() const;

  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;

 private:
  std::string source_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Splits on commas and/or whitespace.
std::vector<std::string> split_fields(const std::string& text);
double parse_double(const std::string& text, const std::string& field);
int parse_int(const std::string& text, const std::string& field);

/// Full round-trip precision for doubles in text outputs.
std::ostream& precise(std::ostream& out);

/// ASCII PLY with x, y, z and an integer id per vertex.
void write_ply(const std::filesystem::path& path,
               const std::vector<int>& ids,
               const std::vector<Eigen::Vector3d>& points);

struct PlyCloud {
  std::vector<int> ids;
  std::vector<Eigen::Vector3d> points;
};
PlyCloud read_ply(const std::filesystem::path& path);

}  // namespace deftrack
