#include "deftrack/io.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace deftrack {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

KeyValueText KeyValueText::parse(std::istream& in, const std::string& source) {
  KeyValueText out;
  out.source_ = source;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      std::ostringstream msg;
      msg << source << ":" << line_no << ": expected `key = value`";
      throw FormatError(msg.str());
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      std::ostringstream msg;
      msg << source << ":" << line_no << ": empty key";
      throw FormatError(msg.str());
    }
    out.entries_.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

KeyValueText KeyValueText::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return parse(in, path.string());
}

bool KeyValueText::has(const std::string& key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return true;
  }
  return false;
}

const std::string& KeyValueText::get(const std::string& key) const {
  const std::string* found = nullptr;
  for (const auto& [k, v] : entries_) {
    if (k == key) found = &v;
  }
  if (found == nullptr) {
    throw FormatError(source_ + ": missing field `" + key + "`");
  }
  return *found;
}

std::vector<std::string> KeyValueText::get_all(const std::string& key) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) {
    if (k == key) out.push_back(v);
  }
  return out;
}

std::vector<std::string> KeyValueText::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

double KeyValueText::get_double(const std::string& key) const {
  return parse_double(get(key), key);
}

double KeyValueText::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

int KeyValueText::get_int(const std::string& key) const {
  return parse_int(get(key), key);
}

int KeyValueText::get_int(const std::string& key, int fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::vector<double> KeyValueText::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& field : split_fields(get(key))) {
    out.push_back(parse_double(field, key));
  }
  return out;
}

std::vector<std::string> split_fields(const std::string& text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    if (ch == ',' || ch == ' ' || ch == '\t') {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

double parse_double(const std::string& text, const std::string& field) {
  const std::string t = trim(text);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw FormatError("field `" + field + "`: not a number: '" + text + "'");
  }
  return value;
}

int parse_int(const std::string& text, const std::string& field) {
  const std::string t = trim(text);
  int value = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw FormatError("field `" + field + "`: not an integer: '" + text + "'");
  }
  return value;
}

std::ostream& precise(std::ostream& out) {
  return out << std::setprecision(std::numeric_limits<double>::max_digits10);
}

void write_ply(const std::filesystem::path& path, const std::vector<int>& ids,
               const std::vector<Eigen::Vector3d>& points) {
  if (ids.size() != points.size()) {
    throw std::invalid_argument("write_ply: ids and points differ in size");
  }
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty double x\nproperty double y\nproperty double z\n"
         "property int id\nend_header\n";
  precise(out);
  for (std::size_t i = 0; i < points.size(); ++i) {
    out << points[i].x() << ' ' << points[i].y() << ' ' << points[i].z() << ' '
        << ids[i] << '\n';
  }
}

PlyCloud read_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  std::size_t count = 0;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (line.rfind("element vertex", 0) == 0) {
      count = static_cast<std::size_t>(parse_int(line.substr(15), "element vertex"));
    }
    if (line == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) throw FormatError(path.string() + ": missing PLY header");
  PlyCloud cloud;
  for (std::size_t i = 0; i < count; ++i) {
    Eigen::Vector3d p;
    int id = 0;
    if (!(in >> p.x() >> p.y() >> p.z() >> id)) {
      throw FormatError(path.string() + ": truncated vertex list");
    }
    cloud.points.push_back(p);
    cloud.ids.push_back(id);
  }
  return cloud;
}

}  // namespace deftrack
