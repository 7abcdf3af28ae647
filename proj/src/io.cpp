#include "poseforest/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "poseforest/model_io.hpp"

namespace pf {

namespace fs = std::filesystem;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

namespace {

// First integer of an OBJ face token such as "3", "3/1" or "3//2".
int face_index(const std::string& token, std::size_t vertex_count) {
  const std::string head = token.substr(0, token.find('/'));
  std::size_t used = 0;
  int i = 0;
  try {
    i = std::stoi(head, &used);
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidMesh, "bad face index '" + token + "'");
  }
  if (used != head.size()) throw Error(ErrorKind::InvalidMesh, "bad face index '" + token + "'");
  if (i < 0) i += static_cast<int>(vertex_count) + 1;  // relative index
  if (i < 1 || i > static_cast<int>(vertex_count))
    throw Error(ErrorKind::InvalidMesh, "face index out of range: " + token);
  return i - 1;
}

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Rotation written from a rotation vector snapped to a 1e-12 rad grid: the
// vector recovered from the printed matrix snaps back to the same grid point,
// so formatting a parsed pose reproduces the text.
Eigen::Matrix3d snapped_rotation(const Eigen::Quaterniond& q) {
  constexpr double grid = 1e-12;
  Eigen::Vector3d w = log_rotation<double>(q);
  for (int i = 0; i < 3; ++i) w[i] = std::round(w[i] / grid) * grid;
  return exp_rotation<double>(w).toRotationMatrix();
}

}  // namespace

TriangleMesh parse_obj(std::istream& in) {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<Eigen::Vector3i> triangles;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Eigen::Vector3d p;
      if (!(ls >> p.x() >> p.y() >> p.z()))
        throw Error(ErrorKind::InvalidMesh, "bad vertex on line " + std::to_string(line_no));
      vertices.push_back(p);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) idx.push_back(face_index(tok, vertices.size()));
      if (idx.size() != 3)
        throw Error(ErrorKind::InvalidMesh, "face on line " + std::to_string(line_no) + " is not a triangle");
      triangles.emplace_back(idx[0], idx[1], idx[2]);
    }
  }
  return TriangleMesh(std::move(vertices), std::move(triangles));
}

TriangleMesh read_obj(const fs::path& path) {
  std::istringstream in(read_text(path));
  return parse_obj(in);
}

void write_obj(const fs::path& path, const TriangleMesh& mesh) {
  std::string s;
  for (const auto& v : mesh.vertices()) s += "v " + number(v.x()) + " " + number(v.y()) + " " + number(v.z()) + "\n";
  for (const auto& t : mesh.triangles())
    s += "f " + std::to_string(t[0] + 1) + " " + std::to_string(t[1] + 1) + " " + std::to_string(t[2] + 1) + "\n";
  write_text(path, s);
}

std::vector<std::uint8_t> encode_pgm(const DepthFrame& frame) {
  const std::string header = "P5\n" + std::to_string(frame.width()) + " " + std::to_string(frame.height()) + "\n65535\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 2 * std::size_t(frame.width()) * std::size_t(frame.height()));
  for (int y = 0; y < frame.height(); ++y)
    for (int x = 0; x < frame.width(); ++x) {
      const double mm = std::clamp(std::round(double(frame(x, y)) * 1000.0), 0.0, 65535.0);
      const auto v = static_cast<std::uint16_t>(mm);
      out.push_back(static_cast<std::uint8_t>(v >> 8));
      out.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
  return out;
}

DepthFrame decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t += static_cast<char>(bytes[pos++]);
    return t;
  };
  if (token() != "P5") throw Error(ErrorKind::Io, "not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw Error(ErrorKind::Io, "malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval != 65535) throw Error(ErrorKind::Io, "PGM must be 16-bit with maxval 65535");
  ++pos;  // single whitespace before the raster
  const std::size_t need = 2 * std::size_t(w) * std::size_t(h);
  if (bytes.size() < pos + need) throw Error(ErrorKind::Io, "truncated PGM raster");
  DepthFrame frame(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x, pos += 2) {
      const int mm = (bytes[pos] << 8) | bytes[pos + 1];
      frame(x, y) = static_cast<float>(mm / 1000.0);
    }
  return frame;
}

DepthFrame read_pgm(const fs::path& path) {
  const std::string s = read_text(path);
  return decode_pgm(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

void write_pgm(const fs::path& path, const DepthFrame& frame) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, encode_pgm(frame));
}

std::string format_pose(const Pose& pose) {
  const Eigen::Matrix3d r = snapped_rotation(pose.rotation());
  std::string s;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) s += number(r(i, j)) + " ";
  s += number(pose.translation().x()) + " " + number(pose.translation().y()) + " " + number(pose.translation().z());
  return s;
}

namespace {

Pose pose_from_numbers(const double* v) {
  Eigen::Matrix3d r;
  r << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
  if (!r.allFinite() || (r.transpose() * r - Eigen::Matrix3d::Identity()).norm() > 1e-6 || r.determinant() < 0)
    throw Error(ErrorKind::InvalidArgument, "pose rotation is not orthonormal");
  // Nearest rotation, for inputs written with fewer digits.
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Quaterniond q(svd.matrixU() * svd.matrixV().transpose());
  return Pose(q.normalized(), Eigen::Vector3d(v[9], v[10], v[11]));
}

}  // namespace

Pose parse_pose(const std::string& text) {
  std::istringstream in(text);
  double v[12];
  for (double& x : v)
    if (!(in >> x)) throw Error(ErrorKind::InvalidArgument, "pose needs 12 numbers");
  std::string extra;
  if (in >> extra) throw Error(ErrorKind::InvalidArgument, "trailing text after pose");
  return pose_from_numbers(v);
}

std::vector<std::optional<Pose>> read_pose_track(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::optional<Pose>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line == "none")
      out.emplace_back();
    else
      out.emplace_back(parse_pose(line));
  }
  return out;
}

void write_pose_track(const fs::path& path, const std::vector<std::optional<Pose>>& poses) {
  std::string s;
  for (const auto& p : poses) s += (p ? format_pose(*p) : std::string("none")) + "\n";
  write_text(path, s);
}

SequenceManifest read_manifest(const fs::path& path) {
  std::istringstream in(read_text(path));
  const fs::path base = path.parent_path();
  SequenceManifest m;
  bool have_intrinsics = false;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key[0] == '#') continue;
    auto bad = [&] { return Error(ErrorKind::InvalidArgument, "manifest line " + std::to_string(line_no) + ": " + line); };
    std::string rel;
    if (key == "intrinsics") {
      auto& k = m.intrinsics;
      if (!(ls >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height)) throw bad();
      k.validate();
      have_intrinsics = true;
    } else if (key == "mesh") {
      if (!(ls >> rel)) throw bad();
      m.mesh = base / rel;
    } else if (key == "frame") {
      if (!(ls >> rel)) throw bad();
      m.frames.push_back(base / rel);
    } else if (key == "truth") {
      int id = 0;
      if (!(ls >> id >> rel)) throw bad();
      m.truths[id] = base / rel;
    } else {
      throw bad();
    }
  }
  if (!have_intrinsics) throw Error(ErrorKind::InvalidArgument, "manifest has no intrinsics");
  auto require = [](const fs::path& p) {
    if (!fs::exists(p)) throw Error(ErrorKind::Io, "missing file " + p.string());
  };
  if (!m.mesh.empty()) require(m.mesh);
  for (const auto& f : m.frames) require(f);
  for (const auto& [id, p] : m.truths) require(p);
  m.load_truths();
  return m;
}

std::map<int, std::vector<std::optional<Pose>>> SequenceManifest::load_truths() const {
  std::map<int, std::vector<std::optional<Pose>>> out;
  for (const auto& [id, p] : truths) {
    out[id] = read_pose_track(p);
    if (out[id].size() != frames.size())
      throw Error(ErrorKind::InvalidArgument, "truth track " + std::to_string(id) + " does not match the frame count");
  }
  return out;
}

std::vector<std::vector<Pose>> SequenceManifest::truths_per_frame() const {
  std::vector<std::vector<Pose>> out(frames.size());
  for (const auto& [id, track] : load_truths())
    for (std::size_t f = 0; f < track.size(); ++f)
      if (track[f]) out[f].push_back(*track[f]);
  return out;
}

void write_manifest(const fs::path& path, const SequenceManifest& m) {
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) { return p.lexically_relative(base).generic_string(); };
  const auto& k = m.intrinsics;
  std::string s = "intrinsics " + number(k.fx) + " " + number(k.fy) + " " + number(k.cx) + " " + number(k.cy) + " " +
                  std::to_string(k.width) + " " + std::to_string(k.height) + "\n";
  if (!m.mesh.empty()) s += "mesh " + rel(m.mesh) + "\n";
  for (const auto& f : m.frames) s += "frame " + rel(f) + "\n";
  for (const auto& [id, p] : m.truths) s += "truth " + std::to_string(id) + " " + rel(p) + "\n";
  write_text(path, s);
}

std::string format_log_line(const InstanceReport& r) {
  char score[32];
  std::snprintf(score, sizeof score, "%.6f", r.score);
  return std::to_string(r.frame) + " " + std::to_string(r.id) + " " + to_string(r.state) + " " +
         format_pose(r.pose) + " " + score + " " + std::to_string(r.step_us);
}

InstanceReport parse_log_line(const std::string& line) {
  std::istringstream in(line);
  InstanceReport r;
  std::string state;
  double v[12];
  if (!(in >> r.frame >> r.id >> state)) throw Error(ErrorKind::InvalidArgument, "bad log line: " + line);
  for (double& x : v)
    if (!(in >> x)) throw Error(ErrorKind::InvalidArgument, "bad log pose: " + line);
  if (!(in >> r.score >> r.step_us)) throw Error(ErrorKind::InvalidArgument, "bad log line: " + line);
  if (state == "Detected")
    r.state = InstanceState::Detected;
  else if (state == "Tracking")
    r.state = InstanceState::Tracking;
  else if (state == "Lost")
    r.state = InstanceState::Lost;
  else
    throw Error(ErrorKind::InvalidArgument, "unknown state " + state);
  r.pose = pose_from_numbers(v);
  return r;
}

void write_log(std::ostream& out, const std::vector<InstanceReport>& log) {
  for (const auto& r : log) out << format_log_line(r) << '\n';
}

std::vector<InstanceReport> read_log(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<InstanceReport> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') out.push_back(parse_log_line(line));
  return out;
}

void Report::add(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }

void Report::add(const std::string& key, double value, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, value);
  add(key, std::string(buf));
}

void Report::add(const std::string& key, std::int64_t value) { add(key, std::to_string(value)); }

std::string Report::text() const {
  std::string s;
  for (const auto& [k, v] : entries_) s += k + " = " + v + "\n";
  return s;
}

}  // namespace pf
