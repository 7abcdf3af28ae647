#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "poseforest/geom.hpp"
#include "poseforest/mesh.hpp"
#include "poseforest/pipeline.hpp"
#include "poseforest/render.hpp"

namespace pf {

/// ASCII OBJ subset: 'v' and triangular 'f' records (1-based, "i/t/n" forms
/// accepted). Other records are ignored. Throws Io or InvalidMesh.
TriangleMesh read_obj(const std::filesystem::path& path);
TriangleMesh parse_obj(std::istream& in);
void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh);

/// Binary PGM 'P5', maxval 65535, big-endian millimeters, 0 = no return.
DepthFrame read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const DepthFrame& frame);
std::vector<std::uint8_t> encode_pgm(const DepthFrame& frame);
DepthFrame decode_pgm(std::span<const std::uint8_t> bytes);

/// Pose as 12 numbers: rotation rows then translation, "r00 r01 r02 r10 ... r22 tx ty tz".
/// Parsing and formatting again reproduces the text exactly.
std::string format_pose(const Pose& pose);
Pose parse_pose(const std::string& text);

/// One pose per line, "none" where the instance is absent.
std::vector<std::optional<Pose>> read_pose_track(const std::filesystem::path& path);
void write_pose_track(const std::filesystem::path& path, const std::vector<std::optional<Pose>>& poses);

/// Plain-text sequence description, paths relative to the manifest:
///
///   intrinsics fx fy cx cy width height
///   mesh mesh.obj
///   frame frames/0000.pgm      (one per frame, in order)
///   truth 0 truth_0.txt        (optional; one pose track per instance)
struct SequenceManifest {
  CameraIntrinsics intrinsics;
  std::filesystem::path mesh;
  std::vector<std::filesystem::path> frames;
  std::map<int, std::filesystem::path> truths;

  /// Truth tracks loaded and checked against the frame count.
  std::map<int, std::vector<std::optional<Pose>>> load_truths() const;
  /// Per frame, the poses of the instances present.
  std::vector<std::vector<Pose>> truths_per_frame() const;
};

/// Throws Io when the manifest or any referenced file is missing, and
/// InvalidArgument on malformed lines or inconsistent counts.
SequenceManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const SequenceManifest& manifest);

/// Trajectory log, one line per record:
///   frame id state r00 ... tz score step_us
std::string format_log_line(const InstanceReport& r);
InstanceReport parse_log_line(const std::string& line);
void write_log(std::ostream& out, const std::vector<InstanceReport>& log);
std::vector<InstanceReport> read_log(const std::filesystem::path& path);

/// Ordered key-value report; prints as "key = value" lines.
class Report {
 public:
  void add(const std::string& key, const std::string& value);
  void add(const std::string& key, double value, int precision = 3);
  void add(const std::string& key, std::int64_t value);
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string text() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace pf
