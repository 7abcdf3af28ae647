#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "poseforest/forest.hpp"

namespace pf {

/// Container layout (all integers little-endian):
///
///   "PFRF" | version u8 | section count u8 | sections...
///   section: tag u8 | payload length u64 | payload
///
/// Forest block (used inside every section):
///
///   offset_scale f32 | rotation_scale f32 | max_depth u16 | objective u8 |
///   reserved u8 | config_hash u64 | tree count u32 | trees...
///   tree: node count u32 | nodes (16 B each) | leaf count u32 | leaves (56 B each)
///
/// See docs/model_format.md for the node and leaf records.
inline constexpr char kModelMagic[4] = {'P', 'F', 'R', 'F'};
inline constexpr std::uint8_t kModelVersion = 1;
inline constexpr std::size_t kNodeRecordBytes = 16;
inline constexpr std::size_t kLeafRecordBytes = 56;

enum class SectionTag : std::uint8_t { Forest = 0, Detector = 1, Tracker = 2 };

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void i8(std::int8_t v) { u8(static_cast<std::uint8_t>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f32(float v);
  void f64(double v);
  void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }

  std::vector<std::uint8_t>& bytes() { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked reader; every overrun raises CorruptModel.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::int8_t i8() { return static_cast<std::int8_t>(u8()); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  float f32();
  double f64();
  std::span<const std::uint8_t> raw(std::size_t n);

  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::uint64_t get(int n);
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_forest(ByteWriter& out, const Forest& forest);
Forest read_forest(ByteReader& in);

struct Section {
  SectionTag tag;
  std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> write_container(std::span<const Section> sections);
/// Throws CorruptModel on bad magic, version, or lengths.
std::vector<Section> read_container(std::span<const std::uint8_t> bytes);
/// Payload of the first section with `tag`; CorruptModel when absent.
const Section& find_section(const std::vector<Section>& sections, SectionTag tag);

/// Bare forest in a single-section container.
std::vector<std::uint8_t> serialize(const Forest& forest);
Forest deserialize(std::span<const std::uint8_t> bytes);

/// Node-array bytes and leaf-table bytes of a forest (no headers).
std::size_t node_bytes(const Forest& forest);
std::size_t leaf_bytes(const Forest& forest);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace pf
