#include "poseforest/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace pf {

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::uint64_t ByteReader::get(int n) {
  if (remaining() < static_cast<std::size_t>(n)) throw Error(ErrorKind::CorruptModel, "truncated model");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
  pos_ += n;
  return v;
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
  if (remaining() < n) throw Error(ErrorKind::CorruptModel, "truncated model");
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}

void write_forest(ByteWriter& out, const Forest& forest) {
  out.f32(static_cast<float>(forest.offset_scale()));
  out.f32(static_cast<float>(forest.rotation_scale()));
  out.u16(static_cast<std::uint16_t>(forest.max_depth()));
  out.u8(static_cast<std::uint8_t>(forest.objective()));
  out.u8(0);
  out.u64(forest.config_hash());
  out.u32(static_cast<std::uint32_t>(forest.trees().size()));
  for (const auto& tree : forest.trees()) {
    out.u32(static_cast<std::uint32_t>(tree.nodes.size()));
    for (const auto& n : tree.nodes) {
      out.u8(n.kind);
      out.u8(n.flags);
      out.u16(n.index);
      out.i8(n.ux), out.i8(n.uy), out.i8(n.vx), out.i8(n.vy);
      out.f32(n.threshold);
      out.u32(n.child);
    }
    out.u32(static_cast<std::uint32_t>(tree.leaves.size()));
    for (const auto& l : tree.leaves) {
      out.f32(l.foreground_probability);
      for (float v : l.vote) out.f32(v);
      for (float s : l.spread) out.f32(s);
      out.u32(l.sample_count);
    }
  }
}

namespace {

// Every split's children and every leaf index must be in range, and every
// node reachable exactly once from the root.
void check_tree(const Tree& tree) {
  if (tree.nodes.empty()) throw Error(ErrorKind::CorruptModel, "empty tree");
  std::vector<std::uint8_t> seen(tree.nodes.size(), 0);
  std::vector<std::uint32_t> stack{0};
  std::size_t visited = 0;
  while (!stack.empty()) {
    const std::uint32_t i = stack.back();
    stack.pop_back();
    if (seen[i]) throw Error(ErrorKind::CorruptModel, "node reached twice");
    seen[i] = 1;
    ++visited;
    const Node& n = tree.nodes[i];
    if (n.kind > static_cast<std::uint8_t>(FeatureKind::ComponentDifference))
      throw Error(ErrorKind::CorruptModel, "unknown node kind");
    if (n.is_leaf()) {
      if (n.child >= tree.leaves.size()) throw Error(ErrorKind::CorruptModel, "leaf index out of range");
      continue;
    }
    if (std::uint64_t(n.child) + 1 >= tree.nodes.size() || n.child == 0)
      throw Error(ErrorKind::CorruptModel, "child index out of range");
    stack.push_back(n.child);
    stack.push_back(n.child + 1);
  }
  if (visited != tree.nodes.size()) throw Error(ErrorKind::CorruptModel, "unreachable nodes");
}

}  // namespace

Forest read_forest(ByteReader& in) {
  const float offset_scale = in.f32();
  const float rotation_scale = in.f32();
  const int max_depth = in.u16();
  const std::uint8_t objective = in.u8();
  in.u8();
  const std::uint64_t hash = in.u64();
  if (objective > static_cast<std::uint8_t>(Objective::Regression))
    throw Error(ErrorKind::CorruptModel, "unknown objective");
  const std::uint32_t n_trees = in.u32();
  std::vector<Tree> trees;
  for (std::uint32_t t = 0; t < n_trees; ++t) {
    Tree tree;
    const std::uint32_t n_nodes = in.u32();
    if (in.remaining() < std::size_t(n_nodes) * kNodeRecordBytes)
      throw Error(ErrorKind::CorruptModel, "truncated node array");
    tree.nodes.resize(n_nodes);
    for (auto& n : tree.nodes) {
      n.kind = in.u8();
      n.flags = in.u8();
      n.index = in.u16();
      n.ux = in.i8(), n.uy = in.i8(), n.vx = in.i8(), n.vy = in.i8();
      n.threshold = in.f32();
      n.child = in.u32();
    }
    const std::uint32_t n_leaves = in.u32();
    if (in.remaining() < std::size_t(n_leaves) * kLeafRecordBytes)
      throw Error(ErrorKind::CorruptModel, "truncated leaf table");
    tree.leaves.resize(n_leaves);
    for (auto& l : tree.leaves) {
      l.foreground_probability = in.f32();
      for (float& v : l.vote) v = in.f32();
      for (float& s : l.spread) s = in.f32();
      l.sample_count = in.u32();
    }
    check_tree(tree);
    trees.push_back(std::move(tree));
  }
  return Forest::from_parts(std::move(trees), offset_scale, rotation_scale, max_depth,
                            static_cast<Objective>(objective), hash);
}

std::vector<std::uint8_t> write_container(std::span<const Section> sections) {
  ByteWriter out;
  for (char c : kModelMagic) out.u8(static_cast<std::uint8_t>(c));
  out.u8(kModelVersion);
  out.u8(static_cast<std::uint8_t>(sections.size()));
  for (const auto& s : sections) {
    out.u8(static_cast<std::uint8_t>(s.tag));
    out.u64(s.payload.size());
    out.raw(s.payload);
  }
  return out.take();
}

std::vector<Section> read_container(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  for (char c : kModelMagic)
    if (in.u8() != static_cast<std::uint8_t>(c)) throw Error(ErrorKind::CorruptModel, "bad magic");
  if (in.u8() != kModelVersion) throw Error(ErrorKind::CorruptModel, "unsupported format version");
  const int count = in.u8();
  std::vector<Section> sections;
  for (int i = 0; i < count; ++i) {
    const std::uint8_t tag = in.u8();
    if (tag > static_cast<std::uint8_t>(SectionTag::Tracker))
      throw Error(ErrorKind::CorruptModel, "unknown section tag");
    const std::uint64_t length = in.u64();
    if (length > in.remaining()) throw Error(ErrorKind::CorruptModel, "section length exceeds file");
    const auto payload = in.raw(static_cast<std::size_t>(length));
    sections.push_back({static_cast<SectionTag>(tag), {payload.begin(), payload.end()}});
  }
  if (!in.done()) throw Error(ErrorKind::CorruptModel, "trailing bytes after last section");
  return sections;
}

const Section& find_section(const std::vector<Section>& sections, SectionTag tag) {
  for (const auto& s : sections)
    if (s.tag == tag) return s;
  throw Error(ErrorKind::CorruptModel, "model lacks the requested section");
}

std::vector<std::uint8_t> serialize(const Forest& forest) {
  ByteWriter body;
  write_forest(body, forest);
  const Section section{SectionTag::Forest, body.take()};
  return write_container(std::span<const Section>(&section, 1));
}

Forest deserialize(std::span<const std::uint8_t> bytes) {
  const auto sections = read_container(bytes);
  const Section& s = find_section(sections, SectionTag::Forest);
  ByteReader in(s.payload);
  Forest forest = read_forest(in);
  if (!in.done()) throw Error(ErrorKind::CorruptModel, "trailing bytes in forest section");
  return forest;
}

std::size_t node_bytes(const Forest& forest) { return forest.node_count() * kNodeRecordBytes; }
std::size_t leaf_bytes(const Forest& forest) { return forest.leaf_count() * kLeafRecordBytes; }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace pf
