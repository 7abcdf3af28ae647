#include "poseforest/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "poseforest/model_io.hpp"
#include "poseforest/parallel.hpp"
#include "poseforest/random.hpp"

namespace pf {

namespace {

struct Fnv {
  std::uint64_t h = 1469598103934665603ull;
  template <typename T>
  void add(const T& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T); ++i) h = (h ^ p[i]) * 1099511628211ull;
  }
};

std::uint64_t metadata_hash_for(const CameraIntrinsics& k, double window_size, double offset_scale) {
  Fnv f;
  f.add(k.fx), f.add(k.fy), f.add(k.cx), f.add(k.cy), f.add(k.width), f.add(k.height);
  f.add(window_size), f.add(offset_scale);
  return f.h;
}

Eigen::Vector2d pixel_of(const Eigen::Vector2i& p) { return p.cast<double>(); }

// Stride grid pixels of a frame passing `keep`, row-major.
template <typename Keep>
std::vector<Eigen::Vector2i> grid_pixels(const DepthFrame& frame, int stride, Keep&& keep) {
  std::vector<Eigen::Vector2i> out;
  for (int y = 0; y < frame.height(); y += stride)
    for (int x = 0; x < frame.width(); x += stride)
      if (frame.valid(x, y) && keep(x, y)) out.emplace_back(x, y);
  return out;
}

// Random subset of at most n entries, original order kept.
void subsample(std::vector<Eigen::Vector2i>& pixels, int n, Rng& rng) {
  if (n <= 0 || pixels.size() <= std::size_t(n)) return;
  std::vector<std::size_t> idx(pixels.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < std::size_t(n); ++i) std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
  idx.resize(std::size_t(n));
  std::sort(idx.begin(), idx.end());
  std::vector<Eigen::Vector2i> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(pixels[i]);
  pixels = std::move(out);
}

double offset_scale_for(double window_size, const CameraIntrinsics& k) {
  return 0.5 * window_size * 0.5 * (k.fx + k.fy) / 127.0;
}

bool covers(const TrainingRange& model, const TrainingRange& want) {
  constexpr double eps = 1e-9;
  const double axis_gap = std::acos(std::clamp(model.axis.normalized().dot(want.axis.normalized()), -1.0, 1.0));
  return want.radius_min >= model.radius_min - eps && want.radius_max <= model.radius_max + eps &&
         want.inplane_range <= model.inplane_range + eps && want.tilt_max + axis_gap <= model.tilt_max + eps;
}

}  // namespace

Delta window_label(const Pose& pose, const Eigen::Vector2d& pixel, double d0, const Eigen::Quaterniond& reference,
                   const CameraIntrinsics& k) {
  const Eigen::Quaterniond ray = ray_rotation(pixel, k);
  Delta d;
  d.head<3>() = log_rotation<double>(ray.conjugate() * pose.rotation() * reference.conjugate());
  d.tail<3>() = ray.conjugate() * (pose.translation() - backproject(pixel, d0, k));
  return d;
}

Pose decode_window_label(const Delta& label, const Eigen::Vector2d& pixel, double d0,
                         const Eigen::Quaterniond& reference, const CameraIntrinsics& k) {
  const Eigen::Quaterniond ray = ray_rotation(pixel, k);
  const Eigen::Vector3d omega = label.head<3>();
  const Eigen::Vector3d tau = label.tail<3>();
  return Pose((ray * exp_rotation<double>(omega) * reference).normalized(), ray * tau + backproject(pixel, d0, k));
}

std::size_t DetectorTrainingSet::positives() const {
  return static_cast<std::size_t>(std::count(is_foreground.begin(), is_foreground.end(), std::uint8_t(1)));
}

WindowContext DetectorTrainingSet::context(std::size_t i) const {
  const DetectorSample& s = samples[i];
  return {frames[s.frame], s.pixel, double(s.d0), window_size, offset_scale};
}

TrainingData DetectorTrainingSet::data() const {
  return {labels, is_foreground,
          [this](const SplitFeature& f, std::span<const std::uint32_t> ids, std::span<float> out) {
            for (std::size_t i = 0; i < ids.size(); ++i) out[i] = context(ids[i]).evaluate(f);
          }};
}

DetectorTrainingSet build_detector_training_set(const TriangleMesh& mesh, std::span<const ViewSample> views,
                                                std::span<const DepthFrame> negatives, double window_size,
                                                const Eigen::Quaterniond& reference,
                                                const DetectorSampling& sampling, const CameraIntrinsics& k,
                                                std::uint64_t seed) {
  if (views.empty()) throw Error(ErrorKind::EmptyTrainingSet, "no training views");
  if (!(window_size >= mesh.diameter()))
    throw Error(ErrorKind::InvalidArgument, "window must be at least the mesh diameter");
  if (sampling.stride < 1) throw Error(ErrorKind::InvalidArgument, "stride must be >= 1");
  Rng rng(mix_seed(seed, 0xde7));
  DetectorTrainingSet set;
  set.window_size = window_size;
  set.offset_scale = static_cast<float>(offset_scale_for(window_size, k));  // as stored in the model
  auto add = [&](std::uint32_t frame, const Eigen::Vector2i& px, const Delta& label, bool fg) {
    set.samples.push_back({frame, px, (*set.frames[frame])(px.x(), px.y())});
    set.labels.push_back(label);
    set.is_foreground.push_back(fg ? 1 : 0);
  };

  for (const ViewSample& view : views) {
    const auto frame = static_cast<std::uint32_t>(set.frames.size());
    set.frames.push_back(&view.depth);
    auto on = grid_pixels(view.depth, sampling.stride, [&](int x, int y) { return view.mask(y, x); });
    subsample(on, sampling.max_positives_per_view, rng);
    for (const auto& px : on) {
      const double d0 = view.depth(px.x(), px.y());
      add(frame, px, window_label(view.pose, pixel_of(px), d0, reference, k), true);
    }
    // Off-object windows within one window side of the object centre.
    if (view.pose.translation().z() <= 0.0) continue;
    const Eigen::Vector2d c = project(view.pose.translation(), k);
    const double reach = window_size * k.fx / view.pose.translation().z();
    auto off = grid_pixels(view.depth, sampling.stride, [&](int x, int y) {
      return !view.mask(y, x) && std::abs(x - c.x()) < reach && std::abs(y - c.y()) < reach;
    });
    subsample(off, sampling.negatives_per_view, rng);
    for (const auto& px : off) add(frame, px, Delta::Zero(), false);
  }
  for (const DepthFrame& neg : negatives) {
    const auto frame = static_cast<std::uint32_t>(set.frames.size());
    set.frames.push_back(&neg);
    auto px = grid_pixels(neg, sampling.stride, [](int, int) { return true; });
    subsample(px, sampling.negatives_per_frame, rng);
    for (const auto& p : px) add(frame, p, Delta::Zero(), false);
  }
  if (set.positives() == 0) throw Error(ErrorKind::EmptyTrainingSet, "no foreground windows");
  return set;
}

std::uint64_t DetectorModel::metadata_hash() const {
  return metadata_hash_for(intrinsics, window_size, forest.offset_scale());
}

std::vector<ViewSample> render_detector_views(const TriangleMesh& mesh, const DetectorTrainingConfig& config,
                                              const CameraIntrinsics& k, std::uint64_t seed) {
  std::vector<ViewSample> views(static_cast<std::size_t>(std::max(0, config.views)));
  parallel_for(views.size(), config.forest.threads, [&](std::size_t i) {
    const SyntheticScene scene = make_scene(mesh, config.range, config.scene, k, mix_seed(seed, i));
    ViewSample v;
    v.pose = scene.truths.front();
    v.depth = scene.depth;
    // Visible object pixels: where the object render agrees with the composite.
    const ViewSample alone = render_depth(mesh, v.pose, k);
    v.mask = Mask::Constant(k.height, k.width, false);
    for (int y = 0; y < k.height; ++y)
      for (int x = 0; x < k.width; ++x)
        v.mask(y, x) = alone.mask(y, x) && v.depth.valid(x, y) && std::abs(v.depth(x, y) - alone.depth(x, y)) < 0.01;
    views[i] = std::move(v);
  });
  return views;
}

DetectorModel train_detector(const TriangleMesh& mesh, const DetectorTrainingConfig& config,
                             const CameraIntrinsics& k, std::uint64_t seed) {
  k.validate();
  const std::vector<ViewSample> views = render_detector_views(mesh, config, k, mix_seed(seed, 1));
  std::vector<DepthFrame> negatives;
  for (int i = 0; i < config.background_frames; ++i)
    negatives.push_back(make_clutter_frame(config.scene, k, mix_seed(seed, 1000 + i)));

  DetectorModel model;
  model.intrinsics = k;
  model.range = config.range;
  model.window_size = config.window_size > 0 ? config.window_size : mesh.diameter();
  model.diameter = mesh.diameter();
  model.radius = mesh.radius();
  model.reference = look_at_origin(config.range.axis.normalized()).rotation();
  const DetectorTrainingSet set = build_detector_training_set(mesh, views, negatives, model.window_size,
                                                              model.reference, config.sampling, k,
                                                              mix_seed(seed, 2));
  ForestConfig fc = config.forest;
  fc.offset_scale = set.offset_scale;
  fc.rotation_scale = mesh.diameter();
  model.forest = train_forest(set.data(), fc, mix_seed(seed, 3));
  return model;
}

namespace {

struct Vote {
  Pose pose;
  double weight;
  WindowContext window;
};

struct Scanned {
  Eigen::Vector3d point;
  double probability;
};

double quaternion_angle(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  return 2.0 * std::acos(std::min(1.0, std::abs(a.dot(b))));
}

}  // namespace

std::vector<DetectionCandidate> detect(const DepthFrame& frame, const DetectorModel& model,
                                       const CameraIntrinsics& k, const DetectConfig& config) {
  if (metadata_hash_for(k, model.window_size, model.forest.offset_scale()) != model.metadata_hash())
    throw Error(ErrorKind::ModelMismatch, "intrinsics or window settings differ from training");
  if (config.range && !covers(model.range, *config.range))
    throw Error(ErrorKind::ModelMismatch, "requested range lies outside the trained range");
  if (frame.width() != k.width || frame.height() != k.height)
    throw Error(ErrorKind::ModelMismatch, "frame size differs from the intrinsics");
  if (model.forest.empty()) throw Error(ErrorKind::InvalidArgument, "detector has no trees");
  const int stride = std::max(1, config.stride);
  const double near = model.range.radius_min - model.diameter, far = model.range.radius_max + model.diameter;

  // Scan row bands independently, then merge in row order.
  const int rows = (frame.height() + stride - 1) / stride;
  std::vector<std::vector<Vote>> row_votes(static_cast<std::size_t>(rows));
  std::vector<std::vector<Scanned>> row_scans(static_cast<std::size_t>(rows));
  parallel_for(std::size_t(rows), config.threads, [&](std::size_t r) {
    const int y = static_cast<int>(r) * stride;
    for (int x = 0; x < frame.width(); x += stride) {
      if (!frame.valid(x, y)) continue;
      const double d0 = frame(x, y);
      if (d0 < near || d0 > far) continue;
      const WindowContext w{&frame, {x, y}, d0, model.window_size, model.forest.offset_scale()};
      const LeafEstimate e = model.forest.predict(w);
      const Eigen::Vector2d px(x, y);
      row_scans[r].push_back({backproject(px, d0, k), e.foreground_probability});
      if (e.foreground_probability >= config.threshold && e.has_vote)
        row_votes[r].push_back({decode_window_label(e.vote, px, d0, model.reference, k), e.foreground_probability, w});
    }
  });
  std::vector<Vote> votes;
  std::vector<Scanned> scans;
  for (int r = 0; r < rows; ++r) {
    votes.insert(votes.end(), row_votes[r].begin(), row_votes[r].end());
    scans.insert(scans.end(), row_scans[r].begin(), row_scans[r].end());
  }
  std::stable_sort(votes.begin(), votes.end(), [](const Vote& a, const Vote& b) { return a.weight > b.weight; });

  const double cluster_radius = config.cluster_radius * model.diameter;
  std::vector<bool> used(votes.size(), false);
  std::vector<DetectionCandidate> candidates;
  for (std::size_t seed = 0; seed < votes.size(); ++seed) {
    if (used[seed]) continue;
    Eigen::Vector3d center = votes[seed].pose.translation();
    std::vector<std::size_t> members;
    for (int it = 0; it < 3; ++it) {
      members.clear();
      Eigen::Vector3d sum = Eigen::Vector3d::Zero();
      double wsum = 0.0;
      for (std::size_t i = 0; i < votes.size(); ++i) {
        if (used[i] || (votes[i].pose.translation() - center).norm() >= cluster_radius) continue;
        members.push_back(i);
        sum += votes[i].weight * votes[i].pose.translation();
        wsum += votes[i].weight;
      }
      if (wsum > 0.0) center = sum / wsum;
    }
    if (members.empty()) members.push_back(seed);
    for (auto i : members) used[i] = true;
    used[seed] = true;
    if (static_cast<int>(members.size()) < config.min_votes) continue;

    // Rotation modes: repeatedly the member with the most weight nearby, then
    // the mean around it; members near a taken mode are removed.
    std::vector<std::pair<Eigen::Quaterniond, Eigen::Vector3d>> modes;
    std::vector<std::size_t> rest = members;
    double first_support = 0.0;
    while (!rest.empty() && static_cast<int>(modes.size()) < std::max(1, config.hypotheses)) {
      std::size_t best = rest.front();
      double best_support = -1.0;
      for (auto i : rest) {
        double support = 0.0;
        for (auto j : rest)
          if (quaternion_angle(votes[i].pose.rotation(), votes[j].pose.rotation()) < config.rotation_radius)
            support += votes[j].weight;
        if (support > best_support) best_support = support, best = i;
      }
      if (modes.empty()) first_support = best_support;
      else if (best_support < config.hypothesis_support * first_support) break;
      const Eigen::Quaterniond anchor = votes[best].pose.rotation();
      Eigen::Vector4d qsum = Eigen::Vector4d::Zero();
      Eigen::Vector3d tsum = Eigen::Vector3d::Zero();
      double wsum = 0.0;
      std::vector<std::size_t> left;
      for (auto j : rest) {
        const Eigen::Quaterniond& q = votes[j].pose.rotation();
        if (quaternion_angle(anchor, q) >= config.rotation_radius) {
          left.push_back(j);
          continue;
        }
        const double s = anchor.dot(q) < 0.0 ? -1.0 : 1.0;
        qsum += s * votes[j].weight * q.coeffs();
        tsum += votes[j].weight * votes[j].pose.translation();
        wsum += votes[j].weight;
      }
      Eigen::Quaterniond q;
      q.coeffs() = qsum.normalized();
      modes.emplace_back(q, tsum / wsum);
      rest = std::move(left);
    }

    // Score: mean foreground probability of the windows on the candidate.
    double psum = 0.0;
    int n = 0;
    const Eigen::Vector3d t = modes.front().second;
    for (const auto& s : scans)
      if ((s.point - t).norm() < model.radius) psum += s.probability, ++n;
    const double score = n ? psum / n : 0.0;
    if (score < config.threshold) continue;
    DetectionCandidate c;
    c.pose = Pose(modes.front().first, t);
    for (const auto& [q, tm] : modes) c.hypotheses.emplace_back(q, tm);
    c.score = std::clamp(score, 0.0, 1.0);
    c.window = votes[members.front()].window;
    c.votes = static_cast<int>(members.size());
    candidates.push_back(c);
  }
  return nms(std::move(candidates), config.min_separation * model.diameter, config.max_per_frame);
}

std::vector<DetectionCandidate> nms(std::vector<DetectionCandidate> candidates, double min_separation,
                                    int max_per_frame) {
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const DetectionCandidate& a, const DetectionCandidate& b) { return a.score > b.score; });
  std::vector<DetectionCandidate> kept;
  for (auto& c : candidates) {
    if (max_per_frame >= 0 && static_cast<int>(kept.size()) >= max_per_frame) break;
    const bool near = std::any_of(kept.begin(), kept.end(), [&](const DetectionCandidate& k) {
      return (k.pose.translation() - c.pose.translation()).norm() < min_separation;
    });
    if (near) continue;
    c.instance_id = static_cast<int>(kept.size());
    kept.push_back(std::move(c));
  }
  return kept;
}

DetectionSetMetrics DetectionSetMetrics::from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  DetectionSetMetrics m;
  m.true_positives = tp, m.false_positives = fp, m.false_negatives = fn;
  m.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
  m.recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

DetectionSetMetrics evaluate_detections(std::span<const std::vector<Pose>> detections,
                                        std::span<const std::vector<Pose>> truths, const TriangleMesh& mesh,
                                        double add_threshold_factor) {
  if (detections.size() != truths.size())
    throw Error(ErrorKind::InvalidArgument, "detections and truths cover different frame counts");
  const double limit = add_threshold_factor * mesh.diameter();
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t f = 0; f < detections.size(); ++f) {
    struct Pair {
      double add;
      std::size_t d, t;
    };
    std::vector<Pair> pairs;
    for (std::size_t d = 0; d < detections[f].size(); ++d)
      for (std::size_t t = 0; t < truths[f].size(); ++t)
        pairs.push_back({add_distance(detections[f][d], truths[f][t], mesh), d, t});
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      return a.add != b.add ? a.add < b.add : (a.t != b.t ? a.t < b.t : a.d < b.d);
    });
    std::vector<bool> det_used(detections[f].size(), false), truth_used(truths[f].size(), false);
    std::size_t matched = 0;
    for (const Pair& p : pairs) {
      if (p.add >= limit) break;
      if (det_used[p.d] || truth_used[p.t]) continue;
      det_used[p.d] = truth_used[p.t] = true;
      ++matched;
    }
    tp += matched;
    fp += detections[f].size() - matched;
    fn += truths[f].size() - matched;
  }
  return DetectionSetMetrics::from_counts(tp, fp, fn);
}

std::vector<std::uint8_t> serialize_detector(const DetectorModel& m) {
  ByteWriter out;
  const auto& k = m.intrinsics;
  out.f64(k.fx), out.f64(k.fy), out.f64(k.cx), out.f64(k.cy);
  out.i32(k.width), out.i32(k.height);
  const auto& r = m.range;
  out.f64(r.radius_min), out.f64(r.radius_max), out.f64(r.tilt_max), out.f64(r.inplane_range);
  for (int a = 0; a < 3; ++a) out.f64(r.axis[a]);
  out.f64(m.window_size), out.f64(m.diameter), out.f64(m.radius);
  out.f64(m.reference.w()), out.f64(m.reference.x()), out.f64(m.reference.y()), out.f64(m.reference.z());
  out.u64(m.metadata_hash());
  write_forest(out, m.forest);
  return out.take();
}

DetectorModel deserialize_detector(std::span<const std::uint8_t> payload) {
  ByteReader in(payload);
  DetectorModel m;
  auto& k = m.intrinsics;
  k.fx = in.f64(), k.fy = in.f64(), k.cx = in.f64(), k.cy = in.f64();
  k.width = in.i32(), k.height = in.i32();
  auto& r = m.range;
  r.radius_min = in.f64(), r.radius_max = in.f64(), r.tilt_max = in.f64(), r.inplane_range = in.f64();
  for (int a = 0; a < 3; ++a) r.axis[a] = in.f64();
  m.window_size = in.f64(), m.diameter = in.f64(), m.radius = in.f64();
  const double w = in.f64(), x = in.f64(), y = in.f64(), z = in.f64();
  m.reference = Eigen::Quaterniond(w, x, y, z);
  const std::uint64_t hash = in.u64();
  m.forest = read_forest(in);
  if (!in.done()) throw Error(ErrorKind::CorruptModel, "trailing bytes after detector");
  if (hash != m.metadata_hash()) throw Error(ErrorKind::CorruptModel, "detector metadata hash mismatch");
  for (const auto& tree : m.forest.trees())
    for (const auto& node : tree.nodes)
      if (!node.is_leaf() && node.kind != static_cast<std::uint8_t>(FeatureKind::PairDifference) &&
          node.kind != static_cast<std::uint8_t>(FeatureKind::CenterDifference))
        throw Error(ErrorKind::CorruptModel, "detector node uses a non-window feature");
  return m;
}

}  // namespace pf
