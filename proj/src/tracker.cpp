#include "poseforest/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <tuple>

#include "poseforest/model_io.hpp"
#include "poseforest/parallel.hpp"
#include "poseforest/random.hpp"

namespace pf {

SamplePointSet sample_surface_points(const TriangleMesh& mesh, int count, std::uint64_t seed) {
  if (count <= 0) throw Error(ErrorKind::InvalidArgument, "sample point count must be positive");
  const auto& v = mesh.vertices();
  const auto& tris = mesh.triangles();

  std::vector<double> cumulative(tris.size());
  std::vector<Eigen::Vector3d> face_normals(tris.size());
  double total = 0.0;
  for (std::size_t i = 0; i < tris.size(); ++i) {
    const Eigen::Vector3d n = (v[tris[i][1]] - v[tris[i][0]]).cross(v[tris[i][2]] - v[tris[i][0]]);
    total += 0.5 * n.norm();
    cumulative[i] = total;
    face_normals[i] = n.norm() > 0 ? Eigen::Vector3d(n.normalized()) : Eigen::Vector3d::UnitZ();
  }
  if (total <= 0.0) throw Error(ErrorKind::InvalidMesh, "mesh has zero surface area");

  Rng rng(mix_seed(seed, 0x5a3b));
  const std::size_t n_candidates = static_cast<std::size_t>(count) * 20;
  std::vector<Eigen::Vector3d> cand(n_candidates), cand_n(n_candidates);
  for (std::size_t c = 0; c < n_candidates; ++c) {
    const double pick = uniform01(rng) * total;
    std::size_t t = std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin();
    t = std::min(t, tris.size() - 1);
    while (t > 0 && cumulative[t] == cumulative[t - 1]) --t;  // skip degenerate faces
    const double r1 = std::sqrt(uniform01(rng)), r2 = uniform01(rng);
    cand[c] = (1 - r1) * v[tris[t][0]] + r1 * (1 - r2) * v[tris[t][1]] + r1 * r2 * v[tris[t][2]];
    cand_n[c] = face_normals[t];
  }

  SamplePointSet out;
  std::vector<double> nearest(n_candidates, std::numeric_limits<double>::infinity());
  std::size_t next = 0;
  for (int i = 0; i < count; ++i) {
    out.points.push_back(cand[next]);
    out.normals.push_back(cand_n[next]);
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t c = 0; c < n_candidates; ++c) {
      nearest[c] = std::min(nearest[c], (cand[c] - cand[next]).squaredNorm());
      if (nearest[c] > best_d) best_d = nearest[c], best = c;
    }
    next = best;
  }
  return out;
}

namespace {

// Bilinear depth at a sub-pixel position when the four neighbours are valid
// and lie within `jump` of each other; nearest pixel otherwise. Returns 0 for
// no return and -1 outside the frame.
double sample_depth(const DepthFrame& frame, double x, double y, double jump) {
  const int xn = static_cast<int>(std::lround(x)), yn = static_cast<int>(std::lround(y));
  if (!frame.contains(xn, yn)) return -1.0;
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  if (x0 >= 0 && y0 >= 0 && x0 + 1 < frame.width() && y0 + 1 < frame.height()) {
    const float a = frame(x0, y0), b = frame(x0 + 1, y0), c = frame(x0, y0 + 1), d = frame(x0 + 1, y0 + 1);
    const float lo = std::min({a, b, c, d}), hi = std::max({a, b, c, d});
    if (lo > 0.0f && hi - lo < jump) {
      const double fx = x - x0, fy = y - y0;
      return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
    }
  }
  return frame(xn, yn);
}

}  // namespace

ResidualFeatures compute_residuals(const DepthFrame& frame, const Pose& pose, const SamplePointSet& samples,
                                   const CameraIntrinsics& k, const TrackerConfig& config) {
  ResidualFeatures f;
  f.values.assign(samples.size(), std::numeric_limits<float>::quiet_NaN());
  const Eigen::Matrix3d r = pose.rotation_matrix();
  const Eigen::Vector3d t = pose.translation();
  const double clip = config.residual_clip;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Eigen::Vector3d p = r * samples.points[i] + t;
    if (p.z() <= 0.0 || (r * samples.normals[i]).dot(p) >= 0.0) continue;
    ++f.front_facing;
    const double d = sample_depth(frame, k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy, config.score_tau);
    if (d <= 0.0) continue;
    const double residual = d - p.z();
    if (residual < -config.occlusion_margin) continue;
    ++f.valid;
    if (std::abs(residual) < config.score_tau) ++f.inliers;
    f.values[i] = static_cast<float>(std::clamp(residual, -clip, clip));
  }
  return f;
}

double ResidualFeatures::cost(double tau) const {
  if (front_facing == 0) return tau * tau;
  double sum = double(front_facing - valid) * tau * tau;
  for (float v : values)
    if (!std::isnan(v)) sum += std::min(double(v) * v, tau * tau);
  return sum / double(front_facing);
}

double normalize_residuals(ResidualFeatures& f, double floor) {
  std::vector<double> mags;
  mags.reserve(f.values.size());
  for (float v : f.values)
    if (!std::isnan(v)) mags.push_back(std::abs(double(v)));
  double scale = floor;
  if (!mags.empty()) {
    const auto mid = mags.begin() + std::ptrdiff_t(mags.size() / 2);
    std::nth_element(mags.begin(), mid, mags.end());
    scale = std::max(floor, 1.4826 * *mid);
  }
  for (float& v : f.values) v = static_cast<float>(v / scale);
  return scale;
}

Pose apply_delta(const Pose& pose, const Delta& delta) {
  const Eigen::Quaterniond dq = exp_rotation<double>(delta.head<3>());
  return Pose(dq * pose.rotation(), pose.translation() + delta.tail<3>());
}

namespace {

void check_ranges(const PerturbationRanges& r) {
  if (!(r.translation > 0.0) || !(r.rotation > 0.0))
    throw Error(ErrorKind::InvalidRange, "perturbation ranges must be positive");
}

Delta random_perturbation(Rng& rng, const PerturbationRanges& r) {
  const double sr = uniform01(rng), st = uniform01(rng);
  Delta d;
  for (int i = 0; i < 3; ++i) d[i] = sr * uniform(rng, -r.rotation, r.rotation);
  for (int i = 3; i < 6; ++i) d[i] = st * uniform(rng, -r.translation, r.translation);
  return d;
}

// Wall behind the object, tilted up to 30 degrees off the optical axis.
DepthFrame random_wall(Rng& rng, const Pose& pose, double radius, const CameraIntrinsics& k) {
  const double tilt = uniform(rng, 0.0, deg2rad(30.0));
  const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const Eigen::Vector3d n(std::sin(tilt) * std::cos(phi), std::sin(tilt) * std::sin(phi), std::cos(tilt));
  const Eigen::Vector3d behind = pose.translation() + Eigen::Vector3d(0, 0, radius + uniform(rng, 0.0, 0.3));
  return render_plane(n, n.dot(behind), k);
}

}  // namespace

Eigen::Vector3d viewing_direction(const Pose& pose) {
  const Eigen::Vector3d t = pose.translation();
  const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), t);
  // Camera direction in the object frame as seen along the line of sight.
  return -(q.conjugate() * pose.rotation()).conjugate().toRotationMatrix().col(2);
}

Eigen::Matrix3d canonical_frame(const Pose& pose, const Eigen::Quaterniond& view_rotation) {
  const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), pose.translation());
  const Eigen::Matrix3d m = ((q.conjugate() * pose.rotation()) * view_rotation.conjugate()).toRotationMatrix();
  const double gamma = std::atan2(m(1, 0), m(0, 0));
  return q.toRotationMatrix() * Eigen::AngleAxisd(gamma, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

std::size_t TrackerModel::nearest_view(const Pose& pose) const {
  const Eigen::Vector3d d = viewing_direction(pose);
  std::size_t best = 0;
  double best_dot = -2.0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    const double dot = d.dot(views[v].direction);
    if (dot > best_dot) best_dot = dot, best = v;
  }
  return best;
}

namespace {

Delta rotate_delta(const Eigen::Matrix3d& r, const Delta& d) {
  Delta out;
  out.head<3>() = r * d.head<3>();
  out.tail<3>() = r * d.tail<3>();
  return out;
}

// Object placed off-axis and rolled about its line of sight so that a view
// sees the object the way a tracked instance will.
Pose placed_view(Rng& rng, const Eigen::Quaterniond& view_rotation, double distance, double tilt,
                 const CameraIntrinsics& k) {
  const Eigen::Vector2d px(k.cx + uniform(rng, -0.3, 0.3) * k.width, k.cy + uniform(rng, -0.3, 0.3) * k.height);
  const Eigen::Vector3d ray = backproject(px, 1.0, k).normalized();
  const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Eigen::Vector3d::UnitZ(), ray);
  const Eigen::Quaterniond roll(Eigen::AngleAxisd(uniform(rng, -std::numbers::pi, std::numbers::pi),
                                                  Eigen::Vector3d::UnitZ()));
  const double phi = uniform(rng, -std::numbers::pi, std::numbers::pi);
  const Eigen::Quaterniond lean(Eigen::AngleAxisd(tilt * std::sqrt(uniform01(rng)),
                                                  Eigen::Vector3d(std::cos(phi), std::sin(phi), 0.0)));
  return Pose(q * roll * lean * view_rotation, ray * distance);
}

ForestConfig view_forest_config(const TrackerTrainingConfig& config, std::size_t n_points, double diameter) {
  ForestConfig fc = config.forest;
  fc.objective = Objective::Regression;
  fc.domain = FeatureDomain{};
  fc.domain.component_count = static_cast<int>(n_points);
  fc.domain.component_difference = config.pair_features;
  fc.rotation_scale = diameter;
  fc.threads = 1;
  return fc;
}

}  // namespace

TrackerModel train_tracker(const TriangleMesh& mesh, std::span<const Pose> view_poses,
                           const TrackerTrainingConfig& config, const CameraIntrinsics& k, std::uint64_t seed) {
  check_ranges(config.ranges);
  if (view_poses.empty()) throw Error(ErrorKind::EmptyTrainingSet, "no training views");
  if (config.renders_per_view < 1 || config.perturbations_per_view < 1)
    throw Error(ErrorKind::InvalidArgument, "renders and perturbations per view must be positive");
  k.validate();

  TrackerModel model;
  model.intrinsics = k;
  model.config = config.tracker;
  model.ranges = config.ranges;
  model.diameter = mesh.diameter();
  model.samples = sample_surface_points(mesh, config.sample_points, seed);
  const std::size_t n_points = model.samples.size();
  const ForestConfig fc = view_forest_config(config, n_points, mesh.diameter());

  model.views.resize(view_poses.size());
  parallel_for(view_poses.size(), config.forest.threads, [&](std::size_t v) {
    Rng rng(mix_seed(seed, 1000 + v));
    const Eigen::Quaterniond view_rotation = view_poses[v].rotation();
    const double distance = view_poses[v].translation().norm();
    std::vector<float> features;
    std::vector<Delta> labels;
    for (int r = 0; r < config.renders_per_view; ++r) {
      const double z = distance * uniform(rng, 1.0 - config.distance_jitter, 1.0 + config.distance_jitter);
      const Pose truth = placed_view(rng, view_rotation, z, config.view_jitter, k);
      DepthFrame frame;
      if (uniform01(rng) < config.background_fraction) {
        const DepthFrame wall = random_wall(rng, truth, mesh.radius(), k);
        const SceneObject obj{&mesh, truth};
        frame = composite_scene(std::span<const SceneObject>(&obj, 1), wall, config.noise, rng(), k).depth;
      } else {
        frame = render_depth(mesh, truth, k).depth;
      }
      const int count = config.perturbations_per_view / config.renders_per_view +
                        (r < config.perturbations_per_view % config.renders_per_view ? 1 : 0);
      for (int j = 0; j < count; ++j) {
        const Delta delta = random_perturbation(rng, config.ranges);
        const Pose hypothesis = apply_delta(truth, delta);
        ResidualFeatures f = compute_residuals(frame, hypothesis, model.samples, k, config.tracker);
        if (f.valid < config.tracker.min_valid) continue;
        const double rho = normalize_residuals(f, config.tracker.residual_floor);
        const Eigen::Matrix3d c = canonical_frame(hypothesis, view_rotation);
        features.insert(features.end(), f.values.begin(), f.values.end());
        labels.push_back(rotate_delta(c.transpose(), -delta) / rho);
      }
    }
    if (labels.size() < 2) throw Error(ErrorKind::EmptyTrainingSet, "a view produced no usable perturbation");

    std::vector<std::uint8_t> flags(labels.size(), 1);
    TrainingData data;
    data.labels = labels;
    data.is_foreground = flags;
    data.evaluate = [&](const SplitFeature& f, std::span<const std::uint32_t> ids, std::span<float> out) {
      const std::size_t j = f.second_index();
      if (f.kind == FeatureKind::ComponentDifference) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const float* row = &features[std::size_t(ids[i]) * n_points];
          out[i] = row[f.index] - row[j];
        }
      } else {
        for (std::size_t i = 0; i < ids.size(); ++i) out[i] = features[std::size_t(ids[i]) * n_points + f.index];
      }
    };
    TrackerView& view = model.views[v];
    view.rotation = view_rotation;
    view.direction = viewing_direction(Pose(view_rotation, Eigen::Vector3d(0, 0, distance)));
    view.forest = train_forest(data, fc, mix_seed(seed, 2000 + v));
  });
  return model;
}

TrackStepResult track_step(const DepthFrame& frame, const Pose& prior, const TrackerModel& model) {
  return track_step(frame, prior, model, model.config);
}

TrackStepResult track_step(const DepthFrame& frame, const Pose& prior, const TrackerModel& model,
                           const TrackerConfig& config) {
  if (model.views.empty()) throw Error(ErrorKind::InvalidArgument, "tracker model is empty");
  TrackStepResult result;
  Pose pose = prior;
  ResidualFeatures f = compute_residuals(frame, pose, model.samples, model.intrinsics, config);
  if (f.valid < config.min_valid) throw Error(ErrorKind::DegenerateView, "too few sample points see valid depth");
  const double prior_cost = f.cost(config.selection_tau);
  const double prior_score = f.score();
  for (int it = 0; it < config.max_iters && f.valid >= config.min_valid; ++it) {
    const double rho = normalize_residuals(f, config.residual_floor);
    const TrackerView& view = model.views[model.nearest_view(pose)];
    const Delta local = view.forest.predict(f, &result.feature_evaluations).vote * rho;
    const Delta step = rotate_delta(canonical_frame(pose, view.rotation), local);
    pose = apply_delta(pose, step);
    ++result.iterations;
    f = compute_residuals(frame, pose, model.samples, model.intrinsics, config);
    if (step.tail<3>().norm() < config.stop_translation && step.head<3>().norm() < config.stop_rotation) break;
  }
  result.pose = pose;
  result.score = f.score();
  const bool keep_prior = f.valid < config.min_valid ||
                          (config.selection_tau > 0.0 &&
                           !(f.cost(config.selection_tau) < (1.0 - config.selection_margin) * prior_cost));
  if (keep_prior) result.pose = prior, result.score = prior_score;
  return result;
}

double track_score(const DepthFrame& frame, const Pose& pose, const TrackerModel& model) {
  return compute_residuals(frame, pose, model.samples, model.intrinsics, model.config).score();
}

JitterReport jitter(std::span<const Pose> poses) {
  if (poses.size() < 2) throw Error(ErrorKind::TooFewFrames, "jitter needs at least two poses");
  const std::size_t n = poses.size() - 1;
  std::vector<double> dt(n), dr(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [angle, distance] = pose_distance(poses[i + 1], poses[i]);
    dt[i] = distance * 1000.0;
    dr[i] = rad2deg(angle);
  }
  auto mean_std = [](const std::vector<double>& x) {
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / double(x.size());
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return std::pair{m, std::sqrt(s / double(x.size()))};
  };
  JitterReport r;
  std::tie(r.mean_translation_mm, r.translation_mm) = mean_std(dt);
  std::tie(r.mean_rotation_deg, r.rotation_deg) = mean_std(dr);
  return r;
}

std::vector<std::uint8_t> serialize_tracker(const TrackerModel& m) {
  ByteWriter out;
  const auto& k = m.intrinsics;
  out.f64(k.fx), out.f64(k.fy), out.f64(k.cx), out.f64(k.cy);
  out.i32(k.width), out.i32(k.height);
  const auto& c = m.config;
  out.i32(c.max_iters);
  out.f64(c.stop_translation), out.f64(c.stop_rotation), out.f64(c.score_tau);
  out.i32(c.min_valid);
  out.f64(c.residual_clip), out.f64(c.residual_floor), out.f64(c.occlusion_margin);
  out.f64(c.selection_tau), out.f64(c.selection_margin);
  out.f64(m.ranges.translation), out.f64(m.ranges.rotation);
  out.f64(m.diameter);
  out.u32(static_cast<std::uint32_t>(m.samples.size()));
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    for (int a = 0; a < 3; ++a) out.f64(m.samples.points[i][a]);
    for (int a = 0; a < 3; ++a) out.f64(m.samples.normals[i][a]);
  }
  out.u32(static_cast<std::uint32_t>(m.views.size()));
  for (const auto& v : m.views) {
    out.f64(v.rotation.w()), out.f64(v.rotation.x()), out.f64(v.rotation.y()), out.f64(v.rotation.z());
    write_forest(out, v.forest);
  }
  return out.take();
}

TrackerModel deserialize_tracker(std::span<const std::uint8_t> payload) {
  ByteReader in(payload);
  TrackerModel m;
  auto& k = m.intrinsics;
  k.fx = in.f64(), k.fy = in.f64(), k.cx = in.f64(), k.cy = in.f64();
  k.width = in.i32(), k.height = in.i32();
  auto& c = m.config;
  c.max_iters = in.i32();
  c.stop_translation = in.f64(), c.stop_rotation = in.f64(), c.score_tau = in.f64();
  c.min_valid = in.i32();
  c.residual_clip = in.f64(), c.residual_floor = in.f64(), c.occlusion_margin = in.f64();
  c.selection_tau = in.f64(), c.selection_margin = in.f64();
  m.ranges.translation = in.f64(), m.ranges.rotation = in.f64();
  m.diameter = in.f64();
  const std::uint32_t n = in.u32();
  if (in.remaining() < std::size_t(n) * 48) throw Error(ErrorKind::CorruptModel, "truncated sample points");
  m.samples.points.resize(n);
  m.samples.normals.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) m.samples.points[i][a] = in.f64();
    for (int a = 0; a < 3; ++a) m.samples.normals[i][a] = in.f64();
  }
  const std::uint32_t n_views = in.u32();
  if (n_views == 0) throw Error(ErrorKind::CorruptModel, "tracker has no views");
  for (std::uint32_t v = 0; v < n_views; ++v) {
    TrackerView view;
    const double w = in.f64(), x = in.f64(), y = in.f64(), z = in.f64();
    view.rotation = Eigen::Quaterniond(w, x, y, z);
    if (!(std::abs(view.rotation.norm() - 1.0) < 1e-6)) throw Error(ErrorKind::CorruptModel, "bad view rotation");
    view.direction = viewing_direction(Pose(view.rotation, Eigen::Vector3d(0, 0, 1)));
    view.forest = read_forest(in);
    for (const auto& tree : view.forest.trees())
      for (const auto& node : tree.nodes) {
        if (node.is_leaf()) continue;
        const bool pair = node.kind == static_cast<std::uint8_t>(FeatureKind::ComponentDifference);
        if (node.index >= n || (pair && node.feature().second_index() >= n) ||
            (!pair && node.kind != static_cast<std::uint8_t>(FeatureKind::Component)))
          throw Error(ErrorKind::CorruptModel, "tracker split refers to an unknown feature");
      }
    m.views.push_back(std::move(view));
  }
  if (!in.done()) throw Error(ErrorKind::CorruptModel, "trailing bytes in tracker section");
  return m;
}

}  // namespace pf
