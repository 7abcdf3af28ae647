// Command-line front end: synthetic data, training, detection, tracking,
// the combined pipeline, evaluation reports and the benchmark.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "poseforest/detector.hpp"
#include "poseforest/io.hpp"
#include "poseforest/model_io.hpp"
#include "poseforest/parallel.hpp"
#include "poseforest/pipeline.hpp"
#include "poseforest/synth.hpp"
#include "poseforest/tracker.hpp"

namespace fs = std::filesystem;
using namespace pf;

namespace {

struct Common {
  std::uint64_t seed = 1;
  int threads = threads_from_env(1);
};

TriangleMesh load_mesh(const std::string& spec) {
  if (fs::exists(spec)) return read_obj(spec);
  return shapes::by_name(spec);
}

struct Models {
  std::optional<DetectorModel> detector;
  std::optional<TrackerModel> tracker;
  std::vector<Section> sections;
};

Models load_models(const std::vector<std::string>& paths) {
  Models m;
  for (const auto& p : paths)
    for (auto& s : read_container(read_file(p))) {
      if (s.tag == SectionTag::Detector && !m.detector) m.detector = deserialize_detector(s.payload);
      if (s.tag == SectionTag::Tracker && !m.tracker) m.tracker = deserialize_tracker(s.payload);
      m.sections.push_back(std::move(s));
    }
  return m;
}

const DetectorModel& need(const std::optional<DetectorModel>& d) {
  if (!d) throw Error(ErrorKind::InvalidArgument, "no detector section in the --model files");
  return *d;
}
const TrackerModel& need(const std::optional<TrackerModel>& t) {
  if (!t) throw Error(ErrorKind::InvalidArgument, "no tracker section in the --model files");
  return *t;
}

std::vector<DepthFrame> load_frames(const SequenceManifest& m) {
  std::vector<DepthFrame> frames;
  frames.reserve(m.frames.size());
  for (const auto& p : m.frames) frames.push_back(read_pgm(p));
  return frames;
}

void emit(const Report& report, const std::string& out) {
  std::cout << report.text();
  if (!out.empty()) write_text(out, report.text());
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::string script = "lifecycle";
  std::string mesh = "blob";
  int frames = 100;
  bool clean = false;
};

void run_synth(const SynthArgs& a, const Common& c) {
  const TriangleMesh mesh = load_mesh(a.mesh);
  const CameraIntrinsics k;
  const TrainingRange range;
  NoiseParams noise;
  if (a.clean) noise = NoiseParams::none();
  if (a.frames < 1) throw Error(ErrorKind::TooFewFrames, "--frames must be at least 1");

  const fs::path dir = a.out;
  SequenceManifest manifest;
  manifest.intrinsics = k;
  manifest.mesh = dir / "mesh.obj";
  write_obj(manifest.mesh, mesh);
  std::map<int, std::vector<std::optional<Pose>>> truth;
  auto frame_path = [&](int f) {
    char name[32];
    std::snprintf(name, sizeof name, "frames/%04d.pgm", f);
    return dir / name;
  };

  if (a.script == "scenes") {
    SceneSpec spec;
    spec.noise = noise;
    truth[0].resize(std::size_t(a.frames)), truth[1].resize(std::size_t(a.frames));
    for (int f = 0; f < a.frames; ++f) {
      const SyntheticScene s = make_scene(mesh, range, spec, k, mix_seed(c.seed, std::uint64_t(f)));
      write_pgm(frame_path(f), s.depth);
      manifest.frames.push_back(frame_path(f));
      for (std::size_t i = 0; i < s.truths.size(); ++i) truth[int(i)][std::size_t(f)] = s.truths[i];
    }
  } else {
    SequenceScript script;
    if (a.script == "lifecycle") {
      script = lifecycle_script(range, k, c.seed);
    } else if (a.script == "two") {
      script = two_instance_script(range, k, c.seed);
    } else if (a.script == "static") {
      script = lifecycle_script(range, k, c.seed);
      auto& s = script.instances.front();
      s = InstanceScript{0, -1, -1, -1, 0.0, scripted_pose(s, 50), Delta::Zero()};
    } else {
      throw CLI::ValidationError("--script", "unknown script '" + a.script + "'");
    }
    script.frames = a.frames;
    script.noise = noise;
    const auto frames = render_sequence(mesh, script, k, c.seed);
    for (std::size_t i = 0; i < script.instances.size(); ++i) truth[int(i)].resize(frames.size());
    for (std::size_t f = 0; f < frames.size(); ++f) {
      write_pgm(frame_path(int(f)), frames[f].depth);
      manifest.frames.push_back(frame_path(int(f)));
      // Ground truth covers every frame the instance is in the scene, hidden or not.
      for (std::size_t i = 0; i < script.instances.size(); ++i) {
        const auto& s = script.instances[i];
        if (int(f) >= s.appear && (s.disappear < 0 || int(f) < s.disappear))
          truth[int(i)][f] = scripted_pose(s, int(f));
      }
    }
  }
  for (const auto& [id, track] : truth) {
    const fs::path p = dir / ("truth_" + std::to_string(id) + ".txt");
    write_pose_track(p, track);
    manifest.truths[id] = p;
  }
  write_manifest(dir / "manifest.txt", manifest);
  std::cout << "wrote " << manifest.frames.size() << " frames to " << (dir / "manifest.txt").string() << "\n";
}

// ---- training -------------------------------------------------------------

struct DetectorArgs {
  std::string mesh = "blob";
  std::string out;
  DetectorTrainingConfig config;
};

void run_train_detector(DetectorArgs a, const Common& c) {
  const TriangleMesh mesh = load_mesh(a.mesh);
  a.config.forest.threads = c.threads;
  const DetectorModel model = train_detector(mesh, a.config, CameraIntrinsics{}, c.seed);
  const std::vector<Section> sections{{SectionTag::Detector, serialize_detector(model)}};
  const auto bytes = write_container(sections);
  write_file(a.out, bytes);
  std::cout << "detector: " << model.forest.node_count() << " nodes, " << bytes.size() << " bytes\n";
}

struct TrackerArgs {
  std::string mesh = "blob";
  std::string out;
  int subdivisions = 1;
  double distance = 0.7;
  TrackerTrainingConfig config;
};

std::vector<Pose> tracker_views(int subdivisions, double distance) {
  ViewSphereSpec spec;
  spec.radius_min = spec.radius_max = distance;
  spec.subdivisions = subdivisions;
  return sample_view_sphere(spec);
}

void run_train_tracker(TrackerArgs a, const Common& c) {
  const TriangleMesh mesh = load_mesh(a.mesh);
  a.config.forest.threads = c.threads;
  const auto views = tracker_views(a.subdivisions, a.distance);
  const TrackerModel model = train_tracker(mesh, views, a.config, CameraIntrinsics{}, c.seed);
  const std::vector<Section> sections{{SectionTag::Tracker, serialize_tracker(model)}};
  const auto bytes = write_container(sections);
  write_file(a.out, bytes);
  std::cout << "tracker: " << model.views.size() << " views, " << model.node_count() << " nodes, " << bytes.size()
            << " bytes\n";
}

// ---- inference ------------------------------------------------------------

struct DetectArgs {
  std::vector<std::string> models;
  std::string frame;
  std::string out;
  bool verify = true;
  double threshold = 0.5;
  int stride = 4;
};

std::vector<DetectionCandidate> detect_verified(const DepthFrame& frame, const Models& m, const DetectConfig& dc,
                                                bool verify) {
  const DetectorModel& det = need(m.detector);
  auto cands = detect(frame, det, det.intrinsics, dc);
  if (!verify || !m.tracker) return cands;
  const PipelineConfig pc;
  return verify_detections(frame, std::move(cands), *m.tracker, pc.refine_steps, pc.accept_score,
                           pc.min_separation * det.diameter);
}

void run_detect(const DetectArgs& a, const Common& c) {
  const Models m = load_models(a.models);
  DetectConfig dc;
  dc.threshold = a.threshold, dc.stride = a.stride, dc.threads = c.threads;
  const auto cands = detect_verified(read_pgm(a.frame), m, dc, a.verify);
  std::string text;
  for (const auto& cand : cands) {
    char score[32];
    std::snprintf(score, sizeof score, "%.6f", cand.score);
    text += std::string(score) + " " + format_pose(cand.pose) + "\n";
  }
  std::cout << text;
  if (!a.out.empty()) write_text(a.out, text);
}

struct TrackArgs {
  std::vector<std::string> models;
  std::string manifest;
  std::string init;
  int init_truth = 0;
  std::string out;
  bool timing = false;
};

void run_track(const TrackArgs& a, const Common&) {
  const Models m = load_models(a.models);
  const TrackerModel& tracker = need(m.tracker);
  const SequenceManifest manifest = read_manifest(a.manifest);
  Pose pose;
  if (!a.init.empty()) {
    pose = parse_pose(read_text(a.init));
  } else {
    const auto truths = manifest.load_truths();
    const auto it = truths.find(a.init_truth);
    if (it == truths.end() || it->second.empty() || !it->second.front())
      throw Error(ErrorKind::InvalidArgument, "no initial pose: pass --init or a truth id present in frame 0");
    pose = *it->second.front();
  }
  std::vector<InstanceReport> log;
  for (std::size_t f = 0; f < manifest.frames.size(); ++f) {
    const DepthFrame frame = read_pgm(manifest.frames[f]);
    const auto start = std::chrono::steady_clock::now();
    const TrackStepResult r = track_step(frame, pose, tracker);
    const auto us = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start);
    pose = r.pose;
    log.push_back({int(f), 0, InstanceState::Tracking, pose, r.score, a.timing ? us.count() : 0});
  }
  std::ostringstream ss;
  write_log(ss, log);
  std::cout << ss.str();
  if (!a.out.empty()) write_text(a.out, ss.str());
}

struct RunArgs {
  std::vector<std::string> models;
  std::string manifest;
  std::string out;
  PipelineConfig config;
};

void run_pipeline(RunArgs a, const Common& c) {
  const Models m = load_models(a.models);
  const SequenceManifest manifest = read_manifest(a.manifest);
  a.config.threads = c.threads;
  a.config.detect.threads = c.threads;
  const auto frames = load_frames(manifest);
  const auto log = run_sequence(frames, {need(m.detector), need(m.tracker)}, a.config);
  std::ostringstream ss;
  write_log(ss, log);
  if (a.out.empty())
    std::cout << ss.str();
  else
    write_text(a.out, ss.str());
  std::map<int, int> ids;
  for (const auto& r : log) ++ids[r.id];
  std::cerr << log.size() << " records, " << ids.size() << " instance ids\n";
}

// ---- evaluation -----------------------------------------------------------

struct EvalDetectArgs {
  std::vector<std::string> models;
  std::string manifest;
  std::string detections;
  std::string out;
  double factor = 0.1;
};

std::vector<std::vector<Pose>> read_detections(const fs::path& path, std::size_t frames) {
  std::vector<std::vector<Pose>> out(frames);
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    long f = -1;
    ls >> f;
    if (f < 0 || std::size_t(f) >= frames) throw Error(ErrorKind::InvalidArgument, "detection frame out of range: " + line);
    std::string rest;
    std::getline(ls, rest);
    out[std::size_t(f)].push_back(parse_pose(rest));
  }
  return out;
}

void run_eval_detect(const EvalDetectArgs& a, const Common& c) {
  const SequenceManifest manifest = read_manifest(a.manifest);
  if (manifest.mesh.empty()) throw Error(ErrorKind::InvalidArgument, "manifest names no mesh");
  const TriangleMesh mesh = read_obj(manifest.mesh);
  const auto truths = manifest.truths_per_frame();
  std::vector<std::vector<Pose>> dets;
  if (!a.detections.empty()) {
    dets = read_detections(a.detections, manifest.frames.size());
  } else {
    if (a.models.empty()) throw CLI::RequiredError("--model or --detections");
    const Models m = load_models(a.models);
    DetectConfig dc;
    dc.threads = c.threads;
    for (const auto& p : manifest.frames) {
      std::vector<Pose> poses;
      for (const auto& cand : detect_verified(read_pgm(p), m, dc, true)) poses.push_back(cand.pose);
      dets.push_back(std::move(poses));
    }
  }
  const DetectionSetMetrics metrics = evaluate_detections(dets, truths, mesh, a.factor);
  std::size_t n_truth = 0;
  for (const auto& t : truths) n_truth += t.size();
  Report r;
  r.add("frames", std::int64_t(manifest.frames.size()));
  r.add("truths", std::int64_t(n_truth));
  r.add("add_threshold_m", a.factor * mesh.diameter(), 4);
  r.add("true_positives", std::int64_t(metrics.true_positives));
  r.add("false_positives", std::int64_t(metrics.false_positives));
  r.add("false_negatives", std::int64_t(metrics.false_negatives));
  r.add("precision", metrics.precision);
  r.add("recall", metrics.recall);
  r.add("f1", metrics.f1);
  emit(r, a.out);
}

struct EvalTrackArgs {
  std::string manifest;
  std::string log;
  std::string out;
};

void run_eval_track(const EvalTrackArgs& a, const Common&) {
  const SequenceManifest manifest = read_manifest(a.manifest);
  const auto truths = manifest.truths_per_frame();
  const auto log = read_log(a.log);
  double sum[6] = {0, 0, 0, 0, 0, 0};
  std::int64_t matched = 0, unmatched = 0;
  std::map<int, std::vector<Pose>> per_id;
  for (const auto& rec : log) {
    if (rec.state == InstanceState::Lost) continue;
    if (rec.frame < 0 || std::size_t(rec.frame) >= truths.size() || truths[std::size_t(rec.frame)].empty()) {
      ++unmatched;
      continue;
    }
    // Nearest ground-truth instance in that frame.
    const auto& cands = truths[std::size_t(rec.frame)];
    const Pose* best = &cands.front();
    for (const auto& t : cands)
      if ((t.translation() - rec.pose.translation()).norm() < (best->translation() - rec.pose.translation()).norm())
        best = &t;
    const PoseError e = pose_error(rec.pose, *best);
    const double v[6] = {e.t_x, e.t_y, e.t_z, e.roll, e.pitch, e.yaw};
    for (int i = 0; i < 6; ++i) sum[i] += v[i];
    ++matched;
    per_id[rec.id].push_back(rec.pose);
  }
  Report r;
  r.add("records", matched);
  r.add("unmatched_records", unmatched);
  const char* names[6] = {"error_tx_mm", "error_ty_mm", "error_tz_mm", "error_roll_deg", "error_pitch_deg",
                          "error_yaw_deg"};
  for (int i = 0; i < 6; ++i) r.add(names[i], matched ? sum[i] / double(matched) : 0.0, 2);
  r.add("error_definition", std::string("mean absolute per-axis error; rotation as fixed-axis x-y-z angles"));
  for (const auto& [id, poses] : per_id) {
    if (poses.size() < 2) continue;
    const JitterReport j = jitter(poses);
    r.add("jitter_id" + std::to_string(id) + "_translation_mm", j.translation_mm, 3);
    r.add("jitter_id" + std::to_string(id) + "_rotation_deg", j.rotation_deg, 3);
  }
  emit(r, a.out);
}

// ---- bench ----------------------------------------------------------------

struct BenchArgs {
  std::vector<std::string> models;
  std::string mesh = "blob";
  int frames = 50;
  std::string out;
};

struct Timing {
  double mean = 0, median = 0, p99 = 0;
};

Timing summarize(std::vector<double> ms) {
  Timing t;
  if (ms.empty()) return t;
  std::sort(ms.begin(), ms.end());
  for (double v : ms) t.mean += v;
  t.mean /= double(ms.size());
  t.median = ms[ms.size() / 2];
  t.p99 = ms[std::min(ms.size() - 1, std::size_t(double(ms.size()) * 0.99))];
  return t;
}

void run_bench(const BenchArgs& a, const Common& c) {
  using clock = std::chrono::steady_clock;
  const Models m = load_models(a.models);
  const TriangleMesh mesh = load_mesh(a.mesh);
  const CameraIntrinsics k = m.tracker ? m.tracker->intrinsics : need(m.detector).intrinsics;
  const TrainingRange range = m.detector ? m.detector->range : TrainingRange{};
  SceneSpec spec;
  spec.instances_max = 1;
  std::vector<double> track_ms, detect_ms;
  const int warmup = 3;
  for (int i = 0; i < a.frames + warmup; ++i) {
    const SyntheticScene s = make_scene(mesh, range, spec, k, mix_seed(c.seed, std::uint64_t(i)));
    if (m.tracker) {
      Rng rng(mix_seed(c.seed, 500 + std::uint64_t(i)));
      Delta d;
      for (int j = 0; j < 3; ++j) d[j] = uniform(rng, -0.02, 0.02);
      for (int j = 3; j < 6; ++j) d[j] = uniform(rng, -0.003, 0.003);
      const Pose prior = apply_delta(s.truths.front(), d);
      const auto t0 = clock::now();
      track_step(s.depth, prior, *m.tracker);
      if (i >= warmup) track_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
    }
    if (m.detector) {
      DetectConfig dc;
      dc.threads = c.threads;
      const auto t0 = clock::now();
      detect(s.depth, *m.detector, k, dc);
      if (i >= warmup) detect_ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
    }
  }
  Report r;
  r.add("threads", std::int64_t(c.threads));
  r.add("frame_size", std::to_string(k.width) + "x" + std::to_string(k.height));
  r.add("frames", std::int64_t(a.frames));
  r.add("seed", std::to_string(c.seed));
  if (m.tracker) {
    const Timing t = summarize(track_ms);
    r.add("track_step_mean_ms", t.mean), r.add("track_step_median_ms", t.median), r.add("track_step_p99_ms", t.p99);
    r.add("track_step_budget_ms", 10.0, 1);
    r.add("reference_track_step_ms", std::string("1.4-2.2"));
    r.add("tracker_config_hash", std::to_string(m.tracker->views.front().forest.config_hash()));
  }
  if (m.detector) {
    const Timing t = summarize(detect_ms);
    r.add("detect_mean_ms", t.mean), r.add("detect_median_ms", t.median), r.add("detect_p99_ms", t.p99);
    r.add("detect_budget_ms", 5000.0, 1);
    r.add("reference_detect_ms", 872.1, 1);
    r.add("detector_config_hash", std::to_string(m.detector->forest.config_hash()));
  }
  double total = 0;
  for (const auto& s : m.sections) {
    const double mb = double(s.payload.size()) / (1024.0 * 1024.0);
    r.add(s.tag == SectionTag::Detector ? "detector_mb" : s.tag == SectionTag::Tracker ? "tracker_mb" : "forest_mb", mb);
  }
  total = double(write_container(m.sections).size()) / (1024.0 * 1024.0);
  r.add("container_mb", total);
  r.add("container_budget_mb", 64.0, 1);
  r.add("reference_model_mb", 40.5, 1);
  r.add("container_within_budget", std::string(total <= 64.0 ? "yes" : "no"));
  emit(r, a.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-based 6D object detection and tracking with random forests"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--seed", common.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", common.threads, "Worker threads (default: PF_THREADS or 1)")
      ->check(CLI::PositiveNumber);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Render a scripted synthetic sequence with ground truth");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--frames", synth.frames, "Frame count")->capture_default_str();
  s->add_option("--script", synth.script, "lifecycle, two, static or scenes")
      ->check(CLI::IsMember({"lifecycle", "two", "static", "scenes"}))
      ->capture_default_str();
  s->add_option("--mesh", synth.mesh, "OBJ file or built-in shape name")->capture_default_str();
  s->add_flag("--clean", synth.clean, "No sensor noise");

  DetectorArgs detector;
  auto* td = app.add_subcommand("train-detector", "Train the sliding-window detector");
  td->add_option("--mesh", detector.mesh, "OBJ file or built-in shape name")->capture_default_str();
  td->add_option("--out", detector.out, "Model file")->required();
  td->add_option("--trees", detector.config.forest.n_trees)->check(CLI::PositiveNumber)->capture_default_str();
  td->add_option("--depth", detector.config.forest.max_depth)->check(CLI::PositiveNumber)->capture_default_str();
  td->add_option("--candidates", detector.config.forest.n_candidate_features)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  td->add_option("--min-leaf", detector.config.forest.min_samples_leaf)->check(CLI::PositiveNumber)->capture_default_str();
  td->add_option("--views", detector.config.views, "Training renders")->check(CLI::PositiveNumber)->capture_default_str();
  td->add_option("--positives-per-view", detector.config.sampling.max_positives_per_view, "0 keeps all")
      ->capture_default_str();
  td->add_option("--background-frames", detector.config.background_frames)->capture_default_str();

  TrackerArgs tracker;
  auto* tt = app.add_subcommand("train-tracker", "Train the temporal tracker");
  tt->add_option("--mesh", tracker.mesh, "OBJ file or built-in shape name")->capture_default_str();
  tt->add_option("--out", tracker.out, "Model file")->required();
  tt->add_option("--trees", tracker.config.forest.n_trees)->check(CLI::PositiveNumber)->capture_default_str();
  tt->add_option("--depth", tracker.config.forest.max_depth)->check(CLI::PositiveNumber)->capture_default_str();
  tt->add_option("--candidates", tracker.config.forest.n_candidate_features)
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  tt->add_option("--min-leaf", tracker.config.forest.min_samples_leaf)->check(CLI::PositiveNumber)->capture_default_str();
  tt->add_option("--subdivisions", tracker.subdivisions, "View sphere level (1: 42 views)")
      ->check(CLI::Range(0, 4))
      ->capture_default_str();
  tt->add_option("--distance", tracker.distance, "View distance, meters")->check(CLI::PositiveNumber)->capture_default_str();
  tt->add_option("--perturbations", tracker.config.perturbations_per_view, "Training samples per view")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  DetectArgs det;
  auto* dt = app.add_subcommand("detect", "Detect instances in one depth frame");
  dt->add_option("--model", det.models, "Model files (repeatable)")->required();
  dt->add_option("--frame", det.frame, "Depth PGM")->required()->check(CLI::ExistingFile);
  dt->add_option("--out", det.out, "Write candidates here too");
  dt->add_option("--threshold", det.threshold)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  dt->add_option("--stride", det.stride)->check(CLI::PositiveNumber)->capture_default_str();
  dt->add_flag("!--no-verify", det.verify, "Skip tracker refinement of the candidates");

  TrackArgs track;
  auto* tr = app.add_subcommand("track", "Track one instance through a sequence");
  tr->add_option("--model", track.models, "Model files (repeatable)")->required();
  tr->add_option("--manifest", track.manifest)->required()->check(CLI::ExistingFile);
  tr->add_option("--init", track.init, "Pose file with the initial pose")->check(CLI::ExistingFile);
  tr->add_option("--init-truth", track.init_truth, "Start from this truth track's first pose")->capture_default_str();
  tr->add_option("--out", track.out, "Log file");
  tr->add_flag("--timing", track.timing, "Record step times in the log");

  RunArgs run;
  auto* rn = app.add_subcommand("run", "Run the detection and tracking pipeline over a sequence");
  rn->add_option("--model", run.models, "Model files (repeatable)")->required();
  rn->add_option("--manifest", run.manifest)->required()->check(CLI::ExistingFile);
  rn->add_option("--out", run.out, "Log file (default: stdout)");
  rn->add_option("--detect-every", run.config.detect_every)->check(CLI::PositiveNumber)->capture_default_str();
  rn->add_option("--loss-score", run.config.loss_score)->check(CLI::Range(0.0, 1.0))->capture_default_str();
  rn->add_option("--loss-patience", run.config.loss_patience)->check(CLI::PositiveNumber)->capture_default_str();
  rn->add_option("--max-instances", run.config.max_instances)->check(CLI::PositiveNumber)->capture_default_str();
  rn->add_flag("--timing", run.config.timing, "Record step times in the log");

  EvalDetectArgs ed;
  auto* ev = app.add_subcommand("eval-detect", "Precision, recall and f1 of detections");
  ev->add_option("--manifest", ed.manifest)->required()->check(CLI::ExistingFile);
  ev->add_option("--model", ed.models, "Model files; detections are computed");
  ev->add_option("--detections", ed.detections, "Lines 'frame r00 .. tz' instead of a model")->check(CLI::ExistingFile);
  ev->add_option("--factor", ed.factor, "ADD threshold as a share of the diameter")->capture_default_str();
  ev->add_option("--out", ed.out, "Report file");

  EvalTrackArgs et;
  auto* etc = app.add_subcommand("eval-track", "Per-axis tracking errors of a log");
  etc->add_option("--manifest", et.manifest)->required()->check(CLI::ExistingFile);
  etc->add_option("--log", et.log)->required()->check(CLI::ExistingFile);
  etc->add_option("--out", et.out, "Report file");

  BenchArgs bench;
  auto* bn = app.add_subcommand("bench", "Latency and model size report");
  bn->add_option("--model", bench.models, "Model files (repeatable)")->required();
  bn->add_option("--mesh", bench.mesh, "OBJ file or built-in shape name")->capture_default_str();
  bn->add_option("--frames", bench.frames)->check(CLI::Range(1, 100000))->capture_default_str();
  bn->add_option("--out", bench.out, "Report file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  try {
    if (*s) run_synth(synth, common);
    if (*td) run_train_detector(detector, common);
    if (*tt) run_train_tracker(tracker, common);
    if (*dt) run_detect(det, common);
    if (*tr) run_track(track, common);
    if (*rn) run_pipeline(run, common);
    if (*ev) run_eval_detect(ed, common);
    if (*etc) run_eval_track(et, common);
    if (*bn) run_bench(bench, common);
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
