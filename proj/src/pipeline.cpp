#include "poseforest/pipeline.hpp"

#include <algorithm>
#include <chrono>

#include "poseforest/parallel.hpp"

namespace pf {

const char* to_string(InstanceState state) {
  switch (state) {
    case InstanceState::Detected: return "Detected";
    case InstanceState::Tracking: return "Tracking";
    case InstanceState::Lost: return "Lost";
  }
  return "Unknown";
}

void PipelineConfig::validate() const {
  if (detect_every < 1 || loss_patience < 1 || max_instances < 1)
    throw Error(ErrorKind::InvalidArgument, "pipeline counts must be positive");
  if (!(loss_score > 0.0 && loss_score < 1.0)) throw Error(ErrorKind::InvalidArgument, "loss_score must be in (0, 1)");
  if (!(min_separation > 0.0)) throw Error(ErrorKind::InvalidArgument, "min_separation must be positive");
}

namespace {

struct Step {
  Pose pose;
  double score = 0.0;
  std::int64_t us = 0;
};

Step refine(const DepthFrame& frame, const Pose& prior, const TrackerModel& tracker, bool timing) {
  const auto start = std::chrono::steady_clock::now();
  Step s{prior, 0.0, 0};
  try {
    const TrackStepResult r = track_step(frame, prior, tracker);
    s.pose = r.pose;
    s.score = r.score;
  } catch (const Error& e) {
    // Too little of the object in view: no evidence, pose held.
    if (e.kind() != ErrorKind::DegenerateView) throw;
  }
  if (timing)
    s.us = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - start).count();
  return s;
}

}  // namespace

std::vector<DetectionCandidate> verify_detections(const DepthFrame& frame, std::vector<DetectionCandidate> candidates,
                                                  const TrackerModel& tracker, int refine_steps,
                                                  double accept_score, double min_separation) {
  for (auto& c : candidates) {
    double best = -1.0;
    Pose best_pose = c.pose;
    const std::vector<Pose> starts = c.hypotheses.empty() ? std::vector<Pose>{c.pose} : c.hypotheses;
    for (const Pose& start : starts) {
      Step s{start, 0.0, 0};
      for (int i = 0; i < std::max(1, refine_steps); ++i) s = refine(frame, s.pose, tracker, false);
      if (s.score > best) best = s.score, best_pose = s.pose;
    }
    c.pose = best_pose;
    c.score = std::clamp(best, 0.0, 1.0);
  }
  std::erase_if(candidates, [&](const DetectionCandidate& c) { return c.score < accept_score; });
  return nms(std::move(candidates), min_separation, -1);
}

namespace {

InstanceReport report(int frame, const TrackedInstance& inst, std::int64_t us) {
  return {frame, inst.id, inst.state, inst.pose, inst.score, us};
}

}  // namespace

std::vector<InstanceReport> advance(const DepthFrame& frame, PipelineState& state, const PipelineModels& models,
                                    const PipelineConfig& config) {
  config.validate();
  const CameraIntrinsics& k = models.tracker.intrinsics;
  if (!(k == models.detector.intrinsics)) throw Error(ErrorKind::ModelMismatch, "detector and tracker intrinsics differ");
  if (frame.width() != k.width || frame.height() != k.height)
    throw Error(ErrorKind::ModelMismatch, "frame size differs from the model intrinsics");
  const int f = state.frame++;
  const double separation = config.min_separation * models.tracker.diameter;

  // Tracking phase, one step per live instance.
  auto& live = state.instances;
  std::vector<Step> steps(live.size());
  parallel_for(live.size(), config.threads,
               [&](std::size_t i) { steps[i] = refine(frame, live[i].pose, models.tracker, config.timing); });
  for (std::size_t i = 0; i < live.size(); ++i) {
    TrackedInstance& inst = live[i];
    if (inst.state == InstanceState::Detected) inst.state = InstanceState::Tracking, inst.frames_in_state = 0;
    // A low-score step is not trusted to move the pose.
    if (steps[i].score >= config.loss_score) inst.pose = steps[i].pose;
    inst.score = steps[i].score;
    ++inst.frames_in_state;
    inst.low_score_frames = inst.score < config.loss_score ? inst.low_score_frames + 1 : 0;
    if (inst.low_score_frames >= config.loss_patience) inst.state = InstanceState::Lost, inst.frames_in_state = 0;
  }
  // Two tracks converging on one object: the older one stays.
  for (std::size_t i = 0; i < live.size(); ++i)
    for (std::size_t j = i + 1; j < live.size(); ++j)
      if (live[i].state != InstanceState::Lost && live[j].state != InstanceState::Lost &&
          (live[i].pose.translation() - live[j].pose.translation()).norm() < separation)
        live[j].state = InstanceState::Lost, live[j].frames_in_state = 0;

  std::vector<InstanceReport> out;
  for (std::size_t i = 0; i < live.size(); ++i) out.push_back(report(f, live[i], steps[i].us));
  std::erase_if(live, [](const TrackedInstance& inst) { return inst.state == InstanceState::Lost; });

  // Detection phase on the cadence while capacity remains.
  if (static_cast<int>(live.size()) < config.max_instances && f % config.detect_every == 0) {
    const auto candidates = verify_detections(frame, detect(frame, models.detector, k, config.detect), models.tracker,
                                              config.refine_steps, config.accept_score, separation);
    auto clear_of_live = [&](const Pose& p) {
      return std::none_of(live.begin(), live.end(), [&](const TrackedInstance& inst) {
        return (inst.pose.translation() - p.translation()).norm() < separation;
      });
    };
    for (const auto& c : candidates) {
      if (static_cast<int>(live.size()) >= config.max_instances) break;
      if (!clear_of_live(c.pose)) continue;
      TrackedInstance inst;
      inst.id = state.next_id++;
      inst.state = InstanceState::Detected;
      inst.pose = c.pose;
      inst.score = c.score;
      live.push_back(inst);
      out.push_back(report(f, inst, 0));
    }
  }
  return out;
}

std::vector<InstanceReport> run_sequence(std::span<const DepthFrame> frames, const PipelineModels& models,
                                         const PipelineConfig& config) {
  if (frames.empty()) throw Error(ErrorKind::TooFewFrames, "empty sequence");
  PipelineState state;
  std::vector<InstanceReport> log;
  for (const DepthFrame& frame : frames) {
    auto reports = advance(frame, state, models, config);
    log.insert(log.end(), reports.begin(), reports.end());
  }
  return log;
}

}  // namespace pf
