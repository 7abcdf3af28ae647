#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "poseforest/detector.hpp"
#include "poseforest/tracker.hpp"

namespace pf {

enum class InstanceState : std::uint8_t { Detected, Tracking, Lost };

const char* to_string(InstanceState state);

struct TrackedInstance {
  int id = 0;
  InstanceState state = InstanceState::Detected;
  Pose pose;
  double score = 0.0;
  int frames_in_state = 0;
  int low_score_frames = 0;  // consecutive frames below loss_score
};

struct PipelineConfig {
  int detect_every = 10;
  double loss_score = 0.3;
  int loss_patience = 3;
  int max_instances = 4;
  /// Tracker steps run on each detection hypothesis; a refined detection
  /// becomes an instance only at accept_score.
  int refine_steps = 2;
  double accept_score = 0.6;
  /// Minimum distance between live instances and new detections, times the
  /// mesh diameter.
  double min_separation = 0.5;
  DetectConfig detect;
  /// Measure track_step wall time for the log; off keeps logs reproducible.
  bool timing = false;
  int threads = 1;

  /// Throws InvalidArgument unless the counts are positive and loss_score is in (0, 1).
  void validate() const;
};

struct PipelineModels {
  const DetectorModel& detector;
  const TrackerModel& tracker;
};

struct PipelineState {
  int frame = 0;  // index of the next frame
  int next_id = 0;
  std::vector<TrackedInstance> instances;
};

/// One log record: an instance as it stands after a frame.
struct InstanceReport {
  int frame = 0;
  int id = 0;
  InstanceState state = InstanceState::Tracking;
  Pose pose;
  double score = 0.0;
  std::int64_t step_us = 0;
};

/// Runs `refine_steps` tracker steps from every hypothesis of each
/// candidate and keeps the best-scoring result. Results under accept_score
/// or within `min_separation` meters of a better one are dropped; the rest
/// come back sorted by tracker score, which replaces the detector score.
std::vector<DetectionCandidate> verify_detections(const DepthFrame& frame, std::vector<DetectionCandidate> candidates,
                                                  const TrackerModel& tracker, int refine_steps,
                                                  double accept_score, double min_separation);

/// Tracks every live instance, retires those below loss_score for
/// loss_patience frames, and on the detection cadence promotes new
/// detections away from live instances. Lost instances are reported once and
/// removed. Throws ModelMismatch.
std::vector<InstanceReport> advance(const DepthFrame& frame, PipelineState& state, const PipelineModels& models,
                                    const PipelineConfig& config);

/// Folds advance over the frames. Throws TooFewFrames on an empty sequence.
std::vector<InstanceReport> run_sequence(std::span<const DepthFrame> frames, const PipelineModels& models,
                                         const PipelineConfig& config);

}  // namespace pf
