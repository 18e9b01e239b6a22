#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "lfd/bilateral.hpp"
#include "lfd/dataset.hpp"
#include "lfd/sim.hpp"

namespace lfd::demo {

enum class Phase { approach, insert, sweep, lift, withdraw };
std::string to_string(Phase p);

struct Waypoint {
  sim::Pose2D pose;
  std::size_t dwell = 1;  // ticks spent pulling toward this pose
  Phase phase = Phase::approach;
};

struct ScoopPlan {
  std::vector<Waypoint> waypoints;
  std::size_t total_ticks() const;
  const Waypoint& at_phase(Phase p) const;
};

/// Scripted scoop for a scene; throws ValidationError if the bowl is out of
/// reach.
ScoopPlan plan_scoop(const sim::SceneConfig& scene);
/// Offsets every waypoint's x and y by seeded Gaussian noise.
ScoopPlan jitter_plan(ScoopPlan plan, double sigma, std::uint64_t seed);

/// Target pose the operator pulls toward at tick t, or nothing once done.
using PoseScript = std::function<std::optional<sim::Pose2D>(std::uint64_t tick)>;
PoseScript script_from_plan(const ScoopPlan& plan);

struct RecordOptions {
  std::size_t frame_period = 2;
  std::uint64_t seed = 0;
  std::string id;
  std::string source = "scripted";
  bilateral::Gains gains;
  bilateral::HandGains hand;
  double dt = 0.05;
};

store::Frame capture_frame(const sim::SimState& state, const sim::SceneConfig& scene);

/// Runs the bilateral loop until the script ends, sampling a frame every
/// `frame_period` ticks starting at tick 0.
store::DemoSequence record_demo(const sim::SceneConfig& scene, const PoseScript& script, const RecordOptions& opts);
/// Scripted demonstration: plan, jitter (sigma 0.5 cm, seeded), record.
store::DemoSequence record_scripted_demo(const sim::SceneConfig& scene, const RecordOptions& opts,
                                         double jitter_sigma = 0.005);

/// The four bowl color / fill combinations at one position.
std::vector<sim::SceneConfig> scene_combos(double bowl_x);

struct GridSpec {
  std::size_t positions = 25;
  std::size_t poses = 15;
  std::size_t rotations = 3;
  double x_min = 0.20;
  double x_max = 0.62;
  void validate() const;
  std::size_t image_count() const { return positions * poses * rotations; }
};

struct GridSample {
  sim::SceneConfig scene;
  sim::Pose2D pose;
  std::vector<double> joints;
  double spoon_load = 0.0;
};

struct GridSet {
  std::vector<nn::Tensor<float>> images;
  std::vector<GridSample> samples;
  std::size_t resamples = 0;
};

GridSet grid_augment(const GridSpec& spec, std::uint64_t seed);

nlohmann::json grid_metadata(const GridSet& set);

}  // namespace lfd::demo
