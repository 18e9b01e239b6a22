#pragma once

#include <cstddef>
#include <string>

#include "json.hpp"

#include "lfd/dataset.hpp"
#include "lfd/sim.hpp"

namespace lfd::sim {

struct SuccessCriteria {
  double min_fraction = 0.20;  // of the initial bowl volume, held on a lifted spoon
  double max_force = 50.0;     // N, breakage limit
};

struct SuccessReport {
  bool success = false;
  bool lifted_with_load = false;
  bool breakage = false;
  double scooped_fraction = 0.0;   // best on-spoon fraction while above the rim
  double peak_fraction = 0.0;      // best on-spoon fraction anywhere
  double max_force = 0.0;
  std::size_t joint_limit_frames = 0;  // frames with a joint pinned at +-pi
  std::size_t frames = 0;

  std::string summary() const;
};

void to_json(nlohmann::json& j, const SuccessReport& r);

/// Scoop verdict over a recorded trajectory. Throws ValidationError on an
/// empty trajectory.
SuccessReport success(const store::DemoSequence& trajectory, const SceneConfig& scene,
                      const SuccessCriteria& criteria = {});

}  // namespace lfd::sim
