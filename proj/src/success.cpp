#include "lfd/success.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace lfd::sim {

std::string SuccessReport::summary() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s: scooped %.1f%% (peak %.1f%%), max force %.2f N%s%s",
                success ? "success" : "failure", 100.0 * scooped_fraction, 100.0 * peak_fraction, max_force,
                breakage ? ", breakage" : "", joint_limit_frames ? ", joint limit reached" : "");
  return buf;
}

void to_json(nlohmann::json& j, const SuccessReport& r) {
  j = {{"success", r.success},
       {"lifted_with_load", r.lifted_with_load},
       {"breakage", r.breakage},
       {"scooped_fraction", r.scooped_fraction},
       {"peak_fraction", r.peak_fraction},
       {"max_force", r.max_force},
       {"joint_limit_frames", r.joint_limit_frames},
       {"frames", r.frames}};
}

SuccessReport success(const store::DemoSequence& trajectory, const SceneConfig& scene,
                      const SuccessCriteria& criteria) {
  if (trajectory.frames.empty()) throw ValidationError("success: empty trajectory");
  const double initial = scene.initial_volume();
  SuccessReport r;
  r.frames = trajectory.frames.size();
  std::vector<double> q;
  for (const auto& f : trajectory.frames) {
    q.assign(f.joints.begin(), f.joints.end());
    const Pose2D tip = spoon_pose(q, scene);
    const double frac = static_cast<double>(f.material) / initial;
    r.peak_fraction = std::max(r.peak_fraction, frac);
    if (tip.y > scene.rim_y()) r.scooped_fraction = std::max(r.scooped_fraction, frac);
    r.max_force = std::max(r.max_force, std::hypot(static_cast<double>(f.force[0]), static_cast<double>(f.force[1])));
    if (std::any_of(q.begin(), q.end(), [](double v) { return std::abs(v) >= std::numbers::pi - 1e-6; }))
      ++r.joint_limit_frames;
  }
  r.lifted_with_load = r.scooped_fraction >= criteria.min_fraction;
  r.breakage = r.max_force > criteria.max_force;
  r.success = r.lifted_with_load && !r.breakage;
  return r;
}

}  // namespace lfd::sim
