#pragma once

#include <array>

#include "lfd/sim.hpp"

namespace lfd::bilateral {

using Wrench = std::array<double, 3>;  // fx, fy, torque

struct Gains {
  double admittance = 0.1;  // C_a, m/(N s)
  double tracking = 5.0;    // K_p, 1/s
  double reflection = 1.0;  // k_f
  void validate() const;
};

/// PD pull of a synthetic operator hand toward a waypoint.
struct HandGains {
  double kp = 40.0;       // N/m
  double kd = 0.0;        // N s/m
  double kp_rot = 40.0;   // N m/rad
  double kd_rot = 0.0;
  double max_force = 20.0;   // N, norm of the planar part
  double max_torque = 10.0;  // N m
};

struct BilateralState {
  sim::Pose2D master;
  sim::Pose2D slave;
  Wrench operator_force{};     // F_h
  Wrench environment_force{};  // F_e, the load the slave puts on its surroundings
  Gains gains;
};

/// The simulator reports the reaction on the tip; the master reflects the
/// opposite, the load the slave applies, so contact resists further pushing.
Wrench load_on_environment(const std::array<double, 3>& contact);

/// Admittance master: velocity = C_a (F_h - k_f F_e), one Euler step of dt.
sim::Pose2D master_update(const BilateralState& state, double dt);
/// Cartesian slave velocity K_p (master - slave), angle error wrapped.
std::array<double, 3> slave_command(const BilateralState& state);
Wrench synth_human_force(const sim::Pose2D& waypoint, const sim::Pose2D& master, const HandGains& gains,
                         const std::array<double, 3>& master_velocity = {});

/// One master/slave pair driving one simulator at a fixed tick.
class Session {
 public:
  explicit Session(sim::SceneConfig scene, Gains gains = {}, HandGains hand = {}, double dt = 0.05,
                   sim::SimParams params = {});
  Session(sim::SceneConfig scene, const sim::SimState& start, Gains gains = {}, HandGains hand = {}, double dt = 0.05,
          sim::SimParams params = {});

  /// Pulls the master toward `target` with the synthetic hand, then runs one
  /// master update, slave command, and simulator step.
  void tick_toward(const sim::Pose2D& target);
  /// Same, with an explicit operator force.
  void tick(const Wrench& operator_force);

  const sim::SceneConfig& scene() const { return scene_; }
  const sim::SimState& sim_state() const { return sim_; }
  const BilateralState& state() const { return state_; }
  double dt() const { return dt_; }
  std::uint64_t ticks() const { return ticks_; }

 private:
  sim::SceneConfig scene_;
  sim::SimParams params_;
  sim::SimState sim_;
  BilateralState state_;
  HandGains hand_;
  std::array<double, 3> master_velocity_{};
  double dt_;
  std::uint64_t ticks_ = 0;
};

}  // namespace lfd::bilateral
