#include "lfd/bilateral.hpp"

#include <algorithm>
#include <cmath>

#include "lfd/errors.hpp"

namespace lfd::bilateral {

void Gains::validate() const {
  if (!(admittance > 0.0 && tracking > 0.0 && reflection > 0.0))
    throw ValidationError("bilateral gains must all be positive");
}

sim::Pose2D master_update(const BilateralState& s, double dt) {
  if (!(dt > 0.0)) throw ValidationError("master_update: dt must be positive");
  const auto& g = s.gains;
  sim::Pose2D m = s.master;
  m.x += dt * g.admittance * (s.operator_force[0] - g.reflection * s.environment_force[0]);
  m.y += dt * g.admittance * (s.operator_force[1] - g.reflection * s.environment_force[1]);
  m.theta = sim::wrap_angle(m.theta + dt * g.admittance * (s.operator_force[2] - g.reflection * s.environment_force[2]));
  return m;
}

std::array<double, 3> slave_command(const BilateralState& s) {
  const double k = s.gains.tracking;
  return {k * (s.master.x - s.slave.x), k * (s.master.y - s.slave.y),
          k * sim::wrap_angle(s.master.theta - s.slave.theta)};
}

Wrench synth_human_force(const sim::Pose2D& waypoint, const sim::Pose2D& master, const HandGains& g,
                         const std::array<double, 3>& vel) {
  double fx = g.kp * (waypoint.x - master.x) - g.kd * vel[0];
  double fy = g.kp * (waypoint.y - master.y) - g.kd * vel[1];
  double tau = g.kp_rot * sim::wrap_angle(waypoint.theta - master.theta) - g.kd_rot * vel[2];
  const double norm = std::hypot(fx, fy);
  if (norm > g.max_force) {
    fx *= g.max_force / norm;
    fy *= g.max_force / norm;
  }
  tau = std::clamp(tau, -g.max_torque, g.max_torque);
  return {fx, fy, tau};
}

Wrench load_on_environment(const std::array<double, 3>& contact) { return {-contact[0], -contact[1], -contact[2]}; }

Session::Session(sim::SceneConfig scene, Gains gains, HandGains hand, double dt, sim::SimParams params)
    : Session(scene, sim::initial_state(scene), gains, hand, dt, params) {}

Session::Session(sim::SceneConfig scene, const sim::SimState& start, Gains gains, HandGains hand, double dt,
                 sim::SimParams params)
    : scene_(std::move(scene)), params_(params), sim_(start), hand_(hand), dt_(dt) {
  gains.validate();
  scene_.validate();
  if (!(dt > 0.0 && dt <= 0.1)) throw ValidationError("session: dt must lie in (0, 0.1]");
  state_.gains = gains;
  state_.slave = sim::spoon_pose(sim_.joints, scene_);
  state_.master = state_.slave;
  state_.environment_force = load_on_environment(sim_.contact);
}

void Session::tick_toward(const sim::Pose2D& target) { tick(synth_human_force(target, state_.master, hand_, master_velocity_)); }

void Session::tick(const Wrench& operator_force) {
  for (double f : operator_force)
    if (!std::isfinite(f)) throw ValidationError("session: non-finite operator force");
  state_.operator_force = operator_force;
  state_.environment_force = load_on_environment(sim_.contact);
  const sim::Pose2D before = state_.master;
  state_.master = master_update(state_, dt_);
  master_velocity_ = {(state_.master.x - before.x) / dt_, (state_.master.y - before.y) / dt_,
                      sim::wrap_angle(state_.master.theta - before.theta) / dt_};

  const auto v = slave_command(state_);
  const auto qd = sim::ik_velocity(sim_.joints, scene_.links, v, params_.ik_damping);
  std::vector<double> cmd(sim_.joints);
  for (std::size_t i = 0; i < cmd.size(); ++i) cmd[i] += qd[i] * dt_;
  sim_ = sim::step(sim_, cmd, dt_, scene_, params_);
  state_.slave = sim::spoon_pose(sim_.joints, scene_);
  state_.environment_force = load_on_environment(sim_.contact);
  ++ticks_;
}

}  // namespace lfd::bilateral
