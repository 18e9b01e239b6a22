#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lfd/tensor.hpp"

namespace lfd::sim {

enum class BowlColor { yellow, green };
enum class FillLevel { high, low };

std::string to_string(BowlColor c);
std::string to_string(FillLevel f);
BowlColor bowl_color_from_string(const std::string& s);
FillLevel fill_level_from_string(const std::string& s);

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

/// Static scene. The table top is y = 0; the bowl is a half-annulus resting
/// on it whose rim sits at y = bowl_radius + wall_thickness. Lengths are in
/// meters; material volume is the cross-section area of the fill in cm^2.
struct SceneConfig {
  double bowl_x = 0.20;
  double bowl_radius = 0.07;
  double wall_thickness = 0.008;
  BowlColor color = BowlColor::yellow;
  FillLevel fill = FillLevel::high;
  double base_x = 0.0;
  double base_y = 0.10;
  std::vector<double> links{0.20, 0.18, 0.15, 0.12, 0.08, 0.07};
  std::size_t image_size = 64;
  double view_x0 = 0.06;
  double view_y0 = -0.08;
  double view_extent = 0.70;

  std::size_t joint_count() const { return links.size(); }
  double reach() const;
  double rim_y() const { return bowl_radius + wall_thickness; }
  Eigen::Vector2d bowl_center() const { return {bowl_x, rim_y()}; }
  /// Depth of the initial material surface below the rim.
  double fill_depth() const;
  double initial_volume() const;
  /// Throws ValidationError if the bowl is out of reach or the geometry is
  /// degenerate.
  void validate() const;
};

/// Bowl x-positions s1..s7 of the default scene family.
std::vector<double> default_positions();
/// The initial (home) joint configuration used for every episode.
std::vector<double> home_joints();

/// Simulation constants (design values).
struct SimParams {
  double max_joint_step = 0.15;      // rad per step
  double contact_stiffness = 500.0;  // N/m
  double ik_damping = 0.05;
  double scoop_rate = 220.0;         // cm^2 of material per meter of tip travel inside the fill
  double spoon_capacity = 24.0;      // cm^2
  double dump_height = 0.03;         // m; loaded spoon lowered this close to the table outside the bowl empties
  double joint_limit = 3.14159265358979323846;
};

/// Volumes are tracked as integer counts of this many cm^2 so transfers
/// between compartments conserve the total exactly.
inline constexpr double kVolumeQuantum = 1e-6;

struct SimState {
  std::vector<double> joints;
  std::vector<double> joint_velocities;
  std::int64_t bowl_quanta = 0;
  std::int64_t spoon_quanta = 0;
  std::int64_t removed_quanta = 0;
  std::array<double, 3> contact{};  // fx, fy (N), torque about the wrist (N m)
  double time = 0.0;

  double material_in_bowl() const { return static_cast<double>(bowl_quanta) * kVolumeQuantum; }
  double material_on_spoon() const { return static_cast<double>(spoon_quanta) * kVolumeQuantum; }
  double material_removed() const { return static_cast<double>(removed_quanta) * kVolumeQuantum; }
  std::int64_t total_quanta() const { return bowl_quanta + spoon_quanta + removed_quanta; }

  bool operator==(const SimState&) const = default;
};

SimState initial_state(const SceneConfig& scene, std::span<const double> joints);
SimState initial_state(const SceneConfig& scene);

/// Planar chain forward kinematics relative to the arm base; theta is the
/// sum of the joint angles (wrapped).
Pose2D fk(std::span<const double> joints, std::span<const double> links);
/// Spoon tip pose in world coordinates.
Pose2D spoon_pose(std::span<const double> joints, const SceneConfig& scene);
/// Base, every joint, and the tip in world coordinates (J + 1 points).
std::vector<Eigen::Vector2d> chain_points(std::span<const double> joints, const SceneConfig& scene);
/// d(x, y, theta) / d(joints), 3 x J.
Eigen::MatrixXd jacobian(std::span<const double> joints, std::span<const double> links);

/// Damped least-squares inverse: qdot = J^T (J J^T + lambda^2 I)^-1 v.
std::vector<double> ik_velocity(std::span<const double> joints, std::span<const double> links,
                                const std::array<double, 3>& v_cart, double damping = SimParams{}.ik_damping);

/// Iterative position IK toward a world pose; returns false if it did not
/// converge within `tol` or left the joint limits.
bool ik_solve(std::vector<double>& joints, const Pose2D& target, const SceneConfig& scene, double tol = 1e-10,
              int max_iters = 500);

/// Height of the flat material surface for a given bowl volume (cm^2).
double surface_height(const SceneConfig& scene, double volume);
/// True if the point lies in the open bowl interior (below the rim).
bool inside_bowl(const SceneConfig& scene, const Eigen::Vector2d& p);

struct ContactReading {
  std::array<double, 3> wrench{};  // fx, fy, torque
  Eigen::Vector2d normal = Eigen::Vector2d::Zero();  // outward normal of the deepest contact surface
  double depth = 0.0;
  bool in_contact = false;

  double force_magnitude() const;
};

/// Penalty contact at the spoon tip against the table and the bowl wall:
/// stiffness * penetration depth along the outward surface normal.
ContactReading contact_force(const SimState& state, const SceneConfig& scene, const SimParams& params = {});

/// Rate-limited move toward `joint_cmd`, then material transfer and contact
/// update. Throws ValidationError on a non-finite command or dt outside
/// (0, 0.1].
SimState step(const SimState& state, std::span<const double> joint_cmd, double dt, const SceneConfig& scene,
              const SimParams& params = {});

/// RGB image [3, N, N] in [0, 1], a pure function of (state, scene).
nn::Tensor<float> render(const SimState& state, const SceneConfig& scene);
/// Pixels (row-major N*N) touched by the bowl body before anything is drawn
/// over it.
std::vector<bool> bowl_body_mask(const SceneConfig& scene);

}  // namespace lfd::sim
