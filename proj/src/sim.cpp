#include "lfd/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "lfd/errors.hpp"

namespace lfd::sim {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kM2ToCm2 = 1e4;

// Circular segment area (m^2) of a circle of radius r below a chord at depth d
// under the center.
double segment_area(double r, double d) {
  d = std::clamp(d, 0.0, r);
  return r * r * std::acos(d / r) - d * std::sqrt(std::max(0.0, r * r - d * d));
}

std::int64_t to_quanta(double volume) { return static_cast<std::int64_t>(std::llround(volume / kVolumeQuantum)); }

void check_joints(std::span<const double> joints, std::size_t expected, const char* what) {
  if (joints.size() != expected)
    throw ValidationError(std::string(what) + ": expected " + std::to_string(expected) + " joints, got " +
                          std::to_string(joints.size()));
}

}  // namespace

std::string to_string(BowlColor c) { return c == BowlColor::yellow ? "yellow" : "green"; }
std::string to_string(FillLevel f) { return f == FillLevel::high ? "high" : "low"; }

BowlColor bowl_color_from_string(const std::string& s) {
  if (s == "yellow") return BowlColor::yellow;
  if (s == "green") return BowlColor::green;
  throw ValidationError("unknown bowl color '" + s + "' (expected yellow|green)");
}

FillLevel fill_level_from_string(const std::string& s) {
  if (s == "high") return FillLevel::high;
  if (s == "low") return FillLevel::low;
  throw ValidationError("unknown fill level '" + s + "' (expected high|low)");
}

double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

double SceneConfig::reach() const {
  double r = 0.0;
  for (double l : links) r += l;
  return r;
}

double SceneConfig::fill_depth() const { return fill == FillLevel::high ? 0.015 : 0.045; }

double SceneConfig::initial_volume() const { return segment_area(bowl_radius, fill_depth()) * kM2ToCm2; }

void SceneConfig::validate() const {
  if (links.empty()) throw ValidationError("scene: arm needs at least one link");
  for (double l : links)
    if (!(l > 0.0)) throw ValidationError("scene: link lengths must be positive");
  if (!(bowl_radius > 0.0) || !(wall_thickness > 0.0)) throw ValidationError("scene: bowl radius and wall must be positive");
  if (!(fill_depth() < bowl_radius)) throw ValidationError("scene: fill depth exceeds bowl radius");
  if (!(initial_volume() > 0.0)) throw ValidationError("scene: material volume must be positive");
  const double far = std::hypot(bowl_x - base_x, rim_y() - base_y) + bowl_radius;
  if (far > reach())
    throw ValidationError("scene: bowl at x=" + std::to_string(bowl_x) + " is outside the reachable workspace (reach " +
                          std::to_string(reach()) + " m)");
  if (image_size == 0 || !(view_extent > 0.0)) throw ValidationError("scene: bad view");
}

std::vector<double> default_positions() {
  std::vector<double> xs;
  for (int i = 0; i < 7; ++i) xs.push_back(0.20 + 0.07 * i);
  return xs;
}

std::vector<double> home_joints() { return {1.5033, -0.5867, -0.7762, -0.6802, -0.5712, -0.4598}; }

SimState initial_state(const SceneConfig& scene, std::span<const double> joints) {
  scene.validate();
  check_joints(joints, scene.joint_count(), "initial_state");
  SimState s;
  s.joints.assign(joints.begin(), joints.end());
  for (double& q : s.joints) q = std::clamp(q, -kPi, kPi);
  s.joint_velocities.assign(s.joints.size(), 0.0);
  s.bowl_quanta = to_quanta(scene.initial_volume());
  s.contact = contact_force(s, scene).wrench;
  return s;
}

SimState initial_state(const SceneConfig& scene) {
  auto q = home_joints();
  q.resize(scene.joint_count(), 0.0);
  return initial_state(scene, q);
}

Pose2D fk(std::span<const double> joints, std::span<const double> links) {
  if (joints.size() != links.size())
    throw ValidationError("fk: " + std::to_string(joints.size()) + " joints for " + std::to_string(links.size()) + " links");
  Pose2D p;
  double th = 0.0;
  for (std::size_t i = 0; i < joints.size(); ++i) {
    th += joints[i];
    p.x += links[i] * std::cos(th);
    p.y += links[i] * std::sin(th);
  }
  p.theta = wrap_angle(th);
  return p;
}

Pose2D spoon_pose(std::span<const double> joints, const SceneConfig& scene) {
  Pose2D p = fk(joints, scene.links);
  p.x += scene.base_x;
  p.y += scene.base_y;
  return p;
}

std::vector<Eigen::Vector2d> chain_points(std::span<const double> joints, const SceneConfig& scene) {
  check_joints(joints, scene.joint_count(), "chain_points");
  std::vector<Eigen::Vector2d> pts{{scene.base_x, scene.base_y}};
  double th = 0.0;
  Eigen::Vector2d p = pts.front();
  for (std::size_t i = 0; i < joints.size(); ++i) {
    th += joints[i];
    p += scene.links[i] * Eigen::Vector2d(std::cos(th), std::sin(th));
    pts.push_back(p);
  }
  return pts;
}

Eigen::MatrixXd jacobian(std::span<const double> joints, std::span<const double> links) {
  const auto n = joints.size();
  if (n != links.size()) throw ValidationError("jacobian: joint/link count mismatch");
  Eigen::MatrixXd jac(3, n);
  // Column i: sum over links k >= i of the derivative of link k's endpoint.
  double th = 0.0;
  std::vector<double> cx(n), cy(n);
  for (std::size_t k = 0; k < n; ++k) {
    th += joints[k];
    cx[k] = links[k] * std::cos(th);
    cy[k] = links[k] * std::sin(th);
  }
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    sx += cx[i];
    sy += cy[i];
    jac(0, i) = -sy;
    jac(1, i) = sx;
    jac(2, i) = 1.0;
  }
  return jac;
}

std::vector<double> ik_velocity(std::span<const double> joints, std::span<const double> links,
                                const std::array<double, 3>& v_cart, double damping) {
  for (double v : v_cart)
    if (!std::isfinite(v)) throw ValidationError("ik_velocity: non-finite Cartesian velocity");
  const Eigen::MatrixXd jac = jacobian(joints, links);
  const Eigen::Vector3d v(v_cart[0], v_cart[1], v_cart[2]);
  const Eigen::Matrix3d a = jac * jac.transpose() + damping * damping * Eigen::Matrix3d::Identity();
  const Eigen::VectorXd qd = jac.transpose() * a.ldlt().solve(v);
  return {qd.data(), qd.data() + qd.size()};
}

bool ik_solve(std::vector<double>& joints, const Pose2D& target, const SceneConfig& scene, double tol, int max_iters) {
  check_joints(joints, scene.joint_count(), "ik_solve");
  for (int it = 0; it < max_iters; ++it) {
    const Pose2D p = spoon_pose(joints, scene);
    const std::array<double, 3> err{target.x - p.x, target.y - p.y, wrap_angle(target.theta - p.theta)};
    if (std::abs(err[0]) < tol && std::abs(err[1]) < tol && std::abs(err[2]) < tol) {
      for (double q : joints)
        if (q < -kPi || q > kPi) return false;
      return true;
    }
    // Heavier damping far away, near-Newton steps close in.
    const double dist = std::hypot(err[0], err[1]) + std::abs(err[2]) * 0.1;
    const double lambda = std::min(0.05, dist);
    const auto dq = ik_velocity(joints, scene.links, err, lambda);
    for (std::size_t i = 0; i < joints.size(); ++i) joints[i] = wrap_angle(joints[i] + dq[i]);
  }
  return false;
}

double surface_height(const SceneConfig& scene, double volume) {
  const double r = scene.bowl_radius;
  const double target = std::max(0.0, volume) / kM2ToCm2;
  const double full = kPi * r * r / 2.0;
  if (target >= full) return scene.rim_y();
  double lo = 0.0, hi = r;  // depth below center; area decreasing in depth
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (segment_area(r, mid) > target)
      lo = mid;
    else
      hi = mid;
  }
  return scene.rim_y() - 0.5 * (lo + hi);
}

bool inside_bowl(const SceneConfig& scene, const Eigen::Vector2d& p) {
  return p.y() < scene.rim_y() && (p - scene.bowl_center()).norm() < scene.bowl_radius;
}

double ContactReading::force_magnitude() const { return std::hypot(wrench[0], wrench[1]); }

namespace {

// Deepest penetration of point p into the table or bowl wall.
ContactReading penetration(const Eigen::Vector2d& p, const SceneConfig& scene) {
  ContactReading best;
  if (p.y() < 0.0) {
    best.depth = -p.y();
    best.normal = {0.0, 1.0};
    best.in_contact = true;
  }
  const Eigen::Vector2d c = scene.bowl_center();
  const Eigen::Vector2d d = p - c;
  const double r = d.norm();
  const double rin = scene.bowl_radius, rout = scene.bowl_radius + scene.wall_thickness;
  if (p.y() <= c.y() && r >= rin && r <= rout && r > 0.0) {
    const Eigen::Vector2d radial = d / r;
    struct Cand {
      double depth;
      Eigen::Vector2d normal;
    };
    Cand cands[3] = {{r - rin, -radial}, {rout - r, radial}, {c.y() - p.y(), {0.0, 1.0}}};
    const Cand* m = &cands[0];
    for (const auto& cd : cands)
      if (cd.depth < m->depth) m = &cd;
    if (!best.in_contact || m->depth > best.depth) {
      best.depth = m->depth;
      best.normal = m->normal;
      best.in_contact = true;
    }
  }
  if (best.in_contact && best.depth <= 0.0) best = ContactReading{};
  return best;
}

}  // namespace

ContactReading contact_force(const SimState& state, const SceneConfig& scene, const SimParams& params) {
  const auto pts = chain_points(state.joints, scene);
  const Eigen::Vector2d tip = pts.back();
  ContactReading c = penetration(tip, scene);
  if (!c.in_contact) return c;
  const Eigen::Vector2d f = params.contact_stiffness * c.depth * c.normal;
  const Eigen::Vector2d arm = tip - pts[pts.size() - 2];
  c.wrench = {f.x(), f.y(), arm.x() * f.y() - arm.y() * f.x()};
  return c;
}

SimState step(const SimState& state, std::span<const double> joint_cmd, double dt, const SceneConfig& scene,
              const SimParams& params) {
  if (!(dt > 0.0 && dt <= 0.1)) throw ValidationError("step: dt must lie in (0, 0.1], got " + std::to_string(dt));
  check_joints(joint_cmd, state.joints.size(), "step");
  for (std::size_t i = 0; i < joint_cmd.size(); ++i)
    if (!std::isfinite(joint_cmd[i])) throw ValidationError("step: non-finite joint command at joint " + std::to_string(i));

  SimState next = state;
  next.time = state.time + dt;
  for (std::size_t i = 0; i < joint_cmd.size(); ++i) {
    const double target = std::clamp(joint_cmd[i], -params.joint_limit, params.joint_limit);
    const double delta = std::clamp(target - state.joints[i], -params.max_joint_step, params.max_joint_step);
    next.joints[i] = std::clamp(state.joints[i] + delta, -params.joint_limit, params.joint_limit);
    next.joint_velocities[i] = (next.joints[i] - state.joints[i]) / dt;
  }

  // Scoop transfer: tip path length spent inside the fill.
  const auto p0 = chain_points(state.joints, scene).back();
  const auto p1 = chain_points(next.joints, scene).back();
  const double surface = surface_height(scene, state.material_in_bowl());
  constexpr int kSub = 16;
  double inside_len = 0.0;
  const double seg = (p1 - p0).norm() / kSub;
  for (int k = 0; k < kSub; ++k) {
    const Eigen::Vector2d mid = p0 + (p1 - p0) * ((k + 0.5) / kSub);
    if (inside_bowl(scene, mid) && mid.y() < surface) inside_len += seg;
  }
  if (inside_len > 0.0) {
    const std::int64_t room = std::max<std::int64_t>(0, to_quanta(params.spoon_capacity) - next.spoon_quanta);
    const std::int64_t want = to_quanta(params.scoop_rate * inside_len);
    const std::int64_t moved = std::min({want, room, next.bowl_quanta});
    next.bowl_quanta -= moved;
    next.spoon_quanta += moved;
  }
  // Dumping: a loaded spoon lowered near the table beside the bowl empties.
  const double footprint = scene.bowl_radius + scene.wall_thickness;
  if (next.spoon_quanta > 0 && std::abs(p1.x() - scene.bowl_x) > footprint && p1.y() < params.dump_height) {
    next.removed_quanta += next.spoon_quanta;
    next.spoon_quanta = 0;
  }

  next.contact = contact_force(next, scene, params).wrench;
  return next;
}

// ---------------------------------------------------------------- rendering

namespace {

struct Rgb {
  float r, g, b;
};

constexpr Rgb kBackground{0.90f, 0.92f, 0.95f};
constexpr Rgb kTable{0.55f, 0.42f, 0.30f};
constexpr Rgb kYellow{0.95f, 0.80f, 0.10f};
constexpr Rgb kGreen{0.15f, 0.65f, 0.25f};
constexpr Rgb kMaterial{0.80f, 0.65f, 0.35f};
constexpr Rgb kArm{0.30f, 0.32f, 0.38f};
constexpr Rgb kSpoon{0.70f, 0.72f, 0.78f};

constexpr int kSuper = 2;
constexpr double kArmRadius = 0.012;
constexpr double kHandleRadius = 0.006;
constexpr double kHeadRadius = 0.016;

double segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

bool in_bowl_body(const SceneConfig& scene, const Eigen::Vector2d& p) {
  const Eigen::Vector2d c = scene.bowl_center();
  const double r = (p - c).norm();
  return p.y() <= c.y() && r >= scene.bowl_radius && r <= scene.bowl_radius + scene.wall_thickness;
}

Eigen::Vector2d sample_point(const SceneConfig& scene, std::size_t row, std::size_t col, int sr, int sc) {
  const double px = scene.view_extent / static_cast<double>(scene.image_size);
  const double x = scene.view_x0 + (static_cast<double>(col) + (sc + 0.5) / kSuper) * px;
  const double y = scene.view_y0 + scene.view_extent - (static_cast<double>(row) + (sr + 0.5) / kSuper) * px;
  return {x, y};
}

}  // namespace

nn::Tensor<float> render(const SimState& state, const SceneConfig& scene) {
  const std::size_t n = scene.image_size;
  nn::Tensor<float> img({3, n, n}, 0.0f);
  const auto pts = chain_points(state.joints, scene);
  const Eigen::Vector2d tip = pts.back();
  const Eigen::Vector2d wrist = pts[pts.size() - 2];
  const Eigen::Vector2d dir = (tip - wrist).normalized();
  const Eigen::Vector2d head = tip - 0.6 * kHeadRadius * dir;
  const double surface = surface_height(scene, state.material_in_bowl());
  const double load = std::clamp(state.material_on_spoon() / SimParams{}.spoon_capacity, 0.0, 1.0);
  const double blob = kHeadRadius * std::sqrt(load);
  const Rgb bowl = scene.color == BowlColor::yellow ? kYellow : kGreen;

  auto shade = [&](const Eigen::Vector2d& p) -> Rgb {
    // Topmost layer first; equivalent to painting back to front.
    if (blob > 0.0 && (p - head).norm() <= blob) return kMaterial;
    if ((p - head).norm() <= kHeadRadius) return kSpoon;
    if (segment_distance(p, wrist, tip) <= kHandleRadius) return kSpoon;
    for (std::size_t i = 0; i + 2 < pts.size(); ++i)
      if (segment_distance(p, pts[i], pts[i + 1]) <= kArmRadius) return kArm;
    if (inside_bowl(scene, p) && p.y() <= surface) return kMaterial;
    if (in_bowl_body(scene, p)) return bowl;
    if (p.y() < 0.0) return kTable;
    return kBackground;
  };

  auto data = img.data();
  const float w = 1.0f / (kSuper * kSuper);
  for (std::size_t row = 0; row < n; ++row)
    for (std::size_t col = 0; col < n; ++col) {
      float r = 0, g = 0, b = 0;
      for (int sr = 0; sr < kSuper; ++sr)
        for (int sc = 0; sc < kSuper; ++sc) {
          const Rgb c = shade(sample_point(scene, row, col, sr, sc));
          r += c.r;
          g += c.g;
          b += c.b;
        }
      data[row * n + col] = r * w;
      data[n * n + row * n + col] = g * w;
      data[2 * n * n + row * n + col] = b * w;
    }
  return img;
}

std::vector<bool> bowl_body_mask(const SceneConfig& scene) {
  const std::size_t n = scene.image_size;
  std::vector<bool> mask(n * n, false);
  for (std::size_t row = 0; row < n; ++row)
    for (std::size_t col = 0; col < n; ++col)
      for (int sr = 0; sr < kSuper; ++sr)
        for (int sc = 0; sc < kSuper; ++sc)
          if (in_bowl_body(scene, sample_point(scene, row, col, sr, sc))) mask[row * n + col] = true;
  return mask;
}

}  // namespace lfd::sim
