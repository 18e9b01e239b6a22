#include <cmath>
#include <numbers>

#include <Eigen/SVD>

#include "doctest.h"
#include "lfd/demo.hpp"
#include "lfd/errors.hpp"
#include "lfd/rng.hpp"
#include "lfd/sim.hpp"
#include "lfd/success.hpp"
#include "oracles.hpp"

using namespace lfd;
using namespace lfd::sim;

namespace {

constexpr double kPi = std::numbers::pi;

SceneConfig scene_at(double x, FillLevel fill = FillLevel::high, BowlColor color = BowlColor::yellow) {
  SceneConfig s;
  s.bowl_x = x;
  s.fill = fill;
  s.color = color;
  return s;
}

std::vector<double> random_joints(Rng& rng, std::size_t n, double spread = kPi) {
  std::vector<double> q(n);
  for (auto& v : q) v = rng.uniform(-spread, spread);
  return q;
}

double depth_oracle(const SceneConfig& s, double x, double y) {
  return lfd::testing::penetration_depth(s.bowl_x, s.bowl_radius, s.wall_thickness, x, y);
}

}  // namespace

TEST_CASE("fk of a straight arm along +x") {
  const std::vector<double> links{0.20, 0.18, 0.15, 0.12, 0.08, 0.07};
  const auto p = fk(std::vector<double>(6, 0.0), links);
  CHECK(p.x == doctest::Approx(0.80).epsilon(1e-14));
  CHECK(p.y == doctest::Approx(0.0));
  CHECK(p.theta == 0.0);
}

TEST_CASE("fk with the first joint at a right angle points straight up") {
  const std::vector<double> links{0.20, 0.18, 0.15, 0.12, 0.08, 0.07};
  std::vector<double> q(6, 0.0);
  q[0] = kPi / 2;
  const auto p = fk(q, links);
  CHECK(std::abs(p.x) < 1e-12);
  CHECK(p.y == doctest::Approx(0.80).epsilon(1e-14));
  CHECK(p.theta == doctest::Approx(kPi / 2));
}

TEST_CASE("fk matches the complex-product chain") {
  const SceneConfig s;
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto q = random_joints(rng, 6);
    const auto p = fk(q, s.links);
    const auto o = testing::fk_complex(q, s.links);
    CHECK(std::abs(p.x - o[0]) < 1e-12);
    CHECK(std::abs(p.y - o[1]) < 1e-12);
    CHECK(std::abs(wrap_angle(p.theta - o[2])) < 1e-12);
  }
}

TEST_CASE("wrap_angle lands in (-pi, pi]") {
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3 * kPi / 2) == doctest::Approx(-kPi / 2));
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double a = wrap_angle(rng.uniform(-50, 50));
    CHECK(a > -kPi);
    CHECK(a <= kPi);
  }
}

TEST_CASE("jacobian agrees with central differences of fk") {
  const SceneConfig s;
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto q = random_joints(rng, 6);
    const auto J = jacobian(q, s.links);
    for (std::size_t j = 0; j < 6; ++j) {
      auto qp = q, qm = q;
      qp[j] += 1e-6;
      qm[j] -= 1e-6;
      const auto a = fk(qp, s.links), b = fk(qm, s.links);
      CHECK(J(0, j) == doctest::Approx((a.x - b.x) / 2e-6).epsilon(1e-6));
      CHECK(J(1, j) == doctest::Approx((a.y - b.y) / 2e-6).epsilon(1e-6));
      CHECK(J(2, j) == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("ik_velocity returns zero for zero input") {
  const SceneConfig s;
  const auto qd = ik_velocity(home_joints(), s.links, {0.0, 0.0, 0.0});
  for (double v : qd) CHECK(v == 0.0);
}

TEST_CASE("ik_velocity stays bounded at full extension") {
  const SceneConfig s;
  const auto qd = ik_velocity(std::vector<double>(6, 0.0), s.links, {1.0, 0.0, 0.0});
  double n = 0.0;
  for (double v : qd) {
    CHECK(std::isfinite(v));
    n += v * v;
  }
  CHECK(std::sqrt(n) < 10.0);
}

TEST_CASE("ik_velocity reproduces cartesian moves at well-conditioned poses") {
  const SceneConfig s;
  const double lambda = SimParams{}.ik_damping;
  Rng rng(11);
  std::size_t generic = 0;
  for (int trial = 0; trial < 400; ++trial) {
    auto q = home_joints();
    for (auto& v : q) v += rng.uniform(-1.0, 1.0);
    // Jacobian by central differences of fk, not the library's analytic one.
    Eigen::MatrixXd J(3, 6);
    for (std::size_t j = 0; j < 6; ++j) {
      auto qp = q, qm = q;
      qp[j] += 1e-6;
      qm[j] -= 1e-6;
      const auto a = fk(qp, s.links), b = fk(qm, s.links);
      J(0, j) = (a.x - b.x) / 2e-6;
      J(1, j) = (a.y - b.y) / 2e-6;
      J(2, j) = wrap_angle(a.theta - b.theta) / 2e-6;
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(J, Eigen::ComputeThinU);
    const auto sv = svd.singularValues();
    const double smin = sv.minCoeff();
    auto residual = [&](const Eigen::Vector3d& v) {
      const auto qd = ik_velocity(q, s.links, {v[0], v[1], v[2]});
      const Eigen::Vector3d got = J * Eigen::Map<const Eigen::VectorXd>(qd.data(), 6);
      return (got - v).norm() / v.norm();
    };
    const Eigen::Vector3d v(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.2, 0.2));
    // damped residual never exceeds lambda^2 / (smin^2 + lambda^2)
    CHECK(residual(v) <= lambda * lambda / (smin * smin + lambda * lambda) + 1e-6);
    // Directions the arm can follow well (singular value >= 7 lambda) come
    // back within 2%; the damping deliberately gives up accuracy elsewhere.
    Eigen::Vector3d w = Eigen::Vector3d::Zero();
    for (int k = 0; k < 3; ++k)
      if (sv[k] >= 7.0 * lambda) w += rng.uniform(-1.0, 1.0) * svd.matrixU().col(k);
    if (w.norm() > 1e-3) {
      ++generic;
      CHECK(residual(w) <= 0.02);
    }
  }
  CHECK(generic > 50);
}

TEST_CASE("ik_solve reaches a pose and fk round-trips") {
  const auto s = scene_at(0.41);
  auto q = home_joints();
  const Pose2D target{0.40, 0.12, -kPi / 2};
  REQUIRE(ik_solve(q, target, s));
  const auto p = spoon_pose(q, s);
  CHECK(std::abs(p.x - target.x) < 1e-9);
  CHECK(std::abs(p.y - target.y) < 1e-9);
  CHECK(std::abs(wrap_angle(p.theta - target.theta)) < 1e-9);
}

TEST_CASE("initial volumes match numerical integration of the circular segment") {
  for (auto fill : {FillLevel::high, FillLevel::low}) {
    const auto s = scene_at(0.20, fill);
    const double depth_below_center = s.fill_depth();  // rim and center coincide
    const double want = testing::segment_area_simpson(s.bowl_radius, depth_below_center, 400000) * 1e4;
    CHECK(s.initial_volume() == doctest::Approx(want).epsilon(1e-6));
    CHECK(surface_height(s, s.initial_volume()) == doctest::Approx(s.rim_y() - s.fill_depth()).epsilon(1e-9));
  }
  CHECK(scene_at(0.2).initial_volume() == doctest::Approx(56.13).epsilon(1e-3));
  CHECK(scene_at(0.2, FillLevel::low).initial_volume() == doctest::Approx(18.63).epsilon(1e-3));
}

TEST_CASE("surface height is monotone in volume") {
  const auto s = scene_at(0.3);
  double prev = -1.0;
  for (double v = 0.0; v <= 70.0; v += 2.5) {
    const double h = surface_height(s, v);
    CHECK(h >= prev);
    prev = h;
  }
  CHECK(surface_height(s, 0.0) == doctest::Approx(s.rim_y() - s.bowl_radius).epsilon(1e-9));
}

TEST_CASE("scene validation rejects unreachable bowls") {
  CHECK_NOTHROW(scene_at(0.62).validate());
  CHECK_THROWS_AS(scene_at(1.5).validate(), ValidationError);
  auto s = scene_at(0.3);
  s.bowl_radius = 0.0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("step with the current joints only advances time") {
  const auto s = scene_at(0.41);
  const auto st = initial_state(s);
  const auto next = step(st, st.joints, 0.05, s);
  CHECK(next.joints == st.joints);
  CHECK(next.bowl_quanta == st.bowl_quanta);
  CHECK(next.spoon_quanta == st.spoon_quanta);
  CHECK(next.time == doctest::Approx(0.05));
  for (double v : next.joint_velocities) CHECK(v == 0.0);
}

TEST_CASE("step rate-limits every joint to 0.15 rad") {
  const auto s = scene_at(0.41);
  const auto st = initial_state(s);
  auto cmd = st.joints;
  for (std::size_t i = 0; i < cmd.size(); ++i) cmd[i] += (i % 2 ? -1.0 : 1.0);
  const auto next = step(st, cmd, 0.05, s);
  for (std::size_t i = 0; i < cmd.size(); ++i)
    CHECK(std::abs(next.joints[i] - st.joints[i]) == doctest::Approx(0.15).epsilon(1e-12));
}

TEST_CASE("step clamps joints at +-pi") {
  const auto s = scene_at(0.41);
  std::vector<double> q(6, 3.1);
  const auto st = initial_state(s, q);
  const auto next = step(st, std::vector<double>(6, 10.0), 0.05, s);
  for (double v : next.joints) CHECK(v == doctest::Approx(kPi));
}

TEST_CASE("step rejects bad commands and time steps") {
  const auto s = scene_at(0.41);
  const auto st = initial_state(s);
  auto cmd = st.joints;
  cmd[2] = std::nan("");
  CHECK_THROWS_AS(step(st, cmd, 0.05, s), ValidationError);
  CHECK_THROWS_AS(step(st, st.joints, 0.0, s), ValidationError);
  CHECK_THROWS_AS(step(st, st.joints, 0.2, s), ValidationError);
  CHECK_THROWS_AS(step(st, std::vector<double>(5, 0.0), 0.05, s), ValidationError);
}

TEST_CASE("material is conserved exactly under random commands") {
  Rng rng(21);
  for (double x : {0.20, 0.41}) {
    const auto s = scene_at(x);
    auto st = initial_state(s);
    const auto total = st.total_quanta();
    for (int k = 0; k < 5000; ++k) {
      auto cmd = st.joints;
      for (auto& v : cmd) v += rng.uniform(-0.3, 0.3);
      st = step(st, cmd, 0.05, s);
      REQUIRE(st.total_quanta() == total);
      REQUIRE(st.bowl_quanta >= 0);
      REQUIRE(st.spoon_quanta >= 0);
    }
  }
}

TEST_CASE("sweeping through the fill moves material onto the spoon") {
  const auto s = scene_at(0.41);
  auto q = home_joints();
  const double surface = s.rim_y() - s.fill_depth();
  REQUIRE(ik_solve(q, {s.bowl_x - 0.03, surface - 0.01, -kPi / 2}, s));
  auto st = initial_state(s, q);
  auto q2 = q;
  REQUIRE(ik_solve(q2, {s.bowl_x + 0.03, surface - 0.01, -kPi / 2}, s));
  const auto before = st.spoon_quanta;
  for (int k = 0; k < 20; ++k) st = step(st, q2, 0.05, s);
  CHECK(st.spoon_quanta > before);
  CHECK(st.material_on_spoon() <= SimParams{}.spoon_capacity + 1e-9);
}

TEST_CASE("no contact above the bowl") {
  const auto s = scene_at(0.41);
  auto q = home_joints();
  REQUIRE(ik_solve(q, {s.bowl_x, s.rim_y() + 0.05, -kPi / 2}, s));
  const auto c = contact_force(initial_state(s, q), s);
  CHECK_FALSE(c.in_contact);
  CHECK(c.force_magnitude() == 0.0);
}

TEST_CASE("1 mm into the inner wall gives 0.5 N") {
  const auto s = scene_at(0.41);
  const double a = -kPi / 3;  // below the center, toward +x
  const double r = s.bowl_radius + 0.001;
  const Pose2D target{s.bowl_x + r * std::cos(a), s.rim_y() + r * std::sin(a), -kPi / 2};
  auto q = home_joints();
  REQUIRE(ik_solve(q, target, s));
  const auto c = contact_force(initial_state(s, q), s);
  REQUIRE(c.in_contact);
  CHECK(c.force_magnitude() == doctest::Approx(0.5).epsilon(1e-6));
  // pushed back toward the bowl interior
  CHECK(c.wrench[0] < 0.0);
  CHECK(c.wrench[1] > 0.0);
}

TEST_CASE("contact force is proportional to table penetration") {
  const auto s = scene_at(0.41);
  for (double d : {0.001, 0.004, 0.01}) {
    auto q = home_joints();
    REQUIRE(ik_solve(q, {0.15, -d, -kPi / 2}, s));
    const auto c = contact_force(initial_state(s, q), s);
    CHECK(c.wrench[0] == doctest::Approx(0.0));
    CHECK(c.wrench[1] == doctest::Approx(500.0 * d).epsilon(1e-6));
  }
}

TEST_CASE("contact force points out of the penetrated solid") {
  const auto s = scene_at(0.41);
  Rng rng(33);
  std::size_t contacts = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    // Tip sampled near the bowl and table so contact is common.
    auto q = home_joints();
    for (auto& v : q) v += rng.uniform(-0.8, 0.8);
    const auto st = initial_state(s, q);
    const auto c = contact_force(st, s);
    if (!c.in_contact) continue;
    ++contacts;
    const auto tip = spoon_pose(q, s);
    const double h = 1e-7;
    const double gx = (depth_oracle(s, tip.x + h, tip.y) - depth_oracle(s, tip.x - h, tip.y)) / (2 * h);
    const double gy = (depth_oracle(s, tip.x, tip.y + h) - depth_oracle(s, tip.x, tip.y - h)) / (2 * h);
    // moving along the force must not deepen the penetration
    CHECK(c.wrench[0] * gx + c.wrench[1] * gy <= 1e-6);
    CHECK(c.depth == doctest::Approx(depth_oracle(s, tip.x, tip.y)).epsilon(1e-9));
  }
  CHECK(contacts > 100);
}

TEST_CASE("render is a pure function of state and scene") {
  const auto s = scene_at(0.41);
  const auto st = initial_state(s);
  const auto a = render(st, s);
  const auto b = render(st, s);
  CHECK(a.shape() == nn::Shape{3, 64, 64});
  CHECK(a == b);
  for (float v : a.data()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("bowl color only changes pixels inside the bowl body") {
  const auto y = scene_at(0.55, FillLevel::high, BowlColor::yellow);
  const auto g = scene_at(0.55, FillLevel::high, BowlColor::green);
  const auto st = initial_state(y);
  const auto a = render(st, y), b = render(st, g);
  const auto mask = bowl_body_mask(y);
  const std::size_t n = 64 * 64;
  std::size_t differing = 0;
  for (std::size_t p = 0; p < n; ++p) {
    bool same = true;
    for (std::size_t ch = 0; ch < 3; ++ch) same = same && a[ch * n + p] == b[ch * n + p];
    if (!same) {
      ++differing;
      CHECK(mask[p]);
    }
  }
  CHECK(differing > 20);
}

TEST_CASE("high and low fill surfaces are at least two rows apart") {
  const auto hi = scene_at(0.55, FillLevel::high);
  const auto lo = scene_at(0.55, FillLevel::low);
  auto top_material_row = [](const SceneConfig& s) {
    const auto img = render(initial_state(s), s);
    const double px = s.view_extent / 64.0;
    const auto col = static_cast<std::size_t>((s.bowl_x - s.view_x0) / px);
    for (std::size_t row = 0; row < 64; ++row) {
      const float r = img[row * 64 + col], g = img[4096 + row * 64 + col], b = img[8192 + row * 64 + col];
      if (std::abs(r - 0.80f) < 1e-6f && std::abs(g - 0.65f) < 1e-6f && std::abs(b - 0.35f) < 1e-6f) return static_cast<int>(row);
    }
    return -1;
  };
  const int rh = top_material_row(hi), rl = top_material_row(lo);
  REQUIRE(rh >= 0);
  REQUIRE(rl >= 0);
  CHECK(rl - rh >= 2);
}

TEST_CASE("a scripted scoop succeeds and records its load") {
  const auto s = scene_at(0.20);
  demo::RecordOptions opts;
  opts.seed = 1;
  const auto seq = demo::record_scripted_demo(s, opts);
  const auto r = success(seq, s);
  CHECK(r.success);
  CHECK(r.scooped_fraction >= 0.20);
  CHECK_FALSE(r.breakage);
}

TEST_CASE("a motionless trajectory fails with zero scooped") {
  const auto s = scene_at(0.41);
  store::DemoSequence seq;
  for (int k = 0; k < 30; ++k) seq.frames.push_back(demo::capture_frame(initial_state(s), s));
  const auto r = success(seq, s);
  CHECK_FALSE(r.success);
  CHECK(r.scooped_fraction == 0.0);
}

TEST_CASE("excess force is reported as breakage") {
  const auto s = scene_at(0.20);
  demo::RecordOptions opts;
  auto seq = demo::record_scripted_demo(s, opts);
  seq.frames[seq.frames.size() / 2].force = {0.0f, 100.0f, 0.0f};
  const auto r = success(seq, s);
  CHECK(r.breakage);
  CHECK_FALSE(r.success);
  CHECK(r.max_force == doctest::Approx(100.0));
}

TEST_CASE("success rejects an empty trajectory") {
  CHECK_THROWS_AS(success(store::DemoSequence{}, scene_at(0.2)), ValidationError);
}
