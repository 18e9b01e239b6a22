#include "lfd/demo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lfd/errors.hpp"
#include "lfd/rng.hpp"

namespace lfd::demo {

namespace {
constexpr double kDown = -std::numbers::pi / 2.0;
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::approach: return "approach";
    case Phase::insert: return "insert";
    case Phase::sweep: return "sweep";
    case Phase::lift: return "lift";
    case Phase::withdraw: return "withdraw";
  }
  return "?";
}

std::size_t ScoopPlan::total_ticks() const {
  std::size_t n = 0;
  for (const auto& w : waypoints) n += w.dwell;
  return n;
}

const Waypoint& ScoopPlan::at_phase(Phase p) const {
  for (const auto& w : waypoints)
    if (w.phase == p) return w;
  throw std::out_of_range("plan has no " + to_string(p) + " waypoint");
}

ScoopPlan plan_scoop(const sim::SceneConfig& scene) {
  scene.validate();
  const double bx = scene.bowl_x;
  const double rim = scene.rim_y();
  const double surface = rim - scene.fill_depth();
  const double below = surface - 0.012;
  // the sweep digs toward the floor, clear of it by 14 mm
  const double floor = rim - scene.bowl_radius + 0.014;
  ScoopPlan plan;
  plan.waypoints = {
      {{bx - 0.02, rim + 0.05, kDown - 0.25}, 30, Phase::approach},
      {{bx - 0.02, below, kDown - 0.25}, 20, Phase::insert},
      {{bx + 0.025, std::min(floor, below), kDown + 0.35}, 20, Phase::sweep},
      {{bx + 0.01, rim + 0.07, kDown + 0.6}, 25, Phase::lift},
      {{bx - 0.02, rim + 0.12, kDown + 0.4}, 25, Phase::withdraw},
  };
  for (const auto& w : plan.waypoints) {
    const double d = std::hypot(w.pose.x - scene.base_x, w.pose.y - scene.base_y);
    if (d > scene.reach() - 1e-3)
      throw ValidationError("plan_scoop: " + to_string(w.phase) + " waypoint is out of reach for bowl at x=" +
                            std::to_string(bx));
  }
  return plan;
}

ScoopPlan jitter_plan(ScoopPlan plan, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& w : plan.waypoints) {
    w.pose.x += sigma * rng.normal();
    w.pose.y += sigma * rng.normal();
  }
  return plan;
}

PoseScript script_from_plan(const ScoopPlan& plan) {
  return [plan](std::uint64_t tick) -> std::optional<sim::Pose2D> {
    std::uint64_t acc = 0;
    for (const auto& w : plan.waypoints) {
      acc += w.dwell;
      if (tick < acc) return w.pose;
    }
    return std::nullopt;
  };
}

store::Frame capture_frame(const sim::SimState& state, const sim::SceneConfig& scene) {
  store::Frame f;
  f.image = sim::render(state, scene);
  f.joints.assign(state.joints.begin(), state.joints.end());
  for (int i = 0; i < 3; ++i) f.force[i] = static_cast<float>(state.contact[i]);
  f.material = static_cast<float>(state.material_on_spoon());
  return f;
}

store::DemoSequence record_demo(const sim::SceneConfig& scene, const PoseScript& script, const RecordOptions& opts) {
  if (opts.frame_period == 0) throw ValidationError("record_demo: frame_period must be positive");
  if (!script) throw ValidationError("record_demo: no source script");
  bilateral::Session session(scene, opts.gains, opts.hand, opts.dt);
  store::DemoSequence seq;
  seq.id = opts.id;
  seq.scene = scene;
  seq.source = opts.source;
  seq.seed = opts.seed;
  for (std::uint64_t t = 0;; ++t) {
    const auto target = script(t);
    if (!target) break;
    if (t % opts.frame_period == 0) seq.frames.push_back(capture_frame(session.sim_state(), scene));
    session.tick_toward(*target);
  }
  if (seq.frames.empty()) throw ValidationError("record_demo: script produced no ticks");
  return seq;
}

store::DemoSequence record_scripted_demo(const sim::SceneConfig& scene, const RecordOptions& opts,
                                         double jitter_sigma) {
  const auto plan = jitter_plan(plan_scoop(scene), jitter_sigma, opts.seed);
  return record_demo(scene, script_from_plan(plan), opts);
}

std::vector<sim::SceneConfig> scene_combos(double bowl_x) {
  std::vector<sim::SceneConfig> out;
  for (auto color : {sim::BowlColor::yellow, sim::BowlColor::green})
    for (auto fill : {sim::FillLevel::high, sim::FillLevel::low}) {
      sim::SceneConfig s;
      s.bowl_x = bowl_x;
      s.color = color;
      s.fill = fill;
      out.push_back(s);
    }
  return out;
}

void GridSpec::validate() const {
  if (positions < 1 || poses < 1 || rotations < 1) throw ValidationError("grid: G, A and R must all be >= 1");
  if (!(x_max >= x_min)) throw ValidationError("grid: x_max < x_min");
}

GridSet grid_augment(const GridSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  GridSet set;
  constexpr double kRot = 30.0 * std::numbers::pi / 180.0;
  constexpr std::size_t kMaxResamples = 10000;
  for (std::size_t g = 0; g < spec.positions; ++g) {
    const double t = spec.positions > 1 ? static_cast<double>(g) / static_cast<double>(spec.positions - 1) : 0.0;
    sim::SceneConfig scene;
    scene.bowl_x = spec.x_min + t * (spec.x_max - spec.x_min);
    scene.color = (g % 2 == 0) ? sim::BowlColor::yellow : sim::BowlColor::green;
    scene.fill = ((g / 2) % 2 == 0) ? sim::FillLevel::high : sim::FillLevel::low;
    scene.validate();
    for (std::size_t a = 0; a < spec.poses; ++a) {
      std::size_t tries = 0;
      for (;;) {
        if (++tries > kMaxResamples) throw ValidationError("grid_augment: no reachable pose found near x=" + std::to_string(scene.bowl_x));
        const double x = rng.uniform(scene.bowl_x - 0.13, scene.bowl_x + 0.13);
        const double y = rng.uniform(0.01, 0.30);
        const bool loaded = rng.uniform() < 0.5;
        const double load = loaded ? rng.uniform(0.2, 0.45) * scene.initial_volume() : 0.0;
        std::vector<GridSample> group;
        bool ok = true;
        for (std::size_t r = 0; r < spec.rotations && ok; ++r) {
          const double off = spec.rotations > 1 ? -kRot + 2.0 * kRot * static_cast<double>(r) / static_cast<double>(spec.rotations - 1) : 0.0;
          GridSample s{scene, {x, y, sim::wrap_angle(kDown + off)}, sim::home_joints(), load};
          if (!sim::ik_solve(s.joints, s.pose, scene)) {
            ok = false;
            break;
          }
          sim::SimState st = sim::initial_state(scene, s.joints);
          if (st.joints != s.joints || sim::contact_force(st, scene).in_contact) ok = false;
          group.push_back(std::move(s));
        }
        if (!ok) {
          ++set.resamples;
          continue;
        }
        for (auto& s : group) {
          sim::SimState st = sim::initial_state(scene, s.joints);
          const auto moved = std::min(st.bowl_quanta, static_cast<std::int64_t>(std::llround(s.spoon_load / sim::kVolumeQuantum)));
          st.bowl_quanta -= moved;
          st.spoon_quanta += moved;
          set.images.push_back(sim::render(st, scene));
          set.samples.push_back(std::move(s));
        }
        break;
      }
    }
  }
  return set;
}

nlohmann::json grid_metadata(const GridSet& set) {
  nlohmann::json j;
  j["resamples"] = set.resamples;
  j["samples"] = nlohmann::json::array();
  for (const auto& s : set.samples)
    j["samples"].push_back({{"scene", store::scene_to_json(s.scene)},
                            {"pose", {s.pose.x, s.pose.y, s.pose.theta}},
                            {"joints", s.joints},
                            {"spoon_load", s.spoon_load}});
  return j;
}

}  // namespace lfd::demo
