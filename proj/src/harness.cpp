#include "lfd/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "lfd/errors.hpp"
#include "lfd/rng.hpp"

namespace lfd::harness {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Scale s) { return s == Scale::desk ? "desk" : "paper"; }

Scale scale_from_string(const std::string& s) {
  if (s == "desk") return Scale::desk;
  if (s == "paper") return Scale::paper;
  throw ValidationError("unknown scale '" + s + "' (expected desk or paper)");
}

std::uint64_t stage_seed(std::uint64_t base, Stream stream, std::uint64_t index) {
  return derive_seed(derive_seed(base, static_cast<std::uint64_t>(stream)), index);
}

std::string position_label(std::size_t index) { return "s" + std::to_string(index + 1); }

namespace {

// {0,1,2,3,4,5} -> "A1-A6", {0,3} -> "A1A4"
std::string run_label(const std::string& prefix, std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  std::string out;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && idx[j + 1] == idx[j] + 1) ++j;
    out += prefix + std::to_string(idx[i] + 1);
    if (j > i + 1) out += "-" + prefix + std::to_string(idx[j] + 1);
    else if (j == i + 1) out += prefix + std::to_string(idx[j] + 1);
    i = j + 1;
  }
  return out;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first exception wins.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw store::FormatError(store::FormatError::Kind::missing_file, path.string() + ": cannot open");
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw store::FormatError(store::FormatError::Kind::bad_descriptor, path.string() + ": " + e.what());
  }
}

// Re-throws with the stage name in front, keeping the error class (and so the exit code).
template <class F>
auto in_stage(const std::string& stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const TrainingAbort& e) {
    throw TrainingAbort("stage " + stage + ": " + e.what());
  } catch (const EvaluationFailure& e) {
    throw EvaluationFailure("stage " + stage + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError("stage " + stage + ": " + e.what());
  } catch (const nn::ShapeError& e) {
    throw ValidationError("stage " + stage + ": " + e.what());
  } catch (const fs::filesystem_error& e) {
    throw ValidationError("stage " + stage + ": " + e.what());
  }
}

json grid_spec_json(const demo::GridSpec& g) {
  return {{"positions", g.positions}, {"poses", g.poses}, {"rotations", g.rotations}, {"x_min", g.x_min}, {"x_max", g.x_max}};
}

demo::GridSpec grid_spec_from_json(const json& j) {
  demo::GridSpec g;
  g.positions = j.at("positions").get<std::size_t>();
  g.poses = j.at("poses").get<std::size_t>();
  g.rotations = j.at("rotations").get<std::size_t>();
  g.x_min = j.at("x_min").get<double>();
  g.x_max = j.at("x_max").get<double>();
  return g;
}

json regime_json(const Regime& r) {
  return {{"label", r.label}, {"dcae_positions", r.dcae_positions}, {"grid", r.grid}, {"rnn_positions", r.rnn_positions},
          {"rows", r.rows}};
}

Regime regime_from_json(const json& j) {
  Regime r;
  r.label = j.at("label").get<std::string>();
  r.dcae_positions = j.at("dcae_positions").get<std::vector<std::size_t>>();
  r.grid = j.value("grid", false);
  r.rnn_positions = j.at("rnn_positions").get<std::vector<std::size_t>>();
  r.rows = j.at("rows").get<std::vector<std::size_t>>();
  return r;
}

}  // namespace

std::string Regime::dcae_key() const { return run_label("A", dcae_positions) + (grid ? "r" : ""); }
std::string Regime::rnn_key() const { return dcae_key() + "_" + run_label("s", rnn_positions); }

void ExperimentSpec::validate() const {
  if (experiment != "exp1" && experiment != "exp2" && experiment != "exp3")
    throw ValidationError("experiment must be exp1, exp2 or exp3, got '" + experiment + "'");
  if (positions.empty()) throw ValidationError("spec: no positions");
  if (demo_positions.empty()) throw ValidationError("spec: no demo positions");
  auto check_index = [&](std::size_t i, const char* what) {
    if (i >= positions.size())
      throw ValidationError(std::string("spec: ") + what + " index " + std::to_string(i) + " out of range");
  };
  for (auto p : demo_positions) check_index(p, "demo position");
  if (heldout_position) check_index(*heldout_position, "held-out position");
  if (sequences_per_combo == 0) throw ValidationError("spec: sequences_per_combo must be >= 1");
  if (test_sequences_per_combo == 0) throw ValidationError("spec: test_sequences_per_combo must be >= 1");
  if (frame_period == 0) throw ValidationError("spec: frame_period must be >= 1");
  if (dcae_frame_stride == 0) throw ValidationError("spec: dcae_frame_stride must be >= 1");
  if (rollouts == 0) throw ValidationError("spec: rollouts must be >= 1");
  if (rollout_steps == 0) throw ValidationError("spec: rollout_steps must be >= 1");
  if (jobs == 0) throw ValidationError("spec: jobs must be >= 1");
  if (regimes.empty()) throw ValidationError("spec: no regimes");
  std::set<std::string> labels;
  const std::set<std::size_t> collected(demo_positions.begin(), demo_positions.end());
  for (const auto& r : regimes) {
    if (!labels.insert(r.label).second) throw ValidationError("spec: duplicate regime label " + r.label);
    if (r.dcae_positions.empty() && !r.grid) throw ValidationError("spec: regime " + r.label + " has no autoencoder data");
    if (r.rnn_positions.empty()) throw ValidationError("spec: regime " + r.label + " has no recurrent-net data");
    for (auto p : r.dcae_positions)
      if (!collected.count(p)) throw ValidationError("spec: regime " + r.label + " uses uncollected position " + position_label(p));
    for (auto p : r.rnn_positions)
      if (!collected.count(p)) throw ValidationError("spec: regime " + r.label + " uses uncollected position " + position_label(p));
    for (auto p : r.rows) check_index(p, "row");
    if (heldout_position && std::count(r.dcae_positions.begin(), r.dcae_positions.end(), *heldout_position))
      throw ValidationError("spec: regime " + r.label + " trains on the held-out position");
  }
  if (baseline && !heldout_position) throw ValidationError("spec: a baseline needs a held-out position");
  grid.validate();
  dcae.validate();
  rnn.validate();
  if (rnn.feature_dim != dcae.feature_dim())
    throw ValidationError("spec: rnn feature_dim " + std::to_string(rnn.feature_dim) + " != dcae code size " +
                          std::to_string(dcae.feature_dim()));
}

ExperimentSpec default_spec(const std::string& experiment, Scale scale, bool full_table) {
  ExperimentSpec s;
  s.experiment = experiment;
  s.scale = scale;
  s.positions = sim::default_positions();
  if (scale == Scale::paper) {
    s.rnn.iterations = 3000;
    s.grid = {100, 45, 3};
  }
  const auto first_six = iota(6);
  if (experiment == "exp1") {
    s.demo_positions = {0};
    s.regimes = {{"A1_s1", {0}, false, {0}, {0}}};
  } else if (experiment == "exp2") {
    s.demo_positions = iota(7);
    s.dcae_frame_stride = 2;
    s.heldout_position = 6;
    s.regimes = {{"A1-A6_s1-s6", first_six, false, first_six, {6, 0}}};
  } else if (experiment == "exp3") {
    s.demo_positions = iota(7);
    s.dcae_frame_stride = 2;
    s.heldout_position = 6;
    s.regimes = {{"A1-A7r_s1", first_six, true, {0}, {0}},
                 {"A1-A7r_s1s4", first_six, true, {0, 3}, {0, 3}},
                 {"A1-A7r_s4", first_six, true, {3}, {3}}};
    if (full_table) {
      s.regimes.push_back({"A1_s1", {0}, false, {0}, {0}});
      s.regimes.push_back({"A4_s4", {3}, false, {3}, {3}});
      s.regimes.push_back({"A1A4_s1s4", {0, 3}, false, {0, 3}, {0, 3}});
    }
  } else {
    throw ValidationError("unknown experiment '" + experiment + "' (expected exp1, exp2 or exp3)");
  }
  return s;
}

json spec_to_json(const ExperimentSpec& s) {
  json regimes = json::array();
  for (const auto& r : s.regimes) regimes.push_back(regime_json(r));
  return {{"experiment", s.experiment},
          {"scale", to_string(s.scale)},
          {"seed", s.seed},
          {"jobs", s.jobs},
          {"positions", s.positions},
          {"demo_positions", s.demo_positions},
          {"sequences_per_combo", s.sequences_per_combo},
          {"test_sequences_per_combo", s.test_sequences_per_combo},
          {"frame_period", s.frame_period},
          {"dcae_frame_stride", s.dcae_frame_stride},
          {"jitter_sigma", s.jitter_sigma},
          {"rollouts", s.rollouts},
          {"rollout_steps", s.rollout_steps},
          {"heldout_position", s.heldout_position ? json(*s.heldout_position) : json(nullptr)},
          {"grid", grid_spec_json(s.grid)},
          {"dcae", s.dcae},
          {"rnn", s.rnn},
          {"regimes", regimes},
          {"baseline", s.baseline ? json(s.baseline->string()) : json(nullptr)}};
}

ExperimentSpec spec_from_json(const json& j, ExperimentSpec base) {
  if (!j.is_object()) throw ValidationError("config: expected a json object");
  json merged = spec_to_json(base);
  // derived sizes are recomputed unless the file states them
  merged["rnn"].erase("input_size");
  merged["rnn"].erase("output_size");
  for (const auto& [key, value] : j.items()) {
    if (!merged.contains(key)) throw ValidationError("config: unknown key '" + key + "'");
    if (merged[key].is_object() && value.is_object()) merged[key].merge_patch(value);
    else merged[key] = value;
  }
  ExperimentSpec s;
  try {
    s.experiment = merged.at("experiment").get<std::string>();
    s.scale = scale_from_string(merged.at("scale").get<std::string>());
    s.seed = merged.at("seed").get<std::uint64_t>();
    s.jobs = merged.at("jobs").get<std::size_t>();
    s.positions = merged.at("positions").get<std::vector<double>>();
    s.demo_positions = merged.at("demo_positions").get<std::vector<std::size_t>>();
    s.sequences_per_combo = merged.at("sequences_per_combo").get<std::size_t>();
    s.test_sequences_per_combo = merged.at("test_sequences_per_combo").get<std::size_t>();
    s.frame_period = merged.at("frame_period").get<std::size_t>();
    s.dcae_frame_stride = merged.at("dcae_frame_stride").get<std::size_t>();
    s.jitter_sigma = merged.at("jitter_sigma").get<double>();
    s.rollouts = merged.at("rollouts").get<std::size_t>();
    s.rollout_steps = merged.at("rollout_steps").get<std::size_t>();
    if (!merged.at("heldout_position").is_null()) s.heldout_position = merged["heldout_position"].get<std::size_t>();
    s.grid = grid_spec_from_json(merged.at("grid"));
    s.dcae = merged.at("dcae").get<dcae::DcaeConfig>();
    s.rnn = merged.at("rnn").get<rnn::RnnConfig>();
    for (const auto& r : merged.at("regimes")) s.regimes.push_back(regime_from_json(r));
    if (!merged.at("baseline").is_null()) s.baseline = merged["baseline"].get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return s;
}

std::string config_hash(const json& j) {
  const auto text = j.dump();
  return store::content_hash(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---- building blocks ----

CollectResult collect_demos(const std::vector<double>& positions, const std::vector<std::size_t>& indices,
                            std::size_t per_combo, std::size_t frame_period, double jitter_sigma, std::uint64_t seed,
                            std::size_t jobs, const std::string& id_prefix) {
  struct Job {
    sim::SceneConfig scene;
    std::string id;
    std::uint64_t seed;
  };
  std::vector<Job> plan;
  for (auto p : indices) {
    if (p >= positions.size()) throw ValidationError("collect: position index " + std::to_string(p) + " out of range");
    const auto combos = demo::scene_combos(positions[p]);
    for (std::size_t c = 0; c < combos.size(); ++c)
      for (std::size_t k = 0; k < per_combo; ++k) {
        const auto& sc = combos[c];
        // the seed index depends only on (position, combo, k), not on which others are collected
        const std::uint64_t index = 100000 * p + 1000 * c + k;
        plan.push_back({sc,
                        id_prefix + position_label(p) + "_" + sim::to_string(sc.color) + "_" + sim::to_string(sc.fill) +
                            "_" + std::to_string(k),
                        derive_seed(seed, index)});
      }
  }
  std::vector<std::optional<store::DemoSequence>> out(plan.size());
  std::vector<std::string> errors(plan.size());
  parallel_for(plan.size(), jobs, [&](std::size_t i) {
    try {
      demo::RecordOptions o;
      o.seed = plan[i].seed;
      o.id = plan[i].id;
      o.frame_period = frame_period;
      out[i] = demo::record_scripted_demo(plan[i].scene, o, jitter_sigma);
    } catch (const std::exception& e) {
      errors[i] = plan[i].id + ": " + e.what();
    }
  });
  CollectResult res;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (out[i]) res.dataset.sequences.push_back(std::move(*out[i]));
    else res.failures.push_back(errors[i]);
  }
  return res;
}

void save_grid(const demo::GridSet& grid, const fs::path& dir) {
  if (grid.images.empty()) throw ValidationError("save_grid: empty grid");
  store::Dataset ds;
  store::DemoSequence seq;
  seq.id = "grid";
  seq.source = "grid";
  seq.scene = grid.samples.front().scene;
  for (std::size_t i = 0; i < grid.images.size(); ++i) {
    store::Frame f;
    f.image = grid.images[i];
    for (double q : grid.samples[i].joints) f.joints.push_back(static_cast<float>(q));
    f.material = static_cast<float>(grid.samples[i].spoon_load);
    seq.frames.push_back(std::move(f));
  }
  ds.sequences.push_back(std::move(seq));
  store::save_dataset(ds, dir);
  write_json(dir / "grid.json", demo::grid_metadata(grid));
}

std::vector<dcae::Image> load_grid_images(const fs::path& dir) {
  const auto ds = store::load_dataset(dir);
  std::vector<dcae::Image> out;
  for (const auto& s : ds.sequences)
    for (const auto& f : s.frames) out.push_back(f.image);
  return out;
}

std::vector<dcae::Image> frames_of(std::span<const store::DemoSequence> seqs, std::size_t stride) {
  if (stride == 0) throw ValidationError("frames_of: stride must be >= 1");
  std::vector<dcae::Image> out;
  for (const auto& s : seqs)
    for (std::size_t i = 0; i < s.frames.size(); i += stride) out.push_back(s.frames[i].image);
  return out;
}

double deepest_tip_y(const store::DemoSequence& trajectory) {
  double y = std::numeric_limits<double>::infinity();
  for (const auto& f : trajectory.frames) {
    const std::vector<double> q(f.joints.begin(), f.joints.end());
    y = std::min(y, sim::spoon_pose(q, trajectory.scene).y);
  }
  return y;
}

json fill_discrimination(const std::vector<RolloutSummary>& rollouts) {
  double sum[2] = {0, 0};
  std::size_t n[2] = {0, 0};
  for (const auto& r : rollouts) {
    const int k = r.scene.fill == sim::FillLevel::high ? 0 : 1;
    sum[k] += r.deepest_tip_y;
    ++n[k];
  }
  json j{{"high_trials", n[0]}, {"low_trials", n[1]}};
  if (n[0] == 0 || n[1] == 0) {
    j["discriminates"] = nullptr;
    j["note"] = "needs rollouts at both fill levels";
    return j;
  }
  // how much deeper the scripted planner inserts into a low fill
  sim::SceneConfig high = rollouts.front().scene, low = high;
  high.fill = sim::FillLevel::high;
  low.fill = sim::FillLevel::low;
  const double scripted_gap = demo::plan_scoop(high).at_phase(demo::Phase::insert).pose.y -
                              demo::plan_scoop(low).at_phase(demo::Phase::insert).pose.y;
  const double high_y = sum[0] / static_cast<double>(n[0]), low_y = sum[1] / static_cast<double>(n[1]);
  j["high_deepest_y"] = high_y;
  j["low_deepest_y"] = low_y;
  j["gap"] = high_y - low_y;
  j["scripted_gap"] = scripted_gap;
  j["discriminates"] = (high_y - low_y) >= 0.5 * scripted_gap;
  return j;
}

json rollout_summary_json(const RolloutSummary& r) {
  return {{"bowl_x", r.scene.bowl_x},
          {"color", sim::to_string(r.scene.color)},
          {"fill", sim::to_string(r.scene.fill)},
          {"seed", r.seed},
          {"success", r.report.success},
          {"scooped_fraction", r.report.scooped_fraction},
          {"report", r.report},
          {"deepest_tip_y", r.deepest_tip_y},
          {"trajectory", r.trajectory}};
}

std::string CellResult::symbol() const { return 2 * successes > trials ? "○" : "×"; }

// ---- reproduction ----

namespace {

constexpr const char* kNotRun = "not run";

const std::vector<std::string>& standard_columns() {
  static const std::vector<std::string> cols{"A1-A7r_s1", "A1-A7r_s1s4", "A1-A7r_s4", "A1_s1", "A4_s4", "A1A4_s1s4"};
  return cols;
}

std::vector<const store::DemoSequence*> at_positions(const store::Dataset& ds, const std::vector<double>& positions,
                                                     const std::vector<std::size_t>& idx) {
  std::vector<const store::DemoSequence*> out;
  for (const auto& s : ds.sequences)
    for (auto p : idx)
      if (s.scene.bowl_x == positions[p]) out.push_back(&s);
  return out;
}

std::vector<store::DemoSequence> copy_of(const std::vector<const store::DemoSequence*>& v) {
  std::vector<store::DemoSequence> out;
  out.reserve(v.size());
  for (const auto* s : v) out.push_back(*s);
  return out;
}

std::vector<dcae::Image> images_of(const std::vector<const store::DemoSequence*>& v, std::size_t stride) {
  std::vector<dcae::Image> out;
  for (const auto* s : v)
    for (std::size_t i = 0; i < s->frames.size(); i += stride) out.push_back(s->frames[i].image);
  return out;
}

std::string file_hash(const fs::path& p) { return store::content_hash(store::read_file(p)); }

// Frame-weighted test error over the given positions; nullopt when none were tested.
std::optional<double> pooled_mse(const json& per_position, const std::vector<std::size_t>& idx) {
  double sum = 0.0;
  std::size_t n = 0;
  for (auto p : idx) {
    const auto label = position_label(p);
    if (!per_position.contains(label)) continue;
    sum += per_position[label]["mse"].get<double>() * per_position[label]["frames"].get<double>();
    n += per_position[label]["frames"].get<std::size_t>();
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace

json reproduce(const ExperimentSpec& spec, const fs::path& out, const ProgressFn& progress_fn) {
  spec.validate();
  const auto t_all = std::chrono::steady_clock::now();
  auto progress = [&](const std::string& msg) {
    if (progress_fn) progress_fn(msg);
  };
  fs::create_directories(out);
  const json spec_json = spec_to_json(spec);
  const auto hash = config_hash(spec_json);
  write_json(out / "spec.json", spec_json);

  json report;
  report["experiment"] = spec.experiment;
  report["scale"] = to_string(spec.scale);
  report["config_hash"] = hash;
  report["seeds"] = {{"base", spec.seed},
                     {"demos", derive_seed(spec.seed, static_cast<std::uint64_t>(Stream::demos))},
                     {"test_demos", derive_seed(spec.seed, static_cast<std::uint64_t>(Stream::test_demos))},
                     {"grid", stage_seed(spec.seed, Stream::grid)},
                     {"dcae_init", stage_seed(spec.seed, Stream::dcae_init)},
                     {"dcae_train", stage_seed(spec.seed, Stream::dcae_train)},
                     {"rnn_init", stage_seed(spec.seed, Stream::rnn_init)},
                     {"rnn_train", stage_seed(spec.seed, Stream::rnn_train)},
                     {"rollout_stream", derive_seed(spec.seed, static_cast<std::uint64_t>(Stream::rollout))}};
  json timing;

  // -- collect
  auto t0 = std::chrono::steady_clock::now();
  store::Dataset demos, tests;
  in_stage("collect", [&] {
    progress("collect: " + std::to_string(spec.demo_positions.size() * 4 * spec.sequences_per_combo) + " demos");
    auto checked = [](CollectResult r) {
      if (!r.failures.empty()) {
        std::string msg = std::to_string(r.failures.size()) + " sequence(s) failed:";
        for (const auto& f : r.failures) msg += "\n  " + f;
        throw ValidationError(msg);
      }
      return std::move(r.dataset);
    };
    demos = checked(collect_demos(spec.positions, spec.demo_positions, spec.sequences_per_combo, spec.frame_period,
                                  spec.jitter_sigma, derive_seed(spec.seed, static_cast<std::uint64_t>(Stream::demos)),
                                  spec.jobs, ""));
    tests = checked(collect_demos(spec.positions, spec.demo_positions, spec.test_sequences_per_combo, spec.frame_period,
                                  spec.jitter_sigma, derive_seed(spec.seed, static_cast<std::uint64_t>(Stream::test_demos)),
                                  spec.jobs, "test_"));
    store::save_dataset(demos, out / "data" / "demos");
    store::save_dataset(tests, out / "data" / "test");
  });
  timing["collect"] = seconds_since(t0);
  report["datasets"] = {{"demos", {{"path", "data/demos"}, {"sequences", demos.sequences.size()}, {"frames", demos.frame_count()}}},
                        {"test", {{"path", "data/test"}, {"sequences", tests.sequences.size()}, {"frames", tests.frame_count()}}}};

  // -- grid
  std::vector<dcae::Image> grid_images;
  const bool need_grid = std::any_of(spec.regimes.begin(), spec.regimes.end(), [](const Regime& r) { return r.grid; });
  if (need_grid) {
    t0 = std::chrono::steady_clock::now();
    in_stage("grid", [&] {
      progress("grid: " + std::to_string(spec.grid.image_count()) + " images");
      auto grid = demo::grid_augment(spec.grid, stage_seed(spec.seed, Stream::grid));
      save_grid(grid, out / "data" / "grid");
      grid_images = std::move(grid.images);
    });
    timing["grid"] = seconds_since(t0);
    report["datasets"]["grid"] = {{"path", "data/grid"}, {"images", grid_images.size()}};
  }

  // -- autoencoders
  struct DcaeJob {
    std::vector<std::size_t> positions;
    bool grid;
  };
  std::map<std::string, DcaeJob> dcae_jobs;
  for (const auto& r : spec.regimes) dcae_jobs.emplace(r.dcae_key(), DcaeJob{r.dcae_positions, r.grid});
  // without a stored baseline, train the no-grid counterpart here
  std::string baseline_key;
  if (spec.experiment == "exp3" && spec.heldout_position) {
    for (const auto& r : spec.regimes)
      if (r.grid) {
        baseline_key = run_label("A", r.dcae_positions);
        break;
      }
    if (!baseline_key.empty() && !spec.baseline) {
      for (const auto& r : spec.regimes)
        if (r.grid) dcae_jobs.emplace(baseline_key, DcaeJob{r.dcae_positions, false});
    }
  }

  std::vector<std::size_t> all_test_positions = spec.demo_positions;
  std::map<std::string, store::ModelBundle> dcaes;
  json recon = json::object();
  for (const auto& [key, job] : dcae_jobs) {
    t0 = std::chrono::steady_clock::now();
    in_stage("train-dcae " + key, [&] {
      auto images = images_of(at_positions(demos, spec.positions, job.positions), spec.dcae_frame_stride);
      if (job.grid) images.insert(images.end(), grid_images.begin(), grid_images.end());
      progress("train-dcae " + key + ": " + std::to_string(images.size()) + " images, " + std::to_string(spec.dcae.epochs) +
               " epochs");
      auto res = dcae::train_dcae(dcae::build_dcae(spec.dcae, stage_seed(spec.seed, Stream::dcae_init)), images, spec.dcae,
                                  stage_seed(spec.seed, Stream::dcae_train));
      const auto model_path = out / "models" / ("dcae_" + key + ".lfdm");
      fs::create_directories(model_path.parent_path());
      store::save_model(res.model, model_path);
      write_json(out / "models" / ("dcae_" + key + ".loss.json"), res.loss_history);

      json per_position = json::object();
      for (auto p : all_test_positions) {
        const auto imgs = images_of(at_positions(tests, spec.positions, {p}), 1);
        if (imgs.empty()) continue;
        per_position[position_label(p)] = {{"mse", dcae::mean_recon_error(res.model, imgs)}, {"frames", imgs.size()}};
      }
      std::vector<std::size_t> unseen;
      for (auto p : all_test_positions)
        if (!std::count(job.positions.begin(), job.positions.end(), p)) unseen.push_back(p);
      const auto trained = pooled_mse(per_position, job.positions);
      const auto heldout = pooled_mse(per_position, unseen);
      recon[key] = {{"positions", job.positions},
                    {"grid", job.grid},
                    {"train_images", images.size()},
                    {"train_mse", dcae::mean_recon_error(res.model, images)},
                    {"test_mse", trained ? json(*trained) : json(nullptr)},
                    {"heldout_positions", unseen},
                    {"heldout_mse", heldout ? json(*heldout) : json(nullptr)},
                    {"per_position", per_position},
                    {"final_loss", res.loss_history.back()},
                    {"epochs", res.loss_history.size()},
                    {"model", "models/dcae_" + key + ".lfdm"},
                    {"model_hash", file_hash(model_path)},
                    {"seconds", seconds_since(t0)}};
      dcaes.emplace(key, std::move(res.model));
    });
    timing["train-dcae " + key] = seconds_since(t0);
  }
  report["recon"] = recon;

  // -- held-out reduction against the baseline autoencoder
  if (!baseline_key.empty() && spec.heldout_position) {
    json aug;
    double base_mse = 0.0;
    if (spec.baseline) {
      const auto base = in_stage("baseline", [&] { return read_json(*spec.baseline / "report.json"); });
      const auto& bj = base;
      if (!bj.contains("recon") || !bj["recon"].contains(baseline_key))
        throw ValidationError("stage baseline: " + spec.baseline->string() + " has no autoencoder " + baseline_key);
      const auto base_spec = read_json(*spec.baseline / "spec.json");
      for (const char* k : {"seed", "positions", "sequences_per_combo", "test_sequences_per_combo", "frame_period",
                            "dcae_frame_stride", "jitter_sigma", "dcae", "heldout_position"})
        if (base_spec.at(k) != spec_json.at(k))
          throw ValidationError(std::string("stage baseline: '") + k + "' differs from the baseline run");
      base_mse = bj["recon"][baseline_key]["heldout_mse"].get<double>();
      aug["baseline_run"] = spec.baseline->string();
      aug["baseline_config_hash"] = bj["config_hash"];
      aug["baseline_model_hash"] = bj["recon"][baseline_key]["model_hash"];
    } else {
      base_mse = recon[baseline_key]["heldout_mse"].get<double>();
      aug["baseline_run"] = "this run";
    }
    for (const auto& r : spec.regimes)
      if (r.grid) {
        const double mse = recon[r.dcae_key()]["heldout_mse"].get<double>();
        aug["baseline_heldout_mse"] = base_mse;
        aug["augmented_heldout_mse"] = mse;
        aug["reduction"] = 1.0 - mse / base_mse;
        aug["heldout_position"] = position_label(*spec.heldout_position);
        aug["grid_images"] = grid_images.size();
        break;
      }
    report["augmentation"] = aug;
  }
  grid_images.clear();
  grid_images.shrink_to_fit();

  // -- recurrent nets
  std::map<std::string, store::ModelBundle> rnns;
  json rnn_info = json::object();
  for (const auto& r : spec.regimes) {
    const auto key = r.rnn_key();
    if (rnns.count(key)) continue;
    t0 = std::chrono::steady_clock::now();
    in_stage("train-rnn " + key, [&] {
      const auto seqs = copy_of(at_positions(demos, spec.positions, r.rnn_positions));
      progress("train-rnn " + key + ": " + std::to_string(seqs.size()) + " sequences, " +
               std::to_string(spec.rnn.iterations) + " iterations");
      auto res = rnn::train_rnn(rnn::build_rnn(spec.rnn, stage_seed(spec.seed, Stream::rnn_init)), dcaes.at(r.dcae_key()),
                                seqs, spec.rnn, stage_seed(spec.seed, Stream::rnn_train));
      const auto model_path = out / "models" / ("rnn_" + key + ".lfdm");
      store::save_model(res.model, model_path);
      write_json(out / "models" / ("rnn_" + key + ".loss.json"), res.loss_history);
      rnn_info[key] = {{"sequences", seqs.size()},
                       {"skipped_sequences", res.skipped_sequences},
                       {"final_loss", res.loss_history.back()},
                       {"iterations", res.loss_history.size()},
                       {"model", "models/rnn_" + key + ".lfdm"},
                       {"model_hash", file_hash(model_path)},
                       {"seconds", seconds_since(t0)}};
      rnns.emplace(key, std::move(res.model));
    });
    timing["train-rnn " + key] = seconds_since(t0);
  }
  report["rnn"] = rnn_info;

  // -- rollouts
  std::vector<std::string> columns = standard_columns();
  std::vector<std::size_t> row_idx{0, 3};
  for (const auto& r : spec.regimes) {
    if (std::find(columns.begin(), columns.end(), r.label) == columns.end()) columns.push_back(r.label);
    for (auto p : r.rows)
      if (std::find(row_idx.begin(), row_idx.end(), p) == row_idx.end()) row_idx.push_back(p);
  }
  std::sort(row_idx.begin(), row_idx.end());
  json cells = json::object();
  for (const auto& c : columns) {
    cells[c] = json::object();
    for (auto p : row_idx) cells[c][position_label(p)] = {{"symbol", kNotRun}};
  }
  json legend = json::object();
  for (const auto& r : spec.regimes) {
    legend[r.label] = {{"dcae", r.dcae_key()}, {"rnn", run_label("s", r.rnn_positions)}};
    for (auto p : r.rows) {
      const auto row = position_label(p);
      t0 = std::chrono::steady_clock::now();
      const auto dir_rel = fs::path("rollouts") / r.label / row;
      CellResult cell;
      cell.trials = spec.rollouts;
      cell.rollouts.resize(spec.rollouts);
      store::Dataset trajs;
      trajs.sequences.resize(spec.rollouts);
      in_stage("rollout " + r.label + " " + row, [&] {
        progress("rollout " + r.label + " at " + row + ": " + std::to_string(spec.rollouts) + " trials");
        const auto combos = demo::scene_combos(spec.positions[p]);
        const auto& rnn_model = rnns.at(r.rnn_key());
        const auto& dcae_model = dcaes.at(r.dcae_key());
        parallel_for(spec.rollouts, spec.jobs, [&](std::size_t k) {
          const auto scene = combos[k % combos.size()];
          const auto seed = stage_seed(spec.seed, Stream::rollout, k);
          auto res = rnn::rollout(rnn_model, dcae_model, scene, spec.rollout_steps, seed);
          res.trajectory.id = row + "_" + std::to_string(k);
          auto& s = cell.rollouts[k];
          s.scene = scene;
          s.seed = seed;
          s.report = res.report;
          s.deepest_tip_y = deepest_tip_y(res.trajectory);
          s.trajectory = (dir_rel / ("seq_" + std::string(k < 10 ? "000" : k < 100 ? "00" : k < 1000 ? "0" : "") +
                                     std::to_string(k) + ".lfds"))
                             .generic_string();
          trajs.sequences[k] = std::move(res.trajectory);
        });
        const auto manifest = store::save_dataset(trajs, out / dir_rel);
        for (std::size_t k = 0; k < spec.rollouts; ++k)
          cell.rollouts[k].trajectory = (dir_rel / manifest["sequences"][k]["filename"].get<std::string>()).generic_string();
      });
      json trials = json::array();
      for (const auto& s : cell.rollouts) {
        if (s.report.success) ++cell.successes;
        trials.push_back(rollout_summary_json(s));
      }
      cells[r.label][row] = {{"symbol", cell.symbol()},
                             {"successes", cell.successes},
                             {"trials", cell.trials},
                             {"rollouts", trials},
                             {"trajectories", dir_rel.generic_string()},
                             {"fill_discrimination", fill_discrimination(cell.rollouts)}};
      timing["rollout " + r.label + " " + row] = seconds_since(t0);
    }
  }
  json rows = json::array();
  for (auto p : row_idx) rows.push_back(position_label(p));
  report["matrix"] = {{"columns", columns}, {"rows", rows}, {"cells", cells}, {"legend", legend}};
  timing["total"] = seconds_since(t_all);
  report["seconds"] = timing;

  write_json(out / "report.json", report);
  std::ofstream(out / "report.txt") << render_table(report);
  return report;
}

std::string render_table(const json& report) {
  std::ostringstream os;
  os << report.value("experiment", "?") << " (" << report.value("scale", "?") << " scale), config "
     << report.value("config_hash", "?") << ", seed " << report["seeds"].value("base", 0ull) << "\n\n";
  const auto& m = report.at("matrix");
  std::vector<std::string> columns = m.at("columns").get<std::vector<std::string>>();
  std::vector<std::size_t> widths;
  std::size_t row_w = 8;
  for (const auto& c : columns) widths.push_back(std::max<std::size_t>(c.size(), 9));
  auto pad = [](const std::string& s, std::size_t w) {
    // count code points so the circle and cross line up
    std::size_t n = 0;
    for (unsigned char ch : s)
      if ((ch & 0xC0) != 0x80) ++n;
    return s + std::string(w > n ? w - n : 0, ' ');
  };
  os << pad("", row_w);
  for (std::size_t i = 0; i < columns.size(); ++i) os << " | " << pad(columns[i], widths[i]);
  os << "\n";
  for (const auto& row : m.at("rows")) {
    const auto r = row.get<std::string>();
    os << pad(r, row_w);
    for (std::size_t i = 0; i < columns.size(); ++i) {
      const auto& cell = m["cells"][columns[i]][r];
      std::string text = cell["symbol"].get<std::string>();
      if (cell.contains("successes"))
        text += " " + std::to_string(cell["successes"].get<std::size_t>()) + "/" + std::to_string(cell["trials"].get<std::size_t>());
      os << " | " << pad(text, widths[i]);
    }
    os << "\n";
  }
  if (m.contains("legend") && !m["legend"].empty()) {
    os << "\nregimes (autoencoder data / recurrent-net data):\n";
    for (const auto& [label, l] : m["legend"].items())
      os << "  " << label << ": " << l["dcae"].get<std::string>() << " / " << l["rnn"].get<std::string>() << "\n";
  }
  if (report.contains("recon")) {
    os << "\nreconstruction mse:\n";
    for (const auto& [key, r] : report["recon"].items()) {
      os << "  " << key << ": train " << r["train_mse"].get<double>();
      if (!r["test_mse"].is_null()) os << ", test (trained positions) " << r["test_mse"].get<double>();
      if (!r["heldout_mse"].is_null()) os << ", held-out positions " << r["heldout_mse"].get<double>();
      os << "\n";
    }
  }
  if (report.contains("augmentation")) {
    const auto& a = report["augmentation"];
    if (a.contains("reduction"))
      os << "\ngrid augmentation at " << a["heldout_position"].get<std::string>() << ": held-out mse "
         << a["baseline_heldout_mse"].get<double>() << " -> " << a["augmented_heldout_mse"].get<double>() << " ("
         << 100.0 * a["reduction"].get<double>() << "% lower)\n";
  }
  for (const auto& [col, rows] : m["cells"].items())
    for (const auto& [row, cell] : rows.items())
      if (cell.contains("fill_discrimination") && !cell["fill_discrimination"]["discriminates"].is_null())
        os << (cell["fill_discrimination"]["discriminates"].get<bool>() ? "" : "note: ") << col << " at " << row
           << (cell["fill_discrimination"]["discriminates"].get<bool>() ? " separates" : " does not separate")
           << " high and low fills (depth gap " << cell["fill_discrimination"]["gap"].get<double>() << " m)\n";
  return os.str();
}

}  // namespace lfd::harness
