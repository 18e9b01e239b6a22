#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "lfd/errors.hpp"
#include "lfd/harness.hpp"

using namespace lfd;
using namespace lfd::harness;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("lfd_harness_" + name)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ExperimentSpec tiny(const std::string& exp) {
  auto s = default_spec(exp, Scale::desk);
  s.sequences_per_combo = 1;
  s.rollouts = 2;
  s.rollout_steps = 6;
  s.dcae_frame_stride = 6;
  s.dcae.epochs = 1;
  s.rnn.iterations = 4;
  s.grid = {3, 2, 1};
  return s;
}

json load(const fs::path& p) {
  std::ifstream f(p);
  return json::parse(f);
}

RolloutSummary summary(sim::FillLevel fill, double y) {
  RolloutSummary r;
  r.scene.bowl_x = 0.41;
  r.scene.fill = fill;
  r.deepest_tip_y = y;
  return r;
}

}  // namespace

TEST_CASE("experiment defaults") {
  const auto e1 = default_spec("exp1", Scale::desk);
  CHECK(e1.demo_positions.size() * 4 * e1.sequences_per_combo == 20);
  CHECK(e1.rnn.iterations == 500);
  CHECK(e1.dcae.epochs == 50);
  const auto e2 = default_spec("exp2", Scale::desk);
  CHECK(e2.demo_positions.size() * 4 * e2.sequences_per_combo == 140);
  CHECK(e2.heldout_position == 6u);
  const auto e3 = default_spec("exp3", Scale::desk);
  CHECK(e3.grid.image_count() == 1125);
  CHECK(e3.regimes.size() == 3);
  CHECK(default_spec("exp3", Scale::desk, true).regimes.size() == 6);
  const auto p3 = default_spec("exp3", Scale::paper);
  CHECK(p3.grid.image_count() == 13500);
  CHECK(p3.rnn.iterations == 3000);
  CHECK(default_spec("exp2", Scale::paper).demo_positions.size() * 4 * 5 == 140);
  for (const auto& e : {"exp1", "exp2", "exp3"}) CHECK_NOTHROW(default_spec(e, Scale::desk).validate());
  CHECK_THROWS_AS(default_spec("exp4", Scale::desk), ValidationError);
  CHECK_THROWS_AS(scale_from_string("huge"), ValidationError);
}

TEST_CASE("regime keys compress position runs") {
  CHECK(Regime{"x", {0, 1, 2, 3, 4, 5}, false, {0}, {0}}.dcae_key() == "A1-A6");
  CHECK(Regime{"x", {0, 1, 2, 3, 4, 5}, true, {0, 3}, {0}}.rnn_key() == "A1-A6r_s1s4");
  CHECK(Regime{"x", {3, 0}, false, {0, 1}, {0}}.rnn_key() == "A1A4_s1s2");
  CHECK(position_label(6) == "s7");
}

TEST_CASE("spec validation") {
  auto s = default_spec("exp2", Scale::desk);
  s.regimes[0].dcae_positions.push_back(6);
  CHECK_THROWS_AS(s.validate(), ValidationError);  // trains on the held-out position
  auto f = default_spec("exp1", Scale::desk);
  f.rnn.feature_dim = 7;
  CHECK_THROWS_AS(f.validate(), ValidationError);
  auto u = default_spec("exp1", Scale::desk);
  u.regimes[0].rnn_positions = {4};
  CHECK_THROWS_AS(u.validate(), ValidationError);  // not collected
  auto d = default_spec("exp1", Scale::desk);
  d.regimes.push_back(d.regimes[0]);
  CHECK_THROWS_AS(d.validate(), ValidationError);
}

TEST_CASE("config overlays keep unspecified fields and reject unknown keys") {
  const auto base = default_spec("exp1", Scale::desk);
  const auto s = spec_from_json({{"seed", 42}, {"dcae", {{"epochs", 3}}}, {"rnn", {{"adam", {{"lr", 0.01}}}}}}, base);
  CHECK(s.seed == 42);
  CHECK(s.dcae.epochs == 3);
  CHECK(s.dcae.conv_filters == base.dcae.conv_filters);
  CHECK(s.rnn.adam.lr == 0.01);
  CHECK(s.rnn.iterations == base.rnn.iterations);
  CHECK_THROWS_AS(spec_from_json({{"epochs", 3}}, base), ValidationError);
  CHECK_THROWS_AS(spec_from_json({{"seed", "x"}}, base), ValidationError);
  CHECK_THROWS_AS(spec_from_json(json::array(), base), ValidationError);

  // a full round trip is the identity
  const auto e3 = default_spec("exp3", Scale::paper, true);
  CHECK(spec_to_json(spec_from_json(spec_to_json(e3), base)) == spec_to_json(e3));
  CHECK(config_hash(spec_to_json(e3)) == config_hash(spec_to_json(e3)));
  CHECK(config_hash(spec_to_json(e3)) != config_hash(spec_to_json(default_spec("exp3", Scale::desk, true))));
}

TEST_CASE("the exp2 manifest holds 140 sequences") {
  const auto s = default_spec("exp2", Scale::desk);
  const auto r = collect_demos(s.positions, s.demo_positions, s.sequences_per_combo, 6, s.jitter_sigma, 1, 1, "");
  CHECK(r.failures.empty());
  REQUIRE(r.dataset.sequences.size() == 140);
  std::set<std::string> ids;
  std::map<double, int> per_x;
  for (const auto& seq : r.dataset.sequences) {
    ids.insert(seq.id);
    ++per_x[seq.scene.bowl_x];
  }
  CHECK(ids.size() == 140);
  CHECK(per_x.size() == 7);
  for (const auto& [x, n] : per_x) CHECK(n == 20);
}

TEST_CASE("collection seeds depend on the position, not on the job count or the other positions") {
  const auto xs = sim::default_positions();
  const auto a = collect_demos(xs, {0, 3}, 1, 6, 0.005, 9, 1, "");
  const auto b = collect_demos(xs, {0, 3}, 1, 6, 0.005, 9, 3, "");
  const auto c = collect_demos(xs, {3}, 1, 6, 0.005, 9, 1, "");
  REQUIRE(a.dataset.sequences.size() == 8);
  REQUIRE(b.dataset.sequences.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(same_content(a.dataset.sequences[i], b.dataset.sequences[i]));
  for (std::size_t i = 0; i < 4; ++i) CHECK(same_content(c.dataset.sequences[i], a.dataset.sequences[4 + i]));
  CHECK(c.dataset.sequences[0].id.starts_with("s4_"));
  const auto d = collect_demos(xs, {3}, 1, 6, 0.005, 10, 1, "");
  CHECK_FALSE(d.dataset.sequences[0].frames == c.dataset.sequences[0].frames);
}

TEST_CASE("collection failures are reported per sequence") {
  const std::vector<double> xs{0.41, 5.0};
  const auto r = collect_demos(xs, {0, 1}, 1, 6, 0.005, 1, 1, "");
  CHECK(r.dataset.sequences.size() == 4);
  REQUIRE(r.failures.size() == 4);
  CHECK(r.failures[0].starts_with("s2_"));
  CHECK_THROWS_AS(collect_demos(xs, {2}, 1, 6, 0.005, 1, 1, ""), ValidationError);
}

TEST_CASE("fill discrimination compares insertion depth") {
  const auto yes = fill_discrimination({summary(sim::FillLevel::high, 0.05), summary(sim::FillLevel::low, 0.02)});
  CHECK(yes["discriminates"] == true);
  CHECK(yes["gap"].get<double>() == doctest::Approx(0.03));
  CHECK(yes["scripted_gap"].get<double>() == doctest::Approx(0.03).epsilon(1e-9));
  const auto no = fill_discrimination({summary(sim::FillLevel::high, 0.03), summary(sim::FillLevel::low, 0.03)});
  CHECK(no["discriminates"] == false);
  CHECK(fill_discrimination({summary(sim::FillLevel::high, 0.03)})["discriminates"].is_null());
}

TEST_CASE("cells show a circle only on a majority of successes") {
  CellResult c;
  c.trials = 5;
  c.successes = 3;
  CHECK(c.symbol() == "○");
  c.successes = 2;
  CHECK(c.symbol() == "×");
}

TEST_CASE("reproduce persists a traceable, deterministic run") {
  TempDir a("run_a"), b("run_b");
  const auto spec = tiny("exp1");
  const auto ra = reproduce(spec, a.path);
  const auto rb = reproduce(spec, b.path);
  for (const auto* f : {"models/dcae_A1.lfdm", "models/rnn_A1_s1.lfdm", "data/demos/manifest.json"})
    CHECK(store::read_file(a.path / f) == store::read_file(b.path / f));
  CHECK(ra["matrix"] == rb["matrix"]);
  CHECK(ra["config_hash"] == rb["config_hash"]);
  CHECK(ra["seeds"]["base"] == spec.seed);

  const auto& m = ra["matrix"];
  CHECK(m["columns"].size() == 6);
  CHECK(m["rows"] == json::array({"s1", "s4"}));
  CHECK(m["cells"]["A1-A7r_s1"]["s1"]["symbol"] == "not run");
  CHECK(m["cells"]["A1_s1"]["s4"]["symbol"] == "not run");
  const auto& cell = m["cells"]["A1_s1"]["s1"];
  CHECK(cell["trials"] == 2);
  for (const auto& r : cell["rollouts"]) CHECK(fs::exists(a.path / r["trajectory"].get<std::string>()));
  CHECK(store::load_dataset(a.path / cell["trajectories"].get<std::string>()).sequences.size() == 2);
  CHECK(load(a.path / "models/dcae_A1.loss.json").size() == 1);
  CHECK(load(a.path / "models/rnn_A1_s1.loss.json").size() == 4);
  CHECK(load(a.path / "spec.json") == spec_to_json(spec));
  CHECK(load(a.path / "report.json")["matrix"] == m);
  CHECK(store::load_dataset(a.path / "data/demos").sequences.size() == 4);
  CHECK(store::load_dataset(a.path / "data/test").sequences.size() == 4);

  const auto& recon = ra["recon"]["A1"];
  CHECK(recon["test_mse"].get<double>() > 0.0);
  CHECK(recon["heldout_mse"].is_null());

  const auto text = render_table(ra);
  CHECK(text.find("not run") != std::string::npos);
  CHECK(text.find("A1_s1") != std::string::npos);
}

TEST_CASE("exp3 compares against an exp2 baseline") {
  TempDir e2("exp2"), e3("exp3"), bad("exp3_bad");
  const auto r2 = reproduce(tiny("exp2"), e2.path);
  CHECK(r2["matrix"]["rows"] == json::array({"s1", "s4", "s7"}));
  CHECK(r2["matrix"]["cells"]["A1-A6_s1-s6"]["s7"]["trials"] == 2);
  CHECK(r2["recon"]["A1-A6"]["heldout_positions"] == json::array({6}));
  CHECK(r2["recon"]["A1-A6"]["heldout_mse"].is_number());

  auto s3 = tiny("exp3");
  s3.baseline = e2.path;
  const auto r3 = reproduce(s3, e3.path);
  CHECK_FALSE(r3["recon"].contains("A1-A6"));  // reused, not retrained
  const auto& aug = r3["augmentation"];
  CHECK(aug["baseline_heldout_mse"] == r2["recon"]["A1-A6"]["heldout_mse"]);
  CHECK(aug["augmented_heldout_mse"] == r3["recon"]["A1-A6r"]["heldout_mse"]);
  CHECK(aug["grid_images"] == 6);
  CHECK(r3["recon"]["A1-A6r"]["train_images"].get<std::size_t>() ==
        r2["recon"]["A1-A6"]["train_images"].get<std::size_t>() + 6);
  CHECK(r3["matrix"]["cells"]["A1-A7r_s1"]["s1"]["trials"] == 2);
  CHECK(r3["matrix"]["cells"]["A1-A7r_s1s4"]["s4"]["trials"] == 2);
  CHECK(r3["matrix"]["cells"]["A1-A7r_s4"]["s1"]["symbol"] == "not run");

  auto mismatched = s3;
  mismatched.seed = 5;
  try {
    reproduce(mismatched, bad.path);
    FAIL("expected a baseline mismatch");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).starts_with("stage baseline"));
  }
}

TEST_CASE("exp3 without a baseline trains one") {
  TempDir dir("exp3_self");
  auto s = tiny("exp3");
  s.regimes.resize(1);
  const auto r = reproduce(s, dir.path);
  CHECK(r["recon"].contains("A1-A6"));
  CHECK(r["augmentation"]["baseline_run"] == "this run");
}

TEST_CASE("stage failures name the stage and keep their class") {
  TempDir dir("abort");
  auto s = tiny("exp1");
  s.rnn.adam.lr = 1e300;
  try {
    reproduce(s, dir.path);
    FAIL("expected an abort");
  } catch (const TrainingAbort& e) {
    CHECK(std::string(e.what()).starts_with("stage train-rnn A1_s1"));
  }
}
