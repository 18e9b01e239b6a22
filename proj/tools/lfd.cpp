// lfd: data collection, training, rollout, evaluation, and experiment runs.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "CLI11.hpp"

#include "lfd/bridge.hpp"
#include "lfd/errors.hpp"
#include "lfd/harness.hpp"
#include "lfd/rng.hpp"

using namespace lfd;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::optional<std::size_t> jobs;
  std::string scale = "desk";
};

json read_json_file(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

// Defaults, then the config file, then LFD_SEED if the file gave no seed; flags are applied by the caller.
harness::ExperimentSpec base_spec(const Globals& g, const std::string& experiment) {
  auto spec = harness::default_spec(experiment, harness::scale_from_string(g.scale));
  bool seeded = false;
  if (!g.config.empty()) {
    const auto cfg = read_json_file(g.config);
    seeded = cfg.is_object() && cfg.contains("seed");
    spec = harness::spec_from_json(cfg, spec);
  }
  if (g.seed) spec.seed = *g.seed;
  else if (!seeded)
    if (const char* env = std::getenv("LFD_SEED")) {
      try {
        spec.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw ValidationError(std::string("LFD_SEED is not an unsigned integer: '") + env + "'");
      }
    }
  if (g.jobs) spec.jobs = *g.jobs;
  return spec;
}

std::vector<std::size_t> to_indices(const std::vector<std::size_t>& one_based, std::size_t count) {
  std::vector<std::size_t> out;
  for (auto p : one_based) {
    if (p < 1 || p > count) throw ValidationError("position " + std::to_string(p) + " is outside 1.." + std::to_string(count));
    out.push_back(p - 1);
  }
  return out;
}

std::vector<dcae::Image> load_images(const std::vector<std::string>& data, const std::vector<std::string>& grids,
                                     std::size_t stride) {
  std::vector<dcae::Image> images;
  for (const auto& d : data) {
    const auto ds = store::load_dataset(d);
    auto more = harness::frames_of(ds.sequences, stride);
    images.insert(images.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  }
  for (const auto& g : grids) {
    auto more = harness::load_grid_images(g);
    images.insert(images.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  }
  return images;
}

std::vector<store::DemoSequence> load_sequences(const std::vector<std::string>& data) {
  std::vector<store::DemoSequence> out;
  for (const auto& d : data) {
    auto ds = store::load_dataset(d);
    for (auto& s : ds.sequences) out.push_back(std::move(s));
  }
  return out;
}

fs::path loss_path(const fs::path& model) {
  auto p = model;
  p.replace_extension(".loss.json");
  return p;
}

std::string hash_of(const fs::path& p) { return store::content_hash(store::read_file(p)); }

sim::SceneConfig scene_from_flags(const std::string& scene_file, std::optional<double> bowl_x, const std::string& color,
                                  const std::string& fill) {
  sim::SceneConfig s;
  if (!scene_file.empty()) s = store::scene_from_json(read_json_file(scene_file));
  if (bowl_x) s.bowl_x = *bowl_x;
  if (!color.empty()) s.color = sim::bowl_color_from_string(color);
  if (!fill.empty()) s.fill = sim::fill_level_from_string(fill);
  s.validate();
  return s;
}

int run(int argc, char** argv) {
  CLI::App app{"Learning-from-demonstration scooping: collect, train, roll out, evaluate, reproduce"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Base seed (default: config file, then LFD_SEED, then 0)");
  app.add_option("--config", g.config, "JSON config; keys as in a run's spec.json, flags win")->check(CLI::ExistingFile);
  app.add_option("--jobs", g.jobs, "Parallel collection/rollout jobs")->check(CLI::PositiveNumber);
  app.add_option("--scale", g.scale, "desk or paper defaults")->check(CLI::IsMember({"desk", "paper"}));

  // collect-demos
  auto* cd = app.add_subcommand("collect-demos", "Record scripted demonstrations");
  std::string cd_out, cd_experiment = "exp1";
  std::vector<std::size_t> cd_positions;
  std::vector<double> cd_bowl_x;
  std::optional<std::size_t> cd_per_combo, cd_period;
  std::optional<double> cd_jitter;
  cd->add_option("--out", cd_out, "Dataset directory")->required();
  cd->add_option("--experiment", cd_experiment, "Use this experiment's positions and counts")
      ->check(CLI::IsMember({"exp1", "exp2", "exp3"}));
  cd->add_option("--positions", cd_positions, "Position numbers, 1-based (s1 = 1)")->delimiter(',');
  cd->add_option("--bowl-x", cd_bowl_x, "Explicit bowl positions in meters")->delimiter(',')->excludes("--positions");
  cd->add_option("--per-combo", cd_per_combo, "Sequences per color/fill combination")->check(CLI::PositiveNumber);
  cd->add_option("--frame-period", cd_period, "Ticks between recorded frames")->check(CLI::PositiveNumber);
  cd->add_option("--jitter", cd_jitter, "Waypoint jitter sigma (m)");

  // collect-grid
  auto* cg = app.add_subcommand("collect-grid", "Render grid augmentation images");
  std::string cg_out;
  std::optional<std::size_t> cg_g, cg_a, cg_r;
  cg->add_option("--out", cg_out, "Dataset directory")->required();
  cg->add_option("--positions", cg_g, "Bowl positions G");
  cg->add_option("--poses", cg_a, "Arm poses per position A");
  cg->add_option("--rotations", cg_r, "Rotations per pose R");

  // train-dcae
  auto* td = app.add_subcommand("train-dcae", "Train the autoencoder");
  std::vector<std::string> td_data, td_grid;
  std::string td_out;
  std::optional<std::size_t> td_epochs, td_batch, td_stride;
  std::optional<double> td_lr;
  td->add_option("--data", td_data, "Dataset directories")->check(CLI::ExistingDirectory);
  td->add_option("--grid", td_grid, "Grid dataset directories")->check(CLI::ExistingDirectory);
  td->add_option("--out", td_out, "Model file")->required();
  td->add_option("--epochs", td_epochs)->check(CLI::PositiveNumber);
  td->add_option("--batch", td_batch)->check(CLI::PositiveNumber);
  td->add_option("--lr", td_lr);
  td->add_option("--frame-stride", td_stride, "Use every k-th frame")->check(CLI::PositiveNumber);

  // train-rnn
  auto* tr = app.add_subcommand("train-rnn", "Train the recurrent net on encoded demos");
  std::vector<std::string> tr_data;
  std::string tr_dcae, tr_out;
  std::optional<std::size_t> tr_iters, tr_batch, tr_queue;
  std::optional<double> tr_lr;
  tr->add_option("--data", tr_data, "Dataset directories")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--dcae", tr_dcae, "Autoencoder model")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "Model file")->required();
  tr->add_option("--iterations", tr_iters)->check(CLI::PositiveNumber);
  tr->add_option("--batch", tr_batch)->check(CLI::PositiveNumber);
  tr->add_option("--queue", tr_queue)->check(CLI::PositiveNumber);
  tr->add_option("--lr", tr_lr);

  // encode
  auto* en = app.add_subcommand("encode", "Encode dataset frames to feature vectors");
  std::string en_dcae, en_data, en_out;
  en->add_option("--dcae", en_dcae)->required()->check(CLI::ExistingFile);
  en->add_option("--data", en_data)->required()->check(CLI::ExistingDirectory);
  en->add_option("--out", en_out, "JSON file (stdout if omitted)");

  // rollout
  auto* ro = app.add_subcommand("rollout", "Closed-loop rollout of trained models");
  std::string ro_dcae, ro_rnn, ro_scene, ro_color, ro_fill, ro_out;
  std::optional<double> ro_x;
  std::optional<std::size_t> ro_steps;
  ro->add_option("--dcae", ro_dcae)->required()->check(CLI::ExistingFile);
  ro->add_option("--rnn", ro_rnn)->required()->check(CLI::ExistingFile);
  ro->add_option("--scene", ro_scene, "Scene JSON")->check(CLI::ExistingFile);
  ro->add_option("--bowl-x", ro_x);
  ro->add_option("--color", ro_color)->check(CLI::IsMember({"yellow", "green"}));
  ro->add_option("--fill", ro_fill)->check(CLI::IsMember({"high", "low"}));
  ro->add_option("--steps", ro_steps);
  ro->add_option("--out", ro_out, "Trajectory dataset directory");

  // eval-recon
  auto* ev = app.add_subcommand("eval-recon", "Reconstruction error per dataset and position");
  std::string ev_dcae;
  std::vector<std::string> ev_data;
  ev->add_option("--dcae", ev_dcae)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data)->required()->check(CLI::ExistingDirectory);

  // reproduce
  auto* rp = app.add_subcommand("reproduce", "Run an experiment end to end");
  std::string rp_exp, rp_out, rp_baseline;
  bool rp_full = false;
  std::optional<std::size_t> rp_rollouts, rp_epochs, rp_iters;
  rp->add_option("experiment", rp_exp)->required()->check(CLI::IsMember({"exp1", "exp2", "exp3"}));
  rp->add_option("--out", rp_out, "Run directory (default runs/<experiment>)");
  rp->add_option("--baseline", rp_baseline, "exp3: finished exp2 run to compare against")->check(CLI::ExistingDirectory);
  rp->add_flag("--full-table", rp_full, "exp3: also run the single-position columns");
  rp->add_option("--rollouts", rp_rollouts)->check(CLI::PositiveNumber);
  rp->add_option("--epochs", rp_epochs)->check(CLI::PositiveNumber);
  rp->add_option("--iterations", rp_iters)->check(CLI::PositiveNumber);

  // serve
  auto* sv = app.add_subcommand("serve", "WebSocket teleoperation bridge");
  std::uint16_t sv_port = 8765;
  std::string sv_scene, sv_record = "recordings";
  double sv_hz = 20.0;
  sv->add_option("--port", sv_port);
  sv->add_option("--scene", sv_scene, "Scene JSON")->check(CLI::ExistingFile);
  sv->add_option("--record-dir", sv_record);
  sv->add_option("--hz", sv_hz)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*cd) {
    auto spec = base_spec(g, cd_experiment);
    if (cd_per_combo) spec.sequences_per_combo = *cd_per_combo;
    if (cd_period) spec.frame_period = *cd_period;
    if (cd_jitter) spec.jitter_sigma = *cd_jitter;
    auto positions = spec.positions;
    auto indices = spec.demo_positions;
    if (!cd_bowl_x.empty()) {
      positions = cd_bowl_x;
      indices.clear();
      for (std::size_t i = 0; i < positions.size(); ++i) indices.push_back(i);
    } else if (!cd_positions.empty()) {
      indices = to_indices(cd_positions, positions.size());
    }
    const auto res = harness::collect_demos(positions, indices, spec.sequences_per_combo, spec.frame_period,
                                            spec.jitter_sigma, derive_seed(spec.seed, static_cast<std::uint64_t>(harness::Stream::demos)),
                                            spec.jobs, "");
    for (const auto& f : res.failures) std::cerr << "failed: " << f << "\n";
    if (!res.dataset.sequences.empty()) {
      const auto manifest = store::save_dataset(res.dataset, cd_out);
      std::cout << "wrote " << manifest["sequences"].size() << " sequences (" << res.dataset.frame_count() << " frames) to "
                << cd_out << ", seed " << spec.seed << "\n";
    }
    if (!res.failures.empty())
      throw ValidationError(std::to_string(res.failures.size()) + " of " +
                            std::to_string(res.failures.size() + res.dataset.sequences.size()) + " sequences failed");
    return 0;
  }

  if (*cg) {
    auto spec = base_spec(g, "exp3");
    if (cg_g) spec.grid.positions = *cg_g;
    if (cg_a) spec.grid.poses = *cg_a;
    if (cg_r) spec.grid.rotations = *cg_r;
    const auto grid = demo::grid_augment(spec.grid, harness::stage_seed(spec.seed, harness::Stream::grid));
    harness::save_grid(grid, cg_out);
    std::cout << "wrote " << grid.images.size() << " grid images to " << cg_out << " (" << grid.resamples
              << " resampled poses), seed " << spec.seed << "\n";
    return 0;
  }

  if (*td) {
    if (td_data.empty() && td_grid.empty()) throw ValidationError("train-dcae: give --data and/or --grid");
    auto spec = base_spec(g, "exp1");
    if (td_epochs) spec.dcae.epochs = *td_epochs;
    if (td_batch) spec.dcae.batch_size = *td_batch;
    if (td_lr) spec.dcae.adam.lr = *td_lr;
    if (td_stride) spec.dcae_frame_stride = *td_stride;
    const auto images = load_images(td_data, td_grid, spec.dcae_frame_stride);
    std::cerr << "train-dcae: " << images.size() << " images, " << spec.dcae.epochs << " epochs\n";
    auto res = dcae::train_dcae(dcae::build_dcae(spec.dcae, harness::stage_seed(spec.seed, harness::Stream::dcae_init)),
                                images, spec.dcae, harness::stage_seed(spec.seed, harness::Stream::dcae_train));
    store::save_model(res.model, td_out);
    write_json_file(loss_path(td_out), res.loss_history);
    std::cout << json{{"model", td_out},
                      {"hash", hash_of(td_out)},
                      {"images", images.size()},
                      {"epochs", res.loss_history.size()},
                      {"final_loss", res.loss_history.back()},
                      {"train_mse", dcae::mean_recon_error(res.model, images)},
                      {"seed", spec.seed}}
                     .dump(2)
              << "\n";
    return 0;
  }

  if (*tr) {
    auto spec = base_spec(g, "exp1");
    if (tr_iters) spec.rnn.iterations = *tr_iters;
    if (tr_batch) spec.rnn.batch_size = *tr_batch;
    if (tr_queue) spec.rnn.queue_length = *tr_queue;
    if (tr_lr) spec.rnn.adam.lr = *tr_lr;
    const auto dcae_model = store::load_model(tr_dcae);
    dcae::check_model(dcae_model);
    spec.rnn.feature_dim = dcae::config_of(dcae_model).feature_dim();
    const auto seqs = load_sequences(tr_data);
    std::cerr << "train-rnn: " << seqs.size() << " sequences, " << spec.rnn.iterations << " iterations\n";
    auto res = rnn::train_rnn(rnn::build_rnn(spec.rnn, harness::stage_seed(spec.seed, harness::Stream::rnn_init)),
                              dcae_model, seqs, spec.rnn, harness::stage_seed(spec.seed, harness::Stream::rnn_train));
    store::save_model(res.model, tr_out);
    write_json_file(loss_path(tr_out), res.loss_history);
    std::cout << json{{"model", tr_out},
                      {"hash", hash_of(tr_out)},
                      {"sequences", seqs.size()},
                      {"skipped_sequences", res.skipped_sequences},
                      {"iterations", res.loss_history.size()},
                      {"final_loss", res.loss_history.back()},
                      {"seed", spec.seed}}
                     .dump(2)
              << "\n";
    return 0;
  }

  if (*en) {
    const auto model = store::load_model(en_dcae);
    dcae::check_model(model);
    const auto ds = store::load_dataset(en_data);
    json out{{"dcae", en_dcae}, {"dcae_hash", hash_of(en_dcae)}, {"sequences", json::array()}};
    for (const auto& s : ds.sequences) {
      json feats = json::array();
      for (const auto& f : s.frames) feats.push_back(dcae::encode(model, f.image));
      out["sequences"].push_back({{"id", s.id}, {"features", feats}});
    }
    if (en_out.empty()) std::cout << out.dump() << "\n";
    else write_json_file(en_out, out);
    return 0;
  }

  if (*ro) {
    auto spec = base_spec(g, "exp1");
    if (ro_steps) spec.rollout_steps = *ro_steps;
    if (spec.rollout_steps == 0) throw ValidationError("rollout: steps must be >= 1");
    const auto dcae_model = store::load_model(ro_dcae);
    const auto rnn_model = store::load_model(ro_rnn);
    dcae::check_model(dcae_model);
    rnn::check_model(rnn_model);
    const auto fd = dcae::config_of(dcae_model).feature_dim();
    if (rnn::config_of(rnn_model).feature_dim != fd)
      throw ValidationError("rollout: recurrent net expects " + std::to_string(rnn::config_of(rnn_model).feature_dim) +
                            " features but the autoencoder produces " + std::to_string(fd));
    const auto scene = scene_from_flags(ro_scene, ro_x, ro_color, ro_fill);
    const auto seed = harness::stage_seed(spec.seed, harness::Stream::rollout);
    rnn::RolloutResult res;
    try {
      res = rnn::rollout(rnn_model, dcae_model, scene, spec.rollout_steps, seed);
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception& e) {
      throw EvaluationFailure(std::string("rollout: ") + e.what());
    }
    res.trajectory.id = "rollout";
    json out{{"scene", store::scene_to_json(scene)},
             {"seed", spec.seed},
             {"steps", spec.rollout_steps},
             {"report", res.report},
             {"summary", res.report.summary()},
             {"deepest_tip_y", harness::deepest_tip_y(res.trajectory)}};
    if (!ro_out.empty()) {
      store::Dataset ds;
      ds.sequences.push_back(std::move(res.trajectory));
      store::save_dataset(ds, ro_out);
      out["trajectory"] = ro_out;
    }
    std::cout << out.dump(2) << "\n";
    return 0;
  }

  if (*ev) {
    const auto model = store::load_model(ev_dcae);
    dcae::check_model(model);
    json out{{"dcae", ev_dcae}, {"datasets", json::object()}};
    for (const auto& d : ev_data) {
      const auto ds = store::load_dataset(d);
      std::map<double, std::vector<dcae::Image>> by_x;
      std::vector<dcae::Image> all;
      for (const auto& s : ds.sequences)
        for (const auto& f : s.frames) {
          by_x[s.scene.bowl_x].push_back(f.image);
          all.push_back(f.image);
        }
      json per = json::object();
      for (const auto& [x, imgs] : by_x) per[std::to_string(x)] = {{"mse", dcae::mean_recon_error(model, imgs)}, {"frames", imgs.size()}};
      out["datasets"][d] = {{"mse", all.empty() ? json(nullptr) : json(dcae::mean_recon_error(model, all))},
                            {"frames", all.size()},
                            {"per_bowl_x", per}};
    }
    std::cout << out.dump(2) << "\n";
    return 0;
  }

  if (*rp) {
    auto spec = base_spec(g, rp_exp);
    if (rp_full) {
      auto full = harness::default_spec(rp_exp, spec.scale, true);
      spec.regimes = full.regimes;
    }
    if (!rp_baseline.empty()) spec.baseline = rp_baseline;
    if (rp_rollouts) spec.rollouts = *rp_rollouts;
    if (rp_epochs) spec.dcae.epochs = *rp_epochs;
    if (rp_iters) spec.rnn.iterations = *rp_iters;
    const fs::path out = rp_out.empty() ? fs::path("runs") / rp_exp : fs::path(rp_out);
    const auto report = harness::reproduce(spec, out, [](const std::string& m) { std::cerr << m << "\n"; });
    std::cout << harness::render_table(report) << "\nreport: " << (out / "report.json").string() << "\n";
    return 0;
  }

  if (*sv) {
    sim::SceneConfig scene;
    if (!sv_scene.empty()) scene = store::scene_from_json(read_json_file(sv_scene));
    bridge::BridgeOptions opts;
    opts.record_dir = sv_record;
    opts.tick_hz = sv_hz;
    bridge::Server server(scene, sv_port, opts);
    std::cerr << "serving on ws://0.0.0.0:" << server.port() << " at " << sv_hz << " Hz\n";
    server.run();
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // training allocates many same-sized buffers; keep them on the heap
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  try {
    return run(argc, argv);
  } catch (const TrainingAbort& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 3;
  } catch (const EvaluationFailure& e) {
    std::cerr << "evaluation failed: " << e.what() << "\n";
    return 4;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nn::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
}
