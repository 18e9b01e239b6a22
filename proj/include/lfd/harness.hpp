#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "lfd/dataset.hpp"
#include "lfd/dcae.hpp"
#include "lfd/demo.hpp"
#include "lfd/rnn.hpp"
#include "lfd/success.hpp"

namespace lfd::harness {

enum class Scale { desk, paper };
std::string to_string(Scale s);
Scale scale_from_string(const std::string& s);

/// Seed streams; every stage draws from derive_seed(base, stream).
enum class Stream : std::uint64_t {
  demos = 1,
  test_demos = 2,
  grid = 3,
  dcae_init = 4,
  dcae_train = 5,
  rnn_init = 6,
  rnn_train = 7,
  rollout = 8,
};
std::uint64_t stage_seed(std::uint64_t base, Stream stream, std::uint64_t index = 0);

/// One column of the result matrix: which images the autoencoder saw, which
/// demos the recurrent net learned from, and where it is tested.
struct Regime {
  std::string label;
  std::vector<std::size_t> dcae_positions;
  bool grid = false;
  std::vector<std::size_t> rnn_positions;
  std::vector<std::size_t> rows;

  std::string dcae_key() const;
  std::string rnn_key() const;
};

struct ExperimentSpec {
  std::string experiment = "exp1";
  Scale scale = Scale::desk;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::vector<double> positions;  // bowl x per position s1..sN
  std::vector<std::size_t> demo_positions;
  std::size_t sequences_per_combo = 5;
  std::size_t test_sequences_per_combo = 1;
  std::size_t frame_period = 2;
  std::size_t dcae_frame_stride = 1;  // every k-th demo frame goes to the autoencoder
  double jitter_sigma = 0.005;
  std::size_t rollouts = 5;
  std::size_t rollout_steps = 60;
  std::optional<std::size_t> heldout_position;
  demo::GridSpec grid;
  dcae::DcaeConfig dcae;
  rnn::RnnConfig rnn;
  std::vector<Regime> regimes;
  /// exp3: directory of a finished exp2 run whose held-out error is the baseline.
  std::optional<std::filesystem::path> baseline;

  void validate() const;
};

/// Defaults for an experiment at a scale. exp3 with full_table also runs the
/// single-position columns.
ExperimentSpec default_spec(const std::string& experiment, Scale scale, bool full_table = false);

nlohmann::json spec_to_json(const ExperimentSpec& spec);
/// Overlays the keys present in `j` onto `base`.
ExperimentSpec spec_from_json(const nlohmann::json& j, ExperimentSpec base);
/// FNV-1a of the canonical json.
std::string config_hash(const nlohmann::json& j);

std::string position_label(std::size_t index);  // 0 -> "s1"

// ---- building blocks shared by the CLI verbs ----

struct CollectResult {
  store::Dataset dataset;
  std::vector<std::string> failures;  // one line per failed sequence
};

/// Scripted demos at positions[i] for each i in `indices`: per combo,
/// `per_combo` sequences. Each seed depends only on (position index, combo,
/// repeat), so it does not change with jobs or with which positions are chosen.
CollectResult collect_demos(const std::vector<double>& positions, const std::vector<std::size_t>& indices,
                            std::size_t per_combo, std::size_t frame_period, double jitter_sigma, std::uint64_t seed,
                            std::size_t jobs, const std::string& id_prefix);

/// Grid images stored as one "grid" sequence; per-image scenes go to grid.json.
void save_grid(const demo::GridSet& grid, const std::filesystem::path& dir);
std::vector<dcae::Image> load_grid_images(const std::filesystem::path& dir);

std::vector<dcae::Image> frames_of(std::span<const store::DemoSequence> seqs, std::size_t stride = 1);

struct RolloutSummary {
  sim::SceneConfig scene;
  std::uint64_t seed = 0;
  sim::SuccessReport report;
  double deepest_tip_y = 0.0;  // lowest spoon tip height reached
  std::string trajectory;      // file, relative to the run directory
};

/// Whether rollouts dig deeper into low fills than high ones, the way the
/// scripted demos do.
nlohmann::json fill_discrimination(const std::vector<RolloutSummary>& rollouts);

double deepest_tip_y(const store::DemoSequence& trajectory);

nlohmann::json rollout_summary_json(const RolloutSummary& r);

// ---- reproduction ----

struct CellResult {
  std::size_t successes = 0;
  std::size_t trials = 0;
  std::vector<RolloutSummary> rollouts;
  std::string symbol() const;  // "○" on a majority of successes, else "×"
};

using ProgressFn = std::function<void(const std::string&)>;

/// Runs an experiment end to end inside `out`, persisting datasets, models,
/// loss histories, trajectories, report.json, and report.txt. Returns the report.
nlohmann::json reproduce(const ExperimentSpec& spec, const std::filesystem::path& out, const ProgressFn& progress = {});

/// Table-I-shaped text: rows are test positions, columns training regimes.
std::string render_table(const nlohmann::json& report);

}  // namespace lfd::harness
