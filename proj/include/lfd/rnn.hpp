#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "json.hpp"

#include "lfd/adam.hpp"
#include "lfd/dataset.hpp"
#include "lfd/dcae.hpp"
#include "lfd/model_bundle.hpp"
#include "lfd/success.hpp"

namespace lfd::rnn {

struct RnnConfig {
  std::size_t feature_dim = 10;
  std::size_t joint_dim = 6;
  std::size_t hidden_size = 64;
  std::size_t layers = 2;
  std::size_t queue_length = 20;
  std::size_t iterations = 500;
  std::size_t batch_size = 32;
  /// Simulator ticks between consecutive records (the demos' frame period);
  /// each rollout prediction is held for this many ticks.
  std::size_t ticks_per_step = 2;
  nn::AdamConfig adam;

  std::size_t input_size() const { return feature_dim + joint_dim; }
  std::size_t output_size() const { return joint_dim + feature_dim; }
  void validate() const;
  bool operator==(const RnnConfig&) const = default;
};

void to_json(nlohmann::json& j, const RnnConfig& c);
void from_json(const nlohmann::json& j, RnnConfig& c);

/// Closed-form trainable parameter count.
std::size_t parameter_count(const RnnConfig& c);

struct StepRecord {
  dcae::FeatureVec feature;
  std::vector<double> joints;
  std::size_t time = 0;
};

class InputQueue {
 public:
  explicit InputQueue(std::size_t capacity);
  void push(StepRecord r);
  std::size_t size() const { return records_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return records_.empty(); }
  const StepRecord& operator[](std::size_t i) const { return records_[i]; }
  void clear() { records_.clear(); }

 private:
  std::size_t capacity_;
  std::deque<StepRecord> records_;
};

/// Per-dimension input scaling, in (feature, joint) order.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;
};

store::ModelBundle build_rnn(const RnnConfig& config, std::uint64_t seed);
RnnConfig config_of(const store::ModelBundle& model);
Normalization normalization_of(const store::ModelBundle& model);
void check_model(const store::ModelBundle& model);

/// A training sequence: per-frame features and joints.
struct FeatureSequence {
  std::vector<dcae::FeatureVec> features;
  std::vector<std::vector<double>> joints;
  std::size_t size() const { return features.size(); }
};

FeatureSequence encode_sequence(const store::ModelBundle& dcae, const store::DemoSequence& seq);

struct RnnTrainResult {
  store::ModelBundle model;
  std::vector<double> loss_history;
  std::size_t skipped_sequences = 0;
};

/// Teacher-forced next-step training on random windows of queue_length
/// records, each run from a zero state with the loss taken at every position.
RnnTrainResult train_rnn(store::ModelBundle model, std::span<const FeatureSequence> data, const RnnConfig& config,
                         std::uint64_t seed);
/// Convenience: encodes the demos with the DCAE first.
RnnTrainResult train_rnn(store::ModelBundle model, const store::ModelBundle& dcae,
                         std::span<const store::DemoSequence> demos, const RnnConfig& config, std::uint64_t seed);

struct Prediction {
  std::vector<double> joints;
  dcae::FeatureVec feature;
};

/// Runs the stack over the queue from a zero state (double precision) and
/// reads the head at the last record.
Prediction predict_step(const store::ModelBundle& model, const InputQueue& queue);

struct RolloutOptions {
  double dt = 0.05;
  double init_noise = 0.02;  // rad, seeded perturbation of the home posture
};

struct RolloutResult {
  store::DemoSequence trajectory;
  sim::SuccessReport report;
  std::size_t clamped_predictions = 0;
};

/// Closed loop: render, encode, enqueue, predict, command, advance. The
/// trajectory holds the sensed frame of every step plus the final state.
RolloutResult rollout(const store::ModelBundle& rnn, const store::ModelBundle& dcae, const sim::SceneConfig& scene,
                      std::size_t steps, std::uint64_t seed, const RolloutOptions& options = {});

}  // namespace lfd::rnn
