#include "lfd/rnn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lfd/demo.hpp"
#include "lfd/errors.hpp"
#include "lfd/ops.hpp"
#include "lfd/rng.hpp"
#include "lfd/tape.hpp"

namespace lfd::rnn {

using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

void RnnConfig::validate() const {
  if (hidden_size == 0) throw ValidationError("rnn: hidden size must be positive");
  if (layers == 0) throw ValidationError("rnn: need at least one LSTM layer");
  if (feature_dim == 0 || joint_dim == 0) throw ValidationError("rnn: feature and joint dims must be positive");
  if (queue_length < 2) throw ValidationError("rnn: queue length must be >= 2");
  if (iterations == 0 || batch_size == 0) throw ValidationError("rnn: iterations and batch size must be positive");
  if (ticks_per_step == 0) throw ValidationError("rnn: ticks_per_step must be positive");
}

void to_json(nlohmann::json& j, const RnnConfig& c) {
  j = nlohmann::json{{"feature_dim", c.feature_dim},
                     {"joint_dim", c.joint_dim},
                     {"input_size", c.input_size()},
                     {"output_size", c.output_size()},
                     {"output_order", "joints then features"},
                     {"hidden_size", c.hidden_size},
                     {"layers", c.layers},
                     {"queue_length", c.queue_length},
                     {"iterations", c.iterations},
                     {"batch_size", c.batch_size},
                     {"ticks_per_step", c.ticks_per_step},
                     {"loss", "mse, joints and features weighted equally, every window position"},
                     {"state", "zero at window / queue start"},
                     {"init", "uniform +-1/sqrt(hidden), forget bias 1"},
                     {"adam",
                      {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}}};
}

void from_json(const nlohmann::json& j, RnnConfig& c) {
  RnnConfig d;
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.joint_dim = j.value("joint_dim", d.joint_dim);
  c.hidden_size = j.value("hidden_size", d.hidden_size);
  c.layers = j.value("layers", d.layers);
  c.queue_length = j.value("queue_length", d.queue_length);
  c.iterations = j.value("iterations", d.iterations);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.ticks_per_step = j.value("ticks_per_step", d.ticks_per_step);
  c.adam = d.adam;
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    c.adam.lr = a.value("lr", d.adam.lr);
    c.adam.beta1 = a.value("beta1", d.adam.beta1);
    c.adam.beta2 = a.value("beta2", d.adam.beta2);
    c.adam.epsilon = a.value("epsilon", d.adam.epsilon);
  }
  if (j.contains("input_size") && j["input_size"].get<std::size_t>() != c.input_size())
    throw ValidationError("rnn: input_size must equal feature_dim + joint_dim");
  if (j.contains("output_size") && j["output_size"].get<std::size_t>() != c.output_size())
    throw ValidationError("rnn: output_size must equal joint_dim + feature_dim");
}

std::size_t parameter_count(const RnnConfig& c) {
  std::size_t n = 0;
  std::size_t in = c.input_size();
  for (std::size_t l = 0; l < c.layers; ++l) {
    n += 4 * c.hidden_size * (in + c.hidden_size) + 4 * c.hidden_size;
    in = c.hidden_size;
  }
  return n + c.output_size() * c.hidden_size + c.output_size();
}

InputQueue::InputQueue(std::size_t capacity) : capacity_(capacity) {
  if (capacity < 1) throw ValidationError("input queue capacity must be positive");
}

void InputQueue::push(StepRecord r) {
  records_.push_back(std::move(r));
  while (records_.size() > capacity_) records_.pop_front();
}

namespace {

std::string lstm_name(std::size_t layer, bool bias) {
  return "lstm." + std::to_string(layer) + (bias ? ".bias" : ".weight");
}

std::vector<std::pair<std::string, Shape>> block_layout(const RnnConfig& c) {
  std::vector<std::pair<std::string, Shape>> out;
  std::size_t in = c.input_size();
  const std::size_t h = c.hidden_size;
  for (std::size_t l = 0; l < c.layers; ++l) {
    out.emplace_back(lstm_name(l, false), Shape{4 * h, in + h});
    out.emplace_back(lstm_name(l, true), Shape{4 * h});
    in = h;
  }
  out.emplace_back("head.weight", Shape{c.output_size(), h});
  out.emplace_back("head.bias", Shape{c.output_size()});
  return out;
}

// Parameter Vars in block_layout order.
template <typename T>
std::vector<Var<T>> outputs_over_time(Tape<T>& tape, const std::vector<Var<T>>& params, const RnnConfig& c,
                                      const std::vector<Var<T>>& inputs, std::size_t batch) {
  const std::size_t h = c.hidden_size;
  std::vector<Var<T>> hs(c.layers), cs(c.layers);
  for (std::size_t l = 0; l < c.layers; ++l) {
    hs[l] = tape.constant(Tensor<T>({batch, h}, T(0)));
    cs[l] = tape.constant(Tensor<T>({batch, h}, T(0)));
  }
  std::vector<Var<T>> outs;
  outs.reserve(inputs.size());
  for (const auto& x : inputs) {
    Var<T> cur = x;
    for (std::size_t l = 0; l < c.layers; ++l) {
      auto hc = nn::lstm_cell(cur, hs[l], cs[l], params[2 * l], params[2 * l + 1]);
      hs[l] = nn::slice_cols(hc, 0, h);
      cs[l] = nn::slice_cols(hc, h, 2 * h);
      cur = hs[l];
    }
    outs.push_back(nn::dense(cur, params[2 * c.layers], params[2 * c.layers + 1]));
  }
  return outs;
}

void set_normalization(store::ModelBundle& m, const Normalization& n) {
  m.architecture["normalization"] = {{"mean", n.mean}, {"std", n.stddev}};
}

}  // namespace

store::ModelBundle build_rnn(const RnnConfig& config, std::uint64_t seed) {
  config.validate();
  store::ModelBundle m;
  m.kind = "rnn";
  m.architecture = {{"config", config}};
  set_normalization(m, {std::vector<double>(config.input_size(), 0.0), std::vector<double>(config.input_size(), 1.0)});
  Rng rng(seed);
  const float bound = 1.0f / std::sqrt(static_cast<float>(config.hidden_size));
  for (const auto& [name, shape] : block_layout(config)) {
    Tensor<float> t(shape, 0.0f);
    const bool bias = name.ends_with(".bias");
    if (!bias) {
      for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    } else if (name.starts_with("lstm.")) {
      // gate order i, f, g, o
      for (std::size_t k = config.hidden_size; k < 2 * config.hidden_size; ++k) t[k] = 1.0f;
    }
    m.add_block(name, std::move(t));
  }
  m.training = {{"init_seed", seed}};
  return m;
}

RnnConfig config_of(const store::ModelBundle& model) {
  if (model.kind != "rnn") throw ValidationError("expected an rnn model, got '" + model.kind + "'");
  try {
    return model.architecture.at("config").get<RnnConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("rnn descriptor: ") + e.what());
  }
}

Normalization normalization_of(const store::ModelBundle& model) {
  try {
    const auto& n = model.architecture.at("normalization");
    return {n.at("mean").get<std::vector<double>>(), n.at("std").get<std::vector<double>>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("rnn normalization: ") + e.what());
  }
}

void check_model(const store::ModelBundle& model) {
  const auto c = config_of(model);
  c.validate();
  const auto layout = block_layout(c);
  if (layout.size() != model.blocks.size())
    throw ValidationError("rnn: descriptor implies " + std::to_string(layout.size()) + " parameter blocks, model has " +
                          std::to_string(model.blocks.size()));
  for (std::size_t i = 0; i < layout.size(); ++i)
    if (model.blocks[i].name != layout[i].first || model.blocks[i].tensor.shape() != layout[i].second)
      throw ValidationError("rnn: block '" + model.blocks[i].name + "' " +
                            nn::shape_string(model.blocks[i].tensor.shape()) + " does not match '" + layout[i].first +
                            "' " + nn::shape_string(layout[i].second));
  const auto n = normalization_of(model);
  if (n.mean.size() != c.input_size() || n.stddev.size() != c.input_size())
    throw ValidationError("rnn: normalization vectors must have input_size entries");
  for (double s : n.stddev)
    if (!(s > 0.0)) throw ValidationError("rnn: normalization std must be positive");
}

FeatureSequence encode_sequence(const store::ModelBundle& dcae_model, const store::DemoSequence& seq) {
  std::vector<dcae::Image> images;
  images.reserve(seq.frames.size());
  for (const auto& f : seq.frames) images.push_back(f.image);
  FeatureSequence out;
  out.features = dcae::encode_batch(dcae_model, images);
  for (const auto& f : seq.frames) out.joints.emplace_back(f.joints.begin(), f.joints.end());
  return out;
}

RnnTrainResult train_rnn(store::ModelBundle model, std::span<const FeatureSequence> data, const RnnConfig& config,
                         std::uint64_t seed) {
  config.validate();
  if (config_of(model) != config) {
    const auto mc = config_of(model);
    if (mc.input_size() != config.input_size() || mc.hidden_size != config.hidden_size || mc.layers != config.layers)
      throw ValidationError("train_rnn: config architecture differs from the model's");
  }
  if (data.empty()) throw ValidationError("train_rnn: empty dataset");
  const std::size_t q = config.queue_length;
  const std::size_t fd = config.feature_dim, jd = config.joint_dim, in = config.input_size();

  RnnTrainResult result;
  struct Window {
    std::size_t seq, start;
  };
  std::vector<Window> windows;
  std::vector<std::size_t> used;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto& seq = data[s];
    if (seq.joints.size() != seq.size()) throw ValidationError("train_rnn: feature/joint length mismatch");
    for (std::size_t t = 0; t < seq.size(); ++t)
      if (seq.features[t].size() != fd || seq.joints[t].size() != jd)
        throw ValidationError("train_rnn: sequence " + std::to_string(s) + " has feature dim " +
                              std::to_string(seq.features[t].size()) + " / joint dim " +
                              std::to_string(seq.joints[t].size()) + ", config expects " + std::to_string(fd) + " / " +
                              std::to_string(jd));
    if (seq.size() < q + 1) {
      ++result.skipped_sequences;
      continue;
    }
    used.push_back(s);
    for (std::size_t st = 0; st + q < seq.size(); ++st) windows.push_back({s, st});
  }
  if (windows.empty())
    throw ValidationError("train_rnn: every sequence is shorter than queue length + 1 (" + std::to_string(q + 1) + ")");

  // Normalization over all records of the usable sequences.
  Normalization norm{std::vector<double>(in, 0.0), std::vector<double>(in, 0.0)};
  std::size_t count = 0;
  auto record_value = [&](const FeatureSequence& seq, std::size_t t, std::size_t k) {
    return k < fd ? static_cast<double>(seq.features[t][k]) : seq.joints[t][k - fd];
  };
  for (auto s : used)
    for (std::size_t t = 0; t < data[s].size(); ++t, ++count)
      for (std::size_t k = 0; k < in; ++k) norm.mean[k] += record_value(data[s], t, k);
  for (auto& m : norm.mean) m /= static_cast<double>(count);
  for (auto s : used)
    for (std::size_t t = 0; t < data[s].size(); ++t)
      for (std::size_t k = 0; k < in; ++k) {
        const double d = record_value(data[s], t, k) - norm.mean[k];
        norm.stddev[k] += d * d;
      }
  for (auto& v : norm.stddev) {
    v = std::sqrt(v / static_cast<double>(count));
    if (v < 1e-6) v = 1.0;
  }

  std::vector<Tensor<double>> params;
  for (const auto& b : model.blocks) params.push_back(nn::tensor_cast<double>(b.tensor));
  std::vector<Tensor<double>*> param_ptrs;
  for (auto& p : params) param_ptrs.push_back(&p);
  nn::AdamState<double> adam(config.adam);
  Rng rng(derive_seed(seed, 2));
  const std::size_t batch = config.batch_size;
  const std::size_t out = config.output_size();

  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::vector<Window> picks(batch);
    for (auto& w : picks) w = windows[rng.below(windows.size())];
    Tape<double> tape;
    std::vector<Var<double>> pv;
    for (auto& p : params) pv.push_back(tape.parameter(p));
    std::vector<Var<double>> inputs, targets;
    for (std::size_t t = 0; t < q; ++t) {
      Tensor<double> x({batch, in}, 0.0), y({batch, out}, 0.0);
      for (std::size_t b = 0; b < batch; ++b) {
        const auto& seq = data[picks[b].seq];
        const std::size_t cur = picks[b].start + t;
        for (std::size_t k = 0; k < in; ++k) x[b * in + k] = (record_value(seq, cur, k) - norm.mean[k]) / norm.stddev[k];
        for (std::size_t k = 0; k < jd; ++k)
          y[b * out + k] = (record_value(seq, cur + 1, fd + k) - norm.mean[fd + k]) / norm.stddev[fd + k];
        for (std::size_t k = 0; k < fd; ++k)
          y[b * out + jd + k] = (record_value(seq, cur + 1, k) - norm.mean[k]) / norm.stddev[k];
      }
      inputs.push_back(tape.constant(std::move(x)));
      targets.push_back(tape.constant(std::move(y)));
    }
    auto outs = outputs_over_time(tape, pv, config, inputs, batch);
    Var<double> loss = nn::mse(outs[0], targets[0]);
    for (std::size_t t = 1; t < q; ++t) loss = nn::add(loss, nn::mse(outs[t], targets[t]));
    loss = nn::scale(loss, 1.0 / static_cast<double>(q));
    const double value = loss.value()[0];
    if (!std::isfinite(value)) throw TrainingAbort("train_rnn: non-finite loss at iteration " + std::to_string(it));
    for (auto* p : param_ptrs) p->zero_grad();
    tape.backward(loss);
    nn::adam_step<double>(param_ptrs, adam);
    result.loss_history.push_back(value);
  }

  for (std::size_t i = 0; i < params.size(); ++i) model.blocks[i].tensor = nn::tensor_cast<float>(params[i]);
  model.architecture["config"] = config;
  set_normalization(model, norm);
  model.training["train_seed"] = seed;
  model.training["iterations"] = config.iterations;
  model.training["batch_size"] = config.batch_size;
  model.training["sequences"] = used.size();
  model.training["skipped_sequences"] = result.skipped_sequences;
  model.training["windows"] = windows.size();
  model.training["final_loss"] = result.loss_history.back();
  result.model = std::move(model);
  return result;
}

RnnTrainResult train_rnn(store::ModelBundle model, const store::ModelBundle& dcae_model,
                         std::span<const store::DemoSequence> demos, const RnnConfig& config, std::uint64_t seed) {
  if (dcae::config_of(dcae_model).feature_dim() != config.feature_dim)
    throw ValidationError("train_rnn: dcae code size " + std::to_string(dcae::config_of(dcae_model).feature_dim()) +
                          " does not match rnn feature_dim " + std::to_string(config.feature_dim));
  std::vector<FeatureSequence> data;
  for (const auto& d : demos) data.push_back(encode_sequence(dcae_model, d));
  return train_rnn(std::move(model), data, config, seed);
}

Prediction predict_step(const store::ModelBundle& model, const InputQueue& queue) {
  if (queue.empty()) throw ValidationError("predict_step: empty queue");
  const auto c = config_of(model);
  const auto norm = normalization_of(model);
  const std::size_t fd = c.feature_dim, jd = c.joint_dim, in = c.input_size();
  Tape<double> tape;
  std::vector<Tensor<double>> params;
  params.reserve(model.blocks.size());
  for (const auto& b : model.blocks) params.push_back(nn::tensor_cast<double>(b.tensor));
  std::vector<Var<double>> pv;
  for (const auto& p : params) pv.push_back(tape.constant_ref(p));
  std::vector<Var<double>> inputs;
  for (std::size_t t = 0; t < queue.size(); ++t) {
    const auto& r = queue[t];
    if (r.feature.size() != fd || r.joints.size() != jd)
      throw ValidationError("predict_step: record " + std::to_string(t) + " has feature dim " +
                            std::to_string(r.feature.size()) + " / joint dim " + std::to_string(r.joints.size()));
    Tensor<double> x({1, in}, 0.0);
    for (std::size_t k = 0; k < fd; ++k) x[k] = (static_cast<double>(r.feature[k]) - norm.mean[k]) / norm.stddev[k];
    for (std::size_t k = 0; k < jd; ++k) x[fd + k] = (r.joints[k] - norm.mean[fd + k]) / norm.stddev[fd + k];
    inputs.push_back(tape.constant(std::move(x)));
  }
  const auto outs = outputs_over_time(tape, pv, c, inputs, 1);
  const auto& y = outs.back().value();
  Prediction p;
  for (std::size_t k = 0; k < jd; ++k) p.joints.push_back(y[k] * norm.stddev[fd + k] + norm.mean[fd + k]);
  for (std::size_t k = 0; k < fd; ++k) p.feature.push_back(static_cast<float>(y[jd + k] * norm.stddev[k] + norm.mean[k]));
  return p;
}

RolloutResult rollout(const store::ModelBundle& rnn_model, const store::ModelBundle& dcae_model,
                      const sim::SceneConfig& scene, std::size_t steps, std::uint64_t seed,
                      const RolloutOptions& options) {
  if (steps < 1) throw ValidationError("rollout: steps must be >= 1");
  const auto c = config_of(rnn_model);
  const auto dc = dcae::config_of(dcae_model);
  if (dc.feature_dim() != c.feature_dim)
    throw ValidationError("rollout: dcae code size " + std::to_string(dc.feature_dim()) + " does not match rnn feature_dim " +
                          std::to_string(c.feature_dim));
  if (scene.joint_count() != c.joint_dim)
    throw ValidationError("rollout: scene has " + std::to_string(scene.joint_count()) + " joints, rnn expects " +
                          std::to_string(c.joint_dim));
  if (dc.image_shape() != nn::Shape{3, scene.image_size, scene.image_size})
    throw ValidationError("rollout: dcae input " + nn::shape_string(dc.image_shape()) + " does not match the render size");

  Rng rng(seed);
  auto q0 = sim::home_joints();
  for (auto& q : q0) q += options.init_noise * rng.normal();
  sim::SimState state = sim::initial_state(scene, q0);

  RolloutResult result;
  result.trajectory.id = "rollout";
  result.trajectory.scene = scene;
  result.trajectory.source = "rollout";
  result.trajectory.seed = seed;
  InputQueue queue(c.queue_length);
  constexpr double kLimit = std::numbers::pi;
  for (std::size_t k = 0; k < steps; ++k) {
    auto frame = demo::capture_frame(state, scene);
    queue.push({dcae::encode(dcae_model, frame.image), std::vector<double>(frame.joints.begin(), frame.joints.end()), k});
    result.trajectory.frames.push_back(std::move(frame));
    auto pred = predict_step(rnn_model, queue);
    bool clamped = false;
    for (auto& v : pred.joints) {
      if (!std::isfinite(v)) throw EvaluationFailure("rollout: non-finite joint prediction at step " + std::to_string(k));
      if (v < -kLimit || v > kLimit) {
        v = std::clamp(v, -kLimit, kLimit);
        clamped = true;
      }
    }
    if (clamped) ++result.clamped_predictions;
    for (std::size_t t = 0; t < c.ticks_per_step; ++t) state = sim::step(state, pred.joints, options.dt, scene);
  }
  result.trajectory.frames.push_back(demo::capture_frame(state, scene));
  result.report = sim::success(result.trajectory, scene);
  return result;
}

}  // namespace lfd::rnn
