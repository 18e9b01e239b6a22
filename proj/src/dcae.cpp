#include "lfd/dcae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lfd/errors.hpp"

namespace lfd::dcae {

using nn::LayerSpec;
using nn::Mode;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

void DcaeConfig::validate() const {
  if (channels == 0 || height == 0 || width == 0) throw ValidationError("dcae: image dimensions must be positive");
  if (conv_filters.empty()) throw ValidationError("dcae: at least one conv layer is required");
  if (fc_sizes.empty()) throw ValidationError("dcae: at least one fully-connected layer is required");
  if (std::any_of(conv_filters.begin(), conv_filters.end(), [](auto f) { return f == 0; }) ||
      std::any_of(fc_sizes.begin(), fc_sizes.end(), [](auto f) { return f == 0; }))
    throw ValidationError("dcae: layer sizes must be positive");
  if (kernel < 1 || stride < 1) throw ValidationError("dcae: kernel and stride must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dcae: dropout must lie in [0, 1)");
  if (epochs == 0 || batch_size == 0) throw ValidationError("dcae: epochs and batch size must be positive");
  std::size_t total = 1;
  for (std::size_t i = 0; i < conv_filters.size(); ++i) total *= stride;
  if (height % total != 0 || width % total != 0)
    throw ValidationError("dcae: image " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not divisible by the total encoder stride " + std::to_string(total));
}

void to_json(nlohmann::json& j, const DcaeConfig& c) {
  j = nlohmann::json{{"channels", c.channels},
                     {"height", c.height},
                     {"width", c.width},
                     {"conv_filters", c.conv_filters},
                     {"fc_sizes", c.fc_sizes},
                     {"kernel", c.kernel},
                     {"stride", c.stride},
                     {"padding", c.padding},
                     {"dropout", c.dropout},
                     {"dropout_placement", "after each encoder activation"},
                     {"negative_slope", c.negative_slope},
                     {"output_activation", "sigmoid"},
                     {"code_activation", "linear"},
                     {"init", "uniform +-sqrt(6/(fan_in+fan_out)), zero bias"},
                     {"loss", "mse"},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"adam",
                      {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}}};
}

void from_json(const nlohmann::json& j, DcaeConfig& c) {
  DcaeConfig d;
  c.channels = j.value("channels", d.channels);
  c.height = j.value("height", d.height);
  c.width = j.value("width", d.width);
  c.conv_filters = j.value("conv_filters", d.conv_filters);
  c.fc_sizes = j.value("fc_sizes", d.fc_sizes);
  c.kernel = j.value("kernel", d.kernel);
  c.stride = j.value("stride", d.stride);
  c.padding = j.value("padding", d.padding);
  c.dropout = j.value("dropout", d.dropout);
  c.negative_slope = j.value("negative_slope", d.negative_slope);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.adam = d.adam;
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    c.adam.lr = a.value("lr", d.adam.lr);
    c.adam.beta1 = a.value("beta1", d.adam.beta1);
    c.adam.beta2 = a.value("beta2", d.adam.beta2);
    c.adam.epsilon = a.value("epsilon", d.adam.epsilon);
  }
}

DcaeLayers make_layers(const DcaeConfig& c) {
  c.validate();
  DcaeLayers net;
  const nn::ConvGeom geom{c.kernel, c.stride, c.padding, 0};

  // spatial sizes at each encoder stage, used to pick deconv output padding
  std::vector<std::size_t> heights{c.height}, widths{c.width};
  std::size_t ch = c.channels;
  for (auto f : c.conv_filters) {
    net.encoder.push_back(LayerSpec::make_conv(ch, f, geom));
    net.encoder.push_back(LayerSpec::make_leaky_relu(c.negative_slope));
    net.encoder.push_back(LayerSpec::make_dropout(c.dropout));
    heights.push_back(nn::conv_out_size(heights.back(), geom));
    widths.push_back(nn::conv_out_size(widths.back(), geom));
    ch = f;
  }
  const Shape bottleneck{ch, heights.back(), widths.back()};
  net.encoder.push_back(LayerSpec::make_flatten());
  std::size_t width = nn::shape_product(bottleneck);
  for (std::size_t i = 0; i < c.fc_sizes.size(); ++i) {
    net.encoder.push_back(LayerSpec::make_dense(width, c.fc_sizes[i]));
    if (i + 1 < c.fc_sizes.size()) {
      net.encoder.push_back(LayerSpec::make_leaky_relu(c.negative_slope));
      net.encoder.push_back(LayerSpec::make_dropout(c.dropout));
    }
    width = c.fc_sizes[i];
  }

  for (std::size_t i = c.fc_sizes.size(); i-- > 0;) {
    const std::size_t out = i > 0 ? c.fc_sizes[i - 1] : nn::shape_product(bottleneck);
    net.decoder.push_back(LayerSpec::make_dense(c.fc_sizes[i], out));
    net.decoder.push_back(LayerSpec::make_leaky_relu(c.negative_slope));
  }
  net.decoder.push_back(LayerSpec::make_reshape(bottleneck));
  for (std::size_t i = c.conv_filters.size(); i-- > 0;) {
    const std::size_t out = i > 0 ? c.conv_filters[i - 1] : c.channels;
    nn::ConvGeom g = geom;
    g.output_padding = nn::restoring_output_padding(heights[i], geom);
    if (g.output_padding != nn::restoring_output_padding(widths[i], geom))
      throw ValidationError("dcae: height and width need the same deconv output padding");
    net.decoder.push_back(LayerSpec::make_deconv(c.conv_filters[i], out, g));
    net.decoder.push_back(i > 0 ? LayerSpec::make_leaky_relu(c.negative_slope) : LayerSpec::make_sigmoid());
  }
  check_mirror(net);
  return net;
}

void check_mirror(const DcaeLayers& layers) {
  std::vector<const LayerSpec*> enc, dec;
  for (const auto& l : layers.encoder)
    if (l.has_params()) enc.push_back(&l);
  for (const auto& l : layers.decoder)
    if (l.has_params()) dec.push_back(&l);
  if (enc.size() != dec.size()) throw ValidationError("dcae: encoder and decoder have different depths");
  for (std::size_t i = 0; i < enc.size(); ++i) {
    const LayerSpec& e = *enc[i];
    const LayerSpec& d = *dec[dec.size() - 1 - i];
    const bool kinds_ok = (e.kind == nn::LayerKind::dense && d.kind == nn::LayerKind::dense) ||
                          (e.kind == nn::LayerKind::conv2d && d.kind == nn::LayerKind::deconv2d);
    const bool geom_ok = e.kind == nn::LayerKind::dense ||
                         (e.geom.kernel == d.geom.kernel && e.geom.stride == d.geom.stride &&
                          e.geom.padding == d.geom.padding);
    if (!kinds_ok || !geom_ok || e.in != d.out || e.out != d.in)
      throw ValidationError("dcae: decoder layer " + d.describe() + " does not mirror encoder layer " + e.describe());
  }
}

namespace {

std::string param_name(const char* stack, std::size_t index, bool bias) {
  return std::string(stack) + "." + std::to_string(index) + (bias ? ".bias" : ".weight");
}

// Records one stack on the tape. `bind` maps a parameter tensor to a Var.
template <typename Bind>
Var<float> run_stack(const std::vector<LayerSpec>& stack, const char* prefix, Bind&& bind, Var<float> x, Mode mode,
                     Rng& rng) {
  for (std::size_t i = 0; i < stack.size(); ++i) {
    std::vector<Var<float>> params;
    if (stack[i].has_params()) {
      params.push_back(bind(param_name(prefix, i, false)));
      params.push_back(bind(param_name(prefix, i, true)));
    }
    x = nn::layer_forward<float>(stack[i], params, x, mode, rng);
  }
  return x;
}

void check_image(const DcaeConfig& c, const Image& img) {
  if (img.shape() != c.image_shape())
    throw nn::ShapeError("dcae: image shape " + nn::shape_string(img.shape()) + " does not match model input " +
                         nn::shape_string(c.image_shape()));
}

Tensor<float> stack_images(std::span<const Image> images, std::span<const std::size_t> idx, const DcaeConfig& c) {
  const std::size_t per = c.channels * c.height * c.width;
  Tensor<float> batch({idx.size(), c.channels, c.height, c.width});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Image& img = images[idx[i]];
    check_image(c, img);
    std::copy(img.data().begin(), img.data().end(), batch.data().begin() + i * per);
  }
  return batch;
}

struct EvalNet {
  DcaeConfig config;
  DcaeLayers layers;
};

EvalNet eval_net(const store::ModelBundle& model) {
  EvalNet n{config_of(model), {}};
  n.layers = make_layers(n.config);
  return n;
}

}  // namespace

store::ModelBundle build_dcae(const DcaeConfig& config, std::uint64_t seed) {
  const auto layers = make_layers(config);
  store::ModelBundle m;
  m.kind = "dcae";
  m.architecture = {{"config", config}, {"encoder", layers.encoder}, {"decoder", layers.decoder}};
  Rng rng(seed);
  auto add_stack = [&](const std::vector<LayerSpec>& stack, const char* prefix) {
    for (std::size_t i = 0; i < stack.size(); ++i) {
      if (!stack[i].has_params()) continue;
      auto params = nn::init_layer_params<float>(stack[i], rng);
      m.add_block(param_name(prefix, i, false), std::move(params[0]));
      m.add_block(param_name(prefix, i, true), std::move(params[1]));
    }
  };
  add_stack(layers.encoder, "encoder");
  add_stack(layers.decoder, "decoder");
  m.training = {{"init_seed", seed}};
  return m;
}

DcaeConfig config_of(const store::ModelBundle& model) {
  if (model.kind != "dcae") throw ValidationError("expected a dcae model, got '" + model.kind + "'");
  return model.architecture.at("config").get<DcaeConfig>();
}

void check_model(const store::ModelBundle& model) {
  DcaeConfig config;
  try {
    config = config_of(model);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("dcae descriptor: ") + e.what());
  }
  const auto layers = make_layers(config);
  std::vector<std::pair<std::string, Shape>> expected;
  auto collect = [&](const std::vector<LayerSpec>& stack, const char* prefix) {
    for (std::size_t i = 0; i < stack.size(); ++i) {
      if (!stack[i].has_params()) continue;
      const auto shapes = stack[i].param_shapes();
      expected.emplace_back(param_name(prefix, i, false), shapes[0]);
      expected.emplace_back(param_name(prefix, i, true), shapes[1]);
    }
  };
  collect(layers.encoder, "encoder");
  collect(layers.decoder, "decoder");
  if (expected.size() != model.blocks.size())
    throw ValidationError("dcae: descriptor implies " + std::to_string(expected.size()) + " parameter blocks, model has " +
                          std::to_string(model.blocks.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& b = model.blocks[i];
    if (b.name != expected[i].first || b.tensor.shape() != expected[i].second)
      throw ValidationError("dcae: block '" + b.name + "' " + nn::shape_string(b.tensor.shape()) + " does not match '" +
                            expected[i].first + "' " + nn::shape_string(expected[i].second));
  }
}

DcaeTrainResult train_dcae(store::ModelBundle model, std::span<const Image> images, const DcaeConfig& config,
                           std::uint64_t seed) {
  if (images.empty()) throw ValidationError("train_dcae: empty image set");
  const auto layers = make_layers(config);
  if (config_of(model).image_shape() != config.image_shape())
    throw ValidationError("train_dcae: config image shape differs from the model's");
  for (const auto& img : images) {
    check_image(config, img);
    for (float v : img.data())
      if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("train_dcae: image values must lie in [0, 1]");
  }

  Rng shuffle_rng(derive_seed(seed, 0));
  Rng dropout_rng(derive_seed(seed, 1));
  std::vector<Tensor<float>*> params;
  for (auto& b : model.blocks) params.push_back(&b.tensor);
  nn::AdamState<float> adam(config.adam);

  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  DcaeTrainResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double epoch_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      std::span<const std::size_t> idx(order.data() + start, count);
      Tensor<float> batch = stack_images(images, idx, config);

      Tape<float> tape;
      auto bind = [&](const std::string& name) { return tape.parameter(model.block(name)); };
      auto x = tape.constant_ref(batch);
      auto code = run_stack(layers.encoder, "encoder", bind, x, Mode::train, dropout_rng);
      auto recon = run_stack(layers.decoder, "decoder", bind, code, Mode::train, dropout_rng);
      auto loss = nn::mse(recon, x);
      const double value = loss.value()[0];
      if (!std::isfinite(value))
        throw TrainingAbort("train_dcae: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      for (auto* p : params) p->zero_grad();
      tape.backward(loss);
      nn::adam_step<float>(params, adam);
      epoch_sum += value * static_cast<double>(count);
    }
    result.loss_history.push_back(epoch_sum / static_cast<double>(images.size()));
  }
  for (auto* p : params) p->drop_grad();
  model.training["train_seed"] = seed;
  model.training["epochs"] = config.epochs;
  model.training["batch_size"] = config.batch_size;
  model.training["images"] = images.size();
  model.training["final_loss"] = result.loss_history.back();
  model.architecture["config"] = config;
  result.model = std::move(model);
  return result;
}

std::vector<FeatureVec> encode_batch(const store::ModelBundle& model, std::span<const Image> images) {
  const auto net = eval_net(model);
  const std::size_t dim = net.config.feature_dim();
  std::vector<FeatureVec> out;
  out.reserve(images.size());
  Rng unused(0);
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, images.size() - start);
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), start);
    Tensor<float> batch = stack_images(images, idx, net.config);
    Tape<float> tape;
    auto bind = [&](const std::string& name) { return tape.constant_ref(model.block(name)); };
    auto code = run_stack(net.layers.encoder, "encoder", bind, tape.constant_ref(batch), Mode::eval, unused);
    const auto& v = code.value();
    for (std::size_t i = 0; i < count; ++i) out.emplace_back(v.data().begin() + i * dim, v.data().begin() + (i + 1) * dim);
  }
  return out;
}

FeatureVec encode(const store::ModelBundle& model, const Image& image) {
  return encode_batch(model, std::span<const Image>(&image, 1)).front();
}

Image decode(const store::ModelBundle& model, const FeatureVec& feature) {
  const auto net = eval_net(model);
  if (feature.size() != net.config.feature_dim())
    throw nn::ShapeError("dcae: feature length " + std::to_string(feature.size()) + " does not match code size " +
                         std::to_string(net.config.feature_dim()));
  Tape<float> tape;
  Rng unused(0);
  auto bind = [&](const std::string& name) { return tape.constant_ref(model.block(name)); };
  auto code = tape.constant(Tensor<float>({1, feature.size()}, feature));
  auto out = run_stack(net.layers.decoder, "decoder", bind, code, Mode::eval, unused);
  return out.value().reshaped(net.config.image_shape());
}

double recon_error(const store::ModelBundle& model, const Image& image) {
  const Image recon = decode(model, encode(model, image));
  double s = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double d = static_cast<double>(recon[i]) - static_cast<double>(image[i]);
    s += d * d;
  }
  return s / static_cast<double>(image.size());
}

double mean_recon_error(const store::ModelBundle& model, std::span<const Image> images) {
  if (images.empty()) throw ValidationError("mean_recon_error: empty image set");
  const auto net = eval_net(model);
  const auto features = encode_batch(model, images);
  double total = 0.0;
  Rng unused(0);
  constexpr std::size_t kChunk = 64;
  const std::size_t dim = net.config.feature_dim();
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, images.size() - start);
    Tensor<float> codes({count, dim});
    for (std::size_t i = 0; i < count; ++i)
      std::copy(features[start + i].begin(), features[start + i].end(), codes.data().begin() + i * dim);
    Tape<float> tape;
    auto bind = [&](const std::string& name) { return tape.constant_ref(model.block(name)); };
    auto out = run_stack(net.layers.decoder, "decoder", bind, tape.constant_ref(codes), Mode::eval, unused);
    const auto& v = out.value();
    const std::size_t per = images[0].size();
    for (std::size_t i = 0; i < count; ++i) {
      double s = 0.0;
      const Image& img = images[start + i];
      for (std::size_t k = 0; k < per; ++k) {
        const double d = static_cast<double>(v[i * per + k]) - static_cast<double>(img[k]);
        s += d * d;
      }
      total += s / static_cast<double>(per);
    }
  }
  return total / static_cast<double>(images.size());
}

}  // namespace lfd::dcae
