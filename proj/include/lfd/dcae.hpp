#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

#include "lfd/adam.hpp"
#include "lfd/layers.hpp"
#include "lfd/model_bundle.hpp"

namespace lfd::dcae {

/// Image tensor [C, H, W] with values in [0, 1].
using Image = nn::Tensor<float>;
using FeatureVec = std::vector<float>;

struct DcaeConfig {
  std::size_t channels = 3;
  std::size_t height = 64;
  std::size_t width = 64;
  std::vector<std::size_t> conv_filters{32, 16};
  std::vector<std::size_t> fc_sizes{100, 10};
  std::size_t kernel = 5;
  std::size_t stride = 2;
  std::size_t padding = 2;
  double dropout = 0.4;
  double negative_slope = 0.1;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  nn::AdamConfig adam;

  std::size_t feature_dim() const { return fc_sizes.back(); }
  nn::Shape image_shape() const { return {channels, height, width}; }
  /// Throws ValidationError, e.g. when the image is not divisible by the
  /// total encoder stride.
  void validate() const;

  bool operator==(const DcaeConfig&) const = default;
};

void to_json(nlohmann::json& j, const DcaeConfig& c);
void from_json(const nlohmann::json& j, DcaeConfig& c);

/// Encoder: [conv, leaky_relu, dropout] per filter count, flatten, then
/// [dense, leaky_relu, dropout] per hidden FC size and a linear code layer.
/// Decoder: the mirror image with no dropout and a sigmoid output.
struct DcaeLayers {
  std::vector<nn::LayerSpec> encoder;
  std::vector<nn::LayerSpec> decoder;
};

DcaeLayers make_layers(const DcaeConfig& config);
/// Throws ValidationError unless every decoder parametric layer transposes
/// its encoder counterpart.
void check_mirror(const DcaeLayers& layers);

store::ModelBundle build_dcae(const DcaeConfig& config, std::uint64_t seed);
DcaeConfig config_of(const store::ModelBundle& model);
/// Throws ValidationError unless the blocks are exactly those the descriptor
/// implies, in order and with matching shapes.
void check_model(const store::ModelBundle& model);

struct DcaeTrainResult {
  store::ModelBundle model;
  std::vector<double> loss_history;
};

/// Adam on mean per-pixel reconstruction MSE, shuffled mini-batches, one
/// loss-history entry (sample-weighted mean train-mode MSE) per epoch.
DcaeTrainResult train_dcae(store::ModelBundle model, std::span<const Image> images, const DcaeConfig& config,
                           std::uint64_t seed);

FeatureVec encode(const store::ModelBundle& model, const Image& image);
std::vector<FeatureVec> encode_batch(const store::ModelBundle& model, std::span<const Image> images);
Image decode(const store::ModelBundle& model, const FeatureVec& feature);
/// Per-pixel MSE of decode(encode(image)) against image.
double recon_error(const store::ModelBundle& model, const Image& image);
/// Mean recon_error over a set.
double mean_recon_error(const store::ModelBundle& model, std::span<const Image> images);

}  // namespace lfd::dcae
