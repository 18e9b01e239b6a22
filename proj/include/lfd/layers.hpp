#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "lfd/ops.hpp"

namespace lfd::nn {

enum class LayerKind { dense, conv2d, deconv2d, leaky_relu, dropout, sigmoid, flatten, reshape };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// One layer of a feed-forward stack. Only the fields relevant to `kind`
/// are meaningful:
///   dense       in -> out features
///   conv2d      in channels -> out filters, geom
///   deconv2d    in channels -> out filters, geom (with output_padding)
///   leaky_relu  slope
///   dropout     drop probability in [0, 1)
///   reshape     target per-sample shape
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t in = 0;
  std::size_t out = 0;
  ConvGeom geom;
  double slope = 0.1;
  double drop = 0.0;
  Shape target;

  static LayerSpec make_dense(std::size_t in, std::size_t out);
  static LayerSpec make_conv(std::size_t in, std::size_t filters, ConvGeom geom);
  static LayerSpec make_deconv(std::size_t in, std::size_t filters, ConvGeom geom);
  static LayerSpec make_leaky_relu(double slope);
  static LayerSpec make_dropout(double p);
  static LayerSpec make_sigmoid();
  static LayerSpec make_flatten();
  static LayerSpec make_reshape(Shape target);

  /// Throws ShapeError when the kind-specific invariants do not hold.
  void validate() const;
  bool has_params() const;
  /// Shapes of [weight, bias] for parametric layers, empty otherwise.
  std::vector<Shape> param_shapes() const;
  std::size_t param_count() const;
  /// Per-sample output shape (no batch dimension).
  Shape output_shape(const Shape& sample_in) const;
  std::string describe() const;

  bool operator==(const LayerSpec&) const = default;
};

void to_json(nlohmann::json& j, const LayerSpec& spec);
void from_json(const nlohmann::json& j, LayerSpec& spec);

/// Applies one layer to a batched input. `params` holds [weight, bias] for
/// parametric layers and is empty otherwise. Dropout draws from `rng` only
/// in train mode.
template <typename T>
Var<T> layer_forward(const LayerSpec& spec, std::span<const Var<T>> params, Var<T> input, Mode mode, Rng& rng);

/// Scaled-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
template <typename T>
std::vector<Tensor<T>> init_layer_params(const LayerSpec& spec, Rng& rng);

}  // namespace lfd::nn
