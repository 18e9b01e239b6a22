#include "lfd/layers.hpp"

#include <cmath>
#include <sstream>

namespace lfd::nn {

namespace {
const char* const kKindNames[] = {"dense", "conv2d", "deconv2d", "leaky_relu",
                                  "dropout", "sigmoid", "flatten", "reshape"};
}

std::string to_string(LayerKind kind) { return kKindNames[static_cast<int>(kind)]; }

LayerKind layer_kind_from_string(const std::string& name) {
  for (int i = 0; i < 8; ++i)
    if (name == kKindNames[i]) return static_cast<LayerKind>(i);
  throw ShapeError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::make_dense(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in = in;
  s.out = out;
  return s;
}

LayerSpec LayerSpec::make_conv(std::size_t in, std::size_t filters, ConvGeom geom) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in = in;
  s.out = filters;
  s.geom = geom;
  return s;
}

LayerSpec LayerSpec::make_deconv(std::size_t in, std::size_t filters, ConvGeom geom) {
  LayerSpec s = make_conv(in, filters, geom);
  s.kind = LayerKind::deconv2d;
  return s;
}

LayerSpec LayerSpec::make_leaky_relu(double slope) {
  LayerSpec s;
  s.kind = LayerKind::leaky_relu;
  s.slope = slope;
  return s;
}

LayerSpec LayerSpec::make_dropout(double p) {
  LayerSpec s;
  s.kind = LayerKind::dropout;
  s.drop = p;
  return s;
}

LayerSpec LayerSpec::make_sigmoid() {
  LayerSpec s;
  s.kind = LayerKind::sigmoid;
  return s;
}

LayerSpec LayerSpec::make_flatten() {
  LayerSpec s;
  s.kind = LayerKind::flatten;
  return s;
}

LayerSpec LayerSpec::make_reshape(Shape target) {
  LayerSpec s;
  s.kind = LayerKind::reshape;
  s.target = std::move(target);
  return s;
}

void LayerSpec::validate() const {
  switch (kind) {
    case LayerKind::dense:
      if (in == 0 || out == 0) throw ShapeError("dense layer needs positive in/out sizes");
      break;
    case LayerKind::conv2d:
    case LayerKind::deconv2d:
      if (in == 0 || out == 0) throw ShapeError(to_string(kind) + " needs positive channel and filter counts");
      if (geom.kernel < 1 || geom.stride < 1) throw ShapeError(to_string(kind) + " needs kernel >= 1 and stride >= 1");
      if (geom.output_padding >= geom.stride)
        throw ShapeError(to_string(kind) + " output_padding must be smaller than stride");
      break;
    case LayerKind::dropout:
      if (!(drop >= 0.0 && drop < 1.0)) throw ShapeError("dropout probability must lie in [0, 1)");
      break;
    case LayerKind::reshape:
      if (target.empty()) throw ShapeError("reshape needs a target shape");
      break;
    default:
      break;
  }
}

bool LayerSpec::has_params() const {
  return kind == LayerKind::dense || kind == LayerKind::conv2d || kind == LayerKind::deconv2d;
}

std::vector<Shape> LayerSpec::param_shapes() const {
  const std::size_t k = geom.kernel;
  switch (kind) {
    case LayerKind::dense:
      return {{out, in}, {out}};
    case LayerKind::conv2d:
      return {{out, in, k, k}, {out}};
    case LayerKind::deconv2d:
      return {{in, out, k, k}, {out}};
    default:
      return {};
  }
}

std::size_t LayerSpec::param_count() const {
  std::size_t n = 0;
  for (const auto& s : param_shapes()) n += shape_product(s);
  return n;
}

Shape LayerSpec::output_shape(const Shape& in_shape) const {
  validate();
  auto fail = [&] {
    throw ShapeError("layer " + describe() + " cannot accept per-sample shape " + shape_string(in_shape));
  };
  switch (kind) {
    case LayerKind::dense:
      if (in_shape != Shape{in}) fail();
      return {out};
    case LayerKind::conv2d:
      if (in_shape.size() != 3 || in_shape[0] != in) fail();
      return {out, conv_out_size(in_shape[1], geom), conv_out_size(in_shape[2], geom)};
    case LayerKind::deconv2d:
      if (in_shape.size() != 3 || in_shape[0] != in) fail();
      return {out, deconv_out_size(in_shape[1], geom), deconv_out_size(in_shape[2], geom)};
    case LayerKind::flatten:
      return {shape_product(in_shape)};
    case LayerKind::reshape:
      if (shape_product(target) != shape_product(in_shape)) fail();
      return target;
    default:
      return in_shape;
  }
}

std::string LayerSpec::describe() const {
  std::ostringstream os;
  os << to_string(kind);
  switch (kind) {
    case LayerKind::dense:
      os << '(' << in << "->" << out << ')';
      break;
    case LayerKind::conv2d:
    case LayerKind::deconv2d:
      os << '(' << in << "->" << out << ", k=" << geom.kernel << ", s=" << geom.stride << ", p=" << geom.padding;
      if (kind == LayerKind::deconv2d) os << ", op=" << geom.output_padding;
      os << ')';
      break;
    case LayerKind::leaky_relu:
      os << '(' << slope << ')';
      break;
    case LayerKind::dropout:
      os << '(' << drop << ')';
      break;
    case LayerKind::reshape:
      os << shape_string(target);
      break;
    default:
      break;
  }
  return os.str();
}

void to_json(nlohmann::json& j, const LayerSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)}};
  switch (s.kind) {
    case LayerKind::dense:
      j["in"] = s.in;
      j["out"] = s.out;
      break;
    case LayerKind::conv2d:
    case LayerKind::deconv2d:
      j["in"] = s.in;
      j["out"] = s.out;
      j["kernel"] = s.geom.kernel;
      j["stride"] = s.geom.stride;
      j["padding"] = s.geom.padding;
      j["output_padding"] = s.geom.output_padding;
      break;
    case LayerKind::leaky_relu:
      j["slope"] = s.slope;
      break;
    case LayerKind::dropout:
      j["p"] = s.drop;
      break;
    case LayerKind::reshape:
      j["shape"] = s.target;
      break;
    default:
      break;
  }
}

void from_json(const nlohmann::json& j, LayerSpec& s) {
  s = LayerSpec{};
  s.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  switch (s.kind) {
    case LayerKind::dense:
      s.in = j.at("in");
      s.out = j.at("out");
      break;
    case LayerKind::conv2d:
    case LayerKind::deconv2d:
      s.in = j.at("in");
      s.out = j.at("out");
      s.geom.kernel = j.at("kernel");
      s.geom.stride = j.at("stride");
      s.geom.padding = j.at("padding");
      s.geom.output_padding = j.at("output_padding");
      break;
    case LayerKind::leaky_relu:
      s.slope = j.at("slope");
      break;
    case LayerKind::dropout:
      s.drop = j.at("p");
      break;
    case LayerKind::reshape:
      s.target = j.at("shape").get<Shape>();
      break;
    default:
      break;
  }
  s.validate();
}

template <typename T>
Var<T> layer_forward(const LayerSpec& spec, std::span<const Var<T>> params, Var<T> input, Mode mode, Rng& rng) {
  spec.validate();
  const Shape& xs = input.shape();
  if (xs.size() < 2) throw ShapeError("layer " + spec.describe() + " expects a batched input, got " + shape_string(xs));
  const Shape sample(xs.begin() + 1, xs.end());
  const Shape out_sample = spec.output_shape(sample);
  if (params.size() != (spec.has_params() ? 2u : 0u))
    throw ShapeError("layer " + spec.describe() + " given " + std::to_string(params.size()) + " parameter tensors");
  if (spec.has_params()) {
    const auto shapes = spec.param_shapes();
    for (std::size_t i = 0; i < 2; ++i)
      if (params[i].shape() != shapes[i])
        throw ShapeError("layer " + spec.describe() + " parameter " + std::to_string(i) + " has shape " +
                         shape_string(params[i].shape()) + ", expected " + shape_string(shapes[i]));
  }

  switch (spec.kind) {
    case LayerKind::dense:
      return dense(input, params[0], params[1]);
    case LayerKind::conv2d:
      return conv2d(input, params[0], params[1], spec.geom);
    case LayerKind::deconv2d:
      return deconv2d(input, params[0], params[1], spec.geom);
    case LayerKind::leaky_relu:
      return leaky_relu(input, static_cast<T>(spec.slope));
    case LayerKind::dropout:
      return dropout(input, spec.drop, mode, rng);
    case LayerKind::sigmoid:
      return sigmoid(input);
    case LayerKind::flatten:
    case LayerKind::reshape: {
      Shape full{xs[0]};
      full.insert(full.end(), out_sample.begin(), out_sample.end());
      return reshape(input, std::move(full));
    }
  }
  throw ShapeError("unhandled layer kind");
}

template <typename T>
std::vector<Tensor<T>> init_layer_params(const LayerSpec& spec, Rng& rng) {
  spec.validate();
  std::vector<Tensor<T>> out;
  if (!spec.has_params()) return out;
  const auto shapes = spec.param_shapes();
  const std::size_t k2 = spec.kind == LayerKind::dense ? 1 : spec.geom.kernel * spec.geom.kernel;
  const double fan_in = static_cast<double>(spec.in * k2);
  const double fan_out = static_cast<double>(spec.out * k2);
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor<T> w(shapes[0]);
  for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-limit, limit));
  out.push_back(std::move(w));
  out.emplace_back(shapes[1]);
  return out;
}

template Var<float> layer_forward<float>(const LayerSpec&, std::span<const Var<float>>, Var<float>, Mode, Rng&);
template Var<double> layer_forward<double>(const LayerSpec&, std::span<const Var<double>>, Var<double>, Mode, Rng&);
template std::vector<Tensor<float>> init_layer_params<float>(const LayerSpec&, Rng&);
template std::vector<Tensor<double>> init_layer_params<double>(const LayerSpec&, Rng&);

}  // namespace lfd::nn
