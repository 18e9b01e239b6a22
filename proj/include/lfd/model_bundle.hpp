#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "lfd/tensor.hpp"

namespace lfd::store {

struct ParamBlock {
  std::string name;
  nn::Tensor<float> tensor;

  bool operator==(const ParamBlock&) const = default;
};

/// A trained or freshly initialized network: architecture descriptor (the
/// full config, every hyperparameter included), named parameter blocks in a
/// fixed order, and training metadata.
struct ModelBundle {
  std::string kind;
  nlohmann::json architecture = nlohmann::json::object();
  std::vector<ParamBlock> blocks;
  nlohmann::json training = nlohmann::json::object();

  bool has_block(const std::string& name) const;
  nn::Tensor<float>& block(const std::string& name);
  const nn::Tensor<float>& block(const std::string& name) const;
  void add_block(std::string name, nn::Tensor<float> tensor);
  std::size_t parameter_count() const;

  bool operator==(const ModelBundle&) const = default;
};

}  // namespace lfd::store
