#include "lfd/model_bundle.hpp"

#include <algorithm>
#include <stdexcept>

namespace lfd::store {

bool ModelBundle::has_block(const std::string& name) const {
  return std::any_of(blocks.begin(), blocks.end(), [&](const ParamBlock& b) { return b.name == name; });
}

nn::Tensor<float>& ModelBundle::block(const std::string& name) {
  for (auto& b : blocks)
    if (b.name == name) return b.tensor;
  throw std::out_of_range("model bundle '" + kind + "' has no parameter block '" + name + "'");
}

const nn::Tensor<float>& ModelBundle::block(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return b.tensor;
  throw std::out_of_range("model bundle '" + kind + "' has no parameter block '" + name + "'");
}

void ModelBundle::add_block(std::string name, nn::Tensor<float> tensor) {
  if (has_block(name)) throw std::invalid_argument("duplicate parameter block '" + name + "'");
  blocks.push_back({std::move(name), std::move(tensor)});
}

std::size_t ModelBundle::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.tensor.size();
  return n;
}

}  // namespace lfd::store
