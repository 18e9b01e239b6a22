#include "lfd/tape.hpp"

#include <algorithm>

namespace lfd::nn {

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant_ref(const Tensor<T>& value) {
  Node n;
  n.ref = &value;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::parameter(Tensor<T>& param) {
  Node n;
  n.ref = &param;
  n.param = &param;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<std::size_t> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t id) { return nodes_.at(id).requires_grad; });
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.ref ? *n.ref : n.value;
}

template <typename T>
std::span<T> Tape<T>::grad(std::size_t id) {
  Node& n = nodes_.at(id);
  const std::size_t len = n.ref ? n.ref->size() : n.value.size();
  if (n.grad.size() != len) n.grad.assign(len, T{0});
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (nodes_.empty()) throw TapeError("backward called on an empty tape (no forward pass recorded)");
  if (loss.tape != this || loss.id >= nodes_.size())
    throw TapeError("backward called with a loss node that is not on this tape");
  if (value(loss.id).size() != 1) throw TapeError("backward requires a scalar loss");

  for (auto& n : nodes_) n.grad.clear();
  grad(loss.id)[0] = T{1};

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      auto g = n.param->grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace lfd::nn
