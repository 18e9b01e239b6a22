#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <vector>

#include "lfd/tensor.hpp"

namespace lfd::nn {

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode gradient tape.
///
/// Nodes are appended in evaluation order by the ops in ops.hpp. A node is
/// either a constant, a parameter bound to an external Tensor (its gradient
/// is accumulated into that tensor's grad slot by backward()), or the result
/// of an op carrying a closure that pushes its output gradient to its inputs.
/// The tape is rebuilt for every forward pass.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Var<T> constant(Tensor<T> value);
  /// Constant read in place; the tensor must outlive the tape.
  Var<T> constant_ref(const Tensor<T>& value);
  /// The tensor must outlive the tape; its value is read in place.
  Var<T> parameter(Tensor<T>& param);
  /// Records an op output; it requires a gradient iff any input does.
  Var<T> record(Tensor<T> value, std::initializer_list<std::size_t> inputs, BackwardFn fn);

  const Tensor<T>& value(std::size_t id) const;
  /// Gradient buffer of a node, allocated zeroed on first use.
  std::span<T> grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }
  /// False for constants and for op outputs that depend only on constants.
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Propagates d(loss)/d(node) to every node recorded before the loss and
  /// accumulates into the bound parameters. Intermediate gradients are reset
  /// at the start of each call; parameter gradients are not.
  void backward(Var<T> loss);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* ref = nullptr;
    Tensor<T>* param = nullptr;
    std::vector<T> grad;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace lfd::nn
