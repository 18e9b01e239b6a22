#pragma once

#include <cstddef>
#include <utility>

#include "lfd/ops.hpp"

namespace lfd::nn {

enum class Gate : std::size_t { input = 0, forget = 1, candidate = 2, output = 3 };

/// Weights of one LSTM cell. The four gate blocks are stacked row-wise in
/// `weight` [4H, I + H] and `bias` [4H] in the order input, forget,
/// candidate, output; columns [0, I) act on x and [I, I + H) on h.
template <typename T>
struct LstmCellParams {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  Tensor<T> weight;
  Tensor<T> bias;

  LstmCellParams() = default;
  LstmCellParams(std::size_t input, std::size_t hidden);

  T& w(Gate g, std::size_t row, std::size_t col);
  T w(Gate g, std::size_t row, std::size_t col) const;
  T& b(Gate g, std::size_t row);
  T b(Gate g, std::size_t row) const;

  void validate() const;
};

/// Single unbatched cell step on 1-d tensors; returns (h_next, c_next).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell_step(LstmCellParams<T>& params, const Tensor<T>& x, const Tensor<T>& h,
                                               const Tensor<T>& c);

}  // namespace lfd::nn
