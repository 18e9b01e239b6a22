#include "lfd/lstm.hpp"

#include <string>

namespace lfd::nn {

template <typename T>
LstmCellParams<T>::LstmCellParams(std::size_t input, std::size_t hidden)
    : input_size(input), hidden_size(hidden) {
  if (input == 0 || hidden == 0) throw ShapeError("LSTM cell needs positive input and hidden sizes");
  weight = Tensor<T>({4 * hidden, input + hidden});
  bias = Tensor<T>({4 * hidden});
}

template <typename T>
T& LstmCellParams<T>::w(Gate g, std::size_t row, std::size_t col) {
  return weight[(static_cast<std::size_t>(g) * hidden_size + row) * (input_size + hidden_size) + col];
}

template <typename T>
T LstmCellParams<T>::w(Gate g, std::size_t row, std::size_t col) const {
  return weight[(static_cast<std::size_t>(g) * hidden_size + row) * (input_size + hidden_size) + col];
}

template <typename T>
T& LstmCellParams<T>::b(Gate g, std::size_t row) {
  return bias[static_cast<std::size_t>(g) * hidden_size + row];
}

template <typename T>
T LstmCellParams<T>::b(Gate g, std::size_t row) const {
  return bias[static_cast<std::size_t>(g) * hidden_size + row];
}

template <typename T>
void LstmCellParams<T>::validate() const {
  if (weight.shape() != Shape{4 * hidden_size, input_size + hidden_size} || bias.shape() != Shape{4 * hidden_size})
    throw ShapeError("LSTM cell parameters " + shape_string(weight.shape()) + "/" + shape_string(bias.shape()) +
                     " inconsistent with input " + std::to_string(input_size) + ", hidden " +
                     std::to_string(hidden_size));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> lstm_cell_step(LstmCellParams<T>& params, const Tensor<T>& x, const Tensor<T>& h,
                                               const Tensor<T>& c) {
  params.validate();
  const std::size_t in = params.input_size, hid = params.hidden_size;
  if (x.size() != in || h.size() != hid || c.size() != hid)
    throw ShapeError("lstm_cell_step: x/h/c sizes " + std::to_string(x.size()) + "/" + std::to_string(h.size()) +
                     "/" + std::to_string(c.size()) + " do not match cell " + std::to_string(in) + "->" +
                     std::to_string(hid));
  Tape<T> tape;
  auto xv = tape.constant(x.reshaped({1, in}));
  auto hv = tape.constant(h.reshaped({1, hid}));
  auto cv = tape.constant(c.reshaped({1, hid}));
  auto out = lstm_cell(xv, hv, cv, tape.parameter(params.weight), tape.parameter(params.bias));
  const auto& v = out.value();
  std::vector<T> hn(v.data().begin(), v.data().begin() + hid);
  std::vector<T> cn(v.data().begin() + hid, v.data().end());
  return {Tensor<T>({hid}, std::move(hn)), Tensor<T>({hid}, std::move(cn))};
}

template struct LstmCellParams<float>;
template struct LstmCellParams<double>;
template std::pair<Tensor<float>, Tensor<float>> lstm_cell_step(LstmCellParams<float>&, const Tensor<float>&,
                                                                const Tensor<float>&, const Tensor<float>&);
template std::pair<Tensor<double>, Tensor<double>> lstm_cell_step(LstmCellParams<double>&, const Tensor<double>&,
                                                                  const Tensor<double>&, const Tensor<double>&);

}  // namespace lfd::nn
