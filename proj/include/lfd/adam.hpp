#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lfd/tensor.hpp"

namespace lfd::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step_count = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  AdamState() = default;
  explicit AdamState(AdamConfig c) : config(c) {}
};

/// One bias-corrected Adam update using the gradients held in each
/// parameter's grad slot. Moments are allocated on the first call; later
/// calls must pass parameters of the same count and sizes.
template <typename T>
void adam_step(std::span<Tensor<T>* const> params, AdamState<T>& state);

}  // namespace lfd::nn
